"""Benchmark hybrid systems with analytic derivatives.

CLI-facing identifiers: ``ball2d``, ``circle_drop``, ``aslip``.
"""

from .aslip import AslipParams, make_aslip
from .ball2d import BallParams, make_bouncing_ball
from .circle_drop import CircleParams, make_circle_drop

SYSTEM_NAMES = ("ball2d", "circle_drop", "aslip")


def make_system(name: str, **overrides):
    """Construct a benchmark system by its CLI identifier."""
    if name == "ball2d":
        return make_bouncing_ball(BallParams(**overrides))
    if name == "circle_drop":
        return make_circle_drop(CircleParams(**overrides))
    if name == "aslip":
        return make_aslip(AslipParams(**overrides))
    raise ValueError(f"unknown system {name!r}; choose from {SYSTEM_NAMES}")


__all__ = [
    "AslipParams",
    "BallParams",
    "CircleParams",
    "SYSTEM_NAMES",
    "make_aslip",
    "make_bouncing_ball",
    "make_circle_drop",
    "make_system",
]
