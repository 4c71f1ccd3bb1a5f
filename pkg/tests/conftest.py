"""Shared fixtures and helpers for the test suite."""

import math

import numpy as np
import pytest

from hybridkal.hybrid import GuardFn, HybridSystem, Mode, ResetFn, Transition


def make_ball_1d(alpha: float = 0.8, a_g: float = 9.8, sigma_g: float = 0.0) -> HybridSystem:
    """Vertical bouncing ball, state [y, v], guard y <= 0, reset v -> -alpha v."""

    def field(t, x):
        return np.array([x[1], -a_g])

    jac = np.array([[0.0, 1.0], [0.0, 0.0]])
    mode = Mode(field=field, jac_x=lambda t, x: jac, dim=2)

    guard = GuardFn(
        value=lambda t, x: x[0],
        grad_x=lambda t, x: np.array([1.0, 0.0]),
        grad_t=lambda t, x: 0.0,
        sigma_g=sigma_g,
    )
    reset = ResetFn(
        apply=lambda t, x, th: np.array([x[0], -alpha * x[1]]),
        jac_x=lambda t, x, th: np.array([[1.0, 0.0], [0.0, -alpha]]),
        jac_t=lambda t, x, th: np.zeros(2),
        jac_theta=lambda t, x, th: np.zeros((2, 0)),
    )
    return HybridSystem(modes=[mode], transitions=[Transition(0, 0, guard, reset)])


def ballistic_impact_time(y0: float, v0: float, a_g: float = 9.8) -> float:
    """Positive root of y0 + v0 t - a_g/2 t^2 = 0."""
    return (v0 + math.sqrt(v0 * v0 + 2.0 * a_g * y0)) / a_g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
