"""Discrete-time Kalman filtering for hybrid systems.

Between events the filter is a standard EKF: the mean follows the nonlinear
flow and the covariance follows the flow-map Jacobian.  When the *mean
estimate* reaches a guard inside a prediction step, the step is split around
the event and the covariance is mapped through it by the active variant:

* ``EKF``   -- reset Jacobian only,
* ``SKF``   -- saltation matrix,
* ``uaSKF`` -- saltation matrix plus the guard-offset and reset-parameter
  uncertainty terms declared on the system's guards and resets.

Event handling is driven by the filter's own mean reaching guards, never by
ground-truth impact times.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolationError, SingularInnovationError, ZenoSuspicionError
from .hybrid import (
    MAX_EVENTS_PER_WINDOW,
    TRANSVERSALITY_TOL,
    GuardFn,
    HybridSystem,
    ModeId,
    detect_event,
    flow,
    guard_rate,
)
from .saltation import (
    SaltationBundle,
    make_event_context,
    propagate_event_covariance,
    saltation_bundle,
)

INNOVATION_COND_MAX = 1e12


class FilterVariant(enum.Enum):
    """Which covariance map is applied at discrete transitions."""

    EKF = "EKF"
    SKF = "SKF"
    UASKF = "uaSKF"

    @classmethod
    def from_tag(cls, tag: str) -> "FilterVariant":
        for v in cls:
            if v.value == tag:
                return v
        raise ValueError(f"unknown filter variant {tag!r}")


@dataclass(frozen=True)
class GaussianBelief:
    """Mode, mean, covariance, and timestamp of a filter state."""

    mode: ModeId
    mean: np.ndarray
    cov: np.ndarray
    t: float

    def validate(self, sym_tol: float = 1e-10, eig_tol: float = -1e-8) -> None:
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean")
        if np.max(np.abs(self.cov - self.cov.T)) > sym_tol:
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(self.cov).min() < eig_tol:
            raise ValueError("covariance is not positive semi-definite")


@dataclass(frozen=True)
class MeasurementModel:
    """Per-mode linear measurement y = C x + v, v ~ N(0, V)."""

    C: Sequence[np.ndarray]
    V: Sequence[np.ndarray]


@dataclass(frozen=True)
class ProcessNoise:
    """Per-mode additive process covariance accumulated over one full step.

    ``W[mode]`` is the covariance added by a prediction of length ``delta``;
    partial steps scale it linearly, W_{dt} = (dt / delta) W.
    """

    W: Sequence[np.ndarray]
    delta: float

    def over(self, mode: ModeId, dt: float) -> np.ndarray:
        return (dt / self.delta) * np.asarray(self.W[mode])


def _sym(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def event_covariance(
    variant: FilterVariant,
    bundle: SaltationBundle,
    guard: GuardFn,
    sigma_theta: np.ndarray,
    cov: np.ndarray,
) -> np.ndarray:
    """Map a covariance through a transition under the given variant."""
    if variant is FilterVariant.EKF:
        return _sym(bundle.D_xR @ cov @ bundle.D_xR.T)
    if variant is FilterVariant.SKF:
        return propagate_event_covariance(bundle, cov, 0.0, None)
    return propagate_event_covariance(bundle, cov, guard.sigma_g**2, sigma_theta)


def _predict_smooth(
    system: HybridSystem,
    belief: GaussianBelief,
    dt: float,
    noise: ProcessNoise,
) -> GaussianBelief:
    mean, A = flow(system, belief.mode, belief.t, belief.mean, dt, want_jacobian=True)
    cov = _sym(A @ belief.cov @ A.T) + noise.over(belief.mode, dt)
    return GaussianBelief(mode=belief.mode, mean=mean, cov=cov, t=belief.t + dt)


def predict_smooth(
    system: HybridSystem,
    belief: GaussianBelief,
    dt: float,
    noise: ProcessNoise,
) -> GaussianBelief:
    """A-priori update over an event-free interval.

    Raises if the mean trajectory crosses a guard within dt; hybrid_predict
    handles that case.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if detect_event(system, belief.mode, belief.t, belief.mean, dt) is not None:
        raise ContractViolationError(
            "mean trajectory crosses a guard within dt; use hybrid_predict"
        )
    return _predict_smooth(system, belief, dt, noise)


def measurement_update(
    belief: GaussianBelief,
    y: np.ndarray,
    model: MeasurementModel,
) -> GaussianBelief:
    """Standard Kalman gain / mean / covariance update, symmetrized."""
    C = np.asarray(model.C[belief.mode], dtype=float)
    V = np.asarray(model.V[belief.mode], dtype=float)
    y = np.asarray(y, dtype=float)
    S = C @ belief.cov @ C.T + V
    if np.linalg.cond(S) > INNOVATION_COND_MAX:
        raise SingularInnovationError(
            f"innovation covariance condition number exceeds {INNOVATION_COND_MAX:.0e}"
        )
    K = np.linalg.solve(S.T, C @ belief.cov).T
    mean = belief.mean + K @ (y - C @ belief.mean)
    cov = _sym(belief.cov - K @ C @ belief.cov)
    return replace(belief, mean=mean, cov=cov)


def _apply_event(
    system: HybridSystem,
    belief: GaussianBelief,
    transition_index: int,
    variant: FilterVariant,
) -> GaussianBelief:
    tr = system.transitions[transition_index]
    ctx = make_event_context(system, transition_index, belief.t, belief.mean)
    bundle = saltation_bundle(ctx)
    cov = event_covariance(variant, bundle, tr.guard, tr.reset.sigma_theta, belief.cov)
    return GaussianBelief(mode=tr.to_mode, mean=ctx.x_post, cov=cov, t=belief.t)


def hybrid_predict(
    system: HybridSystem,
    belief: GaussianBelief,
    dt: float,
    noise: ProcessNoise,
    variant: FilterVariant,
    max_events: int = MAX_EVENTS_PER_WINDOW,
) -> GaussianBelief:
    """A-priori update that sub-steps around guard crossings of the mean.

    Each crossing splits the interval: smooth predict to the event, mean
    through the reset and covariance through the variant's event map, then
    smooth predict onward, iterating if further guards are reached.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t_end = belief.t + dt
    n_events = 0
    while True:
        remaining = t_end - belief.t
        if remaining <= 0:
            return belief
        ev = detect_event(system, belief.mode, belief.t, belief.mean, remaining)
        if ev is None:
            return _predict_smooth(system, belief, remaining, noise)
        k, t_star, _ = ev
        if t_star > belief.t:
            belief = _predict_smooth(system, belief, t_star - belief.t, noise)
        belief = _apply_event(system, belief, k, variant)
        n_events += 1
        if n_events > max_events:
            raise ZenoSuspicionError(
                f"more than {max_events} events in one prediction step at t={belief.t:.6g}"
            )


def posterior_guard_apply(
    system: HybridSystem,
    belief: GaussianBelief,
    variant: FilterVariant,
    max_events: int = MAX_EVENTS_PER_WINDOW,
) -> GaussianBelief:
    """Apply the discrete update when the posterior mean satisfies a guard.

    Fires only while the mean is moving deeper into the guard region
    (guard value non-positive and decreasing), which makes repeated
    application idempotent once the post-reset mean flows back out.
    """
    for _ in range(max_events):
        fired = False
        for k, tr in system.outgoing(belief.mode):
            if tr.guard.value(belief.t, belief.mean) <= 0.0 and \
                    guard_rate(system, belief.mode, tr, belief.t, belief.mean) < -TRANSVERSALITY_TOL:
                belief = _apply_event(system, belief, k, variant)
                fired = True
                break
        if not fired:
            return belief
    return belief


@dataclass(frozen=True)
class FilterConfig:
    """Everything a filter run needs besides the measurement stream."""

    initial: GaussianBelief
    process_noise: ProcessNoise
    measurement: MeasurementModel
    max_events: int = MAX_EVENTS_PER_WINDOW


def run_filter(
    system: HybridSystem,
    variant: FilterVariant,
    measurements: Sequence[tuple[float, np.ndarray]],
    config: FilterConfig,
) -> list[GaussianBelief]:
    """Alternate hybrid predictions and measurement updates over a stream.

    Returns the posterior belief after each measurement (guard application
    included).  The filter never sees ground-truth impact times.
    """
    belief = config.initial
    out: list[GaussianBelief] = []
    for t_k, y_k in measurements:
        belief = hybrid_predict(
            system, belief, t_k - belief.t, config.process_noise, variant,
            max_events=config.max_events,
        )
        belief = measurement_update(belief, y_k, config.measurement)
        belief = posterior_guard_apply(system, belief, variant, max_events=config.max_events)
        out.append(belief)
    return out
