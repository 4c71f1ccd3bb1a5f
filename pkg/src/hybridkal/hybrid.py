"""Event-driven hybrid dynamical systems: flows, event detection, simulation.

A system is a set of modes (vector fields over a continuous state) joined by
transitions, each carrying a guard (transition fires when its value reaches
zero from above) and a reset mapping the pre-event state into the destination
mode.  Flows use fixed-step classical RK4 so that results are deterministic;
flow-map Jacobians come from integrating the variational equations alongside
the state.  Guards and fields must be evaluable on both sides of the nominal
guard surface, which lets us localize crossings by bisection and shift guard
surfaces by a scalar offset along their normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    GrazingContactError,
    NumericalDivergenceError,
    ZenoSuspicionError,
)

# Module-wide numerical tolerances.  The guard tolerance bounds |g| at a
# localized crossing; the transversality tolerance bounds how small the
# guard-normal velocity may be before an event is treated as grazing.
GUARD_ZERO_TOL = 1e-10
TRANSVERSALITY_TOL = 1e-8
DEFAULT_H_MAX = 1e-3
MAX_EVENTS_PER_WINDOW = 8
BISECTION_MAX_ITERS = 80
FD_STEP = 1e-6
# Long segments are scanned for events in windows of this many internal
# steps, which bounds the cost of each bisection re-flow.
DETECT_WINDOW_STEPS = 4

ModeId = int


def _fd_steps(x: np.ndarray) -> np.ndarray:
    return FD_STEP * np.maximum(1.0, np.abs(x))


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of f at x, step 1e-6 * max(1, |x_i|)."""
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x)
    cols = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        cols.append((np.asarray(f(xp), dtype=float) - np.asarray(f(xm), dtype=float)) / (2.0 * h[i]))
    return np.column_stack(cols)


def fd_scalar_gradient(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central-difference gradient row of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x)
    g = np.empty(x.size)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (f(xp) - f(xm)) / (2.0 * h[i])
    return g


def fd_time_derivative(f: Callable[[float], np.ndarray], t: float):
    h = FD_STEP * max(1.0, abs(t))
    return (np.asarray(f(t + h), dtype=float) - np.asarray(f(t - h), dtype=float)) / (2.0 * h)


@dataclass(frozen=True)
class GuardFn:
    """Scalar guard g(t, x); the transition fires when g reaches 0 from above.

    ``sigma_g`` is the standard deviation of the guard offset along the
    normal direction, in the same units as g.
    """

    value: Callable[[float, np.ndarray], float]
    grad_x: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    grad_t: Optional[Callable[[float, np.ndarray], float]] = None
    sigma_g: float = 0.0

    def __post_init__(self):
        if self.sigma_g < 0.0:
            raise ValueError("sigma_g must be nonnegative")
        if self.grad_x is None:
            value = self.value
            object.__setattr__(
                self, "grad_x",
                lambda t, x: fd_scalar_gradient(lambda z: value(t, z), x),
            )
        if self.grad_t is None:
            value = self.value
            object.__setattr__(
                self, "grad_t",
                lambda t, x: float(fd_time_derivative(lambda s: np.array([value(s, x)]), t)[0]),
            )


@dataclass(frozen=True)
class ResetFn:
    """Reset map R(t, x, theta) with Jacobians and the parameter distribution.

    ``theta_mean`` has length p >= 0; ``sigma_theta`` is the p x p covariance
    of the reset parameters.  Missing Jacobians are synthesized by central
    finite differences.

    When the reset parameters and the guard offset describe the same physical
    quantity (e.g. a surface location entering both), ``theta_from_offset``
    maps a drawn guard offset to the consistent parameter vector so sampled
    environments stay self-consistent.  Estimators still treat the two
    uncertainty sources as independent.
    """

    apply: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    jac_x: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    jac_t: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    jac_theta: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None
    theta_mean: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    sigma_theta: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 0)))
    theta_from_offset: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "theta_mean", np.asarray(self.theta_mean, dtype=float))
        object.__setattr__(self, "sigma_theta", np.asarray(self.sigma_theta, dtype=float))
        p = self.theta_mean.size
        if self.sigma_theta.shape != (p, p):
            raise ValueError("sigma_theta must be p x p for p = len(theta_mean)")
        if p:
            if not np.allclose(self.sigma_theta, self.sigma_theta.T, atol=1e-12):
                raise ValueError("sigma_theta must be symmetric")
            if np.linalg.eigvalsh(self.sigma_theta).min() < -1e-10:
                raise ValueError("sigma_theta must be positive semi-definite")
        apply = self.apply
        if self.jac_x is None:
            object.__setattr__(
                self, "jac_x",
                lambda t, x, th: fd_jacobian(lambda z: apply(t, z, th), x),
            )
        if self.jac_t is None:
            object.__setattr__(
                self, "jac_t",
                lambda t, x, th: fd_time_derivative(lambda s: apply(s, x, th), t),
            )
        if self.jac_theta is None:
            object.__setattr__(
                self, "jac_theta",
                lambda t, x, th: (
                    fd_jacobian(lambda z: apply(t, x, z), th)
                    if np.asarray(th).size
                    else np.zeros((np.asarray(apply(t, x, th)).size, 0))
                ),
            )


@dataclass(frozen=True)
class Mode:
    """A vector field F(t, x) over an n-dimensional continuous state.

    ``project`` (with ``project_jac``) optionally re-imposes an algebraic
    relation between state components after every integration step, e.g.
    kinematically slaved coordinates; the flow Jacobian composes it.
    """

    field: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    jac_x: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    h_max: float = DEFAULT_H_MAX
    project: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    project_jac: Optional[Callable[[float, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.jac_x is None:
            f = self.field
            object.__setattr__(
                self, "jac_x",
                lambda t, x: fd_jacobian(lambda z: f(t, z), x),
            )
        if (self.project is None) != (self.project_jac is None):
            raise ValueError("project and project_jac must be supplied together")


@dataclass(frozen=True)
class Transition:
    from_mode: ModeId
    to_mode: ModeId
    guard: GuardFn
    reset: ResetFn


@dataclass(frozen=True)
class HybridSystem:
    """Mode set plus guarded transitions forming a directed graph."""

    modes: Sequence[Mode]
    transitions: Sequence[Transition]

    def __post_init__(self):
        pairs = set()
        table: list[list[tuple[int, Transition]]] = [[] for _ in self.modes]
        for k, tr in enumerate(self.transitions):
            if not (0 <= tr.from_mode < len(self.modes)):
                raise ValueError(f"transition source mode {tr.from_mode} out of range")
            if not (0 <= tr.to_mode < len(self.modes)):
                raise ValueError(f"transition target mode {tr.to_mode} out of range")
            if (tr.from_mode, tr.to_mode) in pairs:
                raise ValueError(f"duplicate transition {(tr.from_mode, tr.to_mode)}")
            pairs.add((tr.from_mode, tr.to_mode))
            table[tr.from_mode].append((k, tr))
        object.__setattr__(self, "_outgoing", table)

    def outgoing(self, mode: ModeId) -> list[tuple[int, Transition]]:
        return self._outgoing[mode]


@dataclass(frozen=True)
class TrajectoryEvent:
    t: float
    transition: int
    x_pre: np.ndarray
    x_post: np.ndarray


@dataclass
class HybridTrajectory:
    """Recorded samples (t, mode, state) and the event log of one run."""

    samples: list[tuple[float, ModeId, np.ndarray]]
    events: list[TrajectoryEvent]

    @property
    def final_state(self) -> np.ndarray:
        return self.samples[-1][2]

    @property
    def final_mode(self) -> ModeId:
        return self.samples[-1][1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])


def eval_field(system: HybridSystem, mode: ModeId, t: float, x: np.ndarray) -> np.ndarray:
    """Evaluate the active mode's vector field; pure, no side effects."""
    m = system.modes[mode]
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise ValueError(f"state has shape {x.shape}, mode {mode} expects ({m.dim},)")
    dx = np.asarray(m.field(t, x), dtype=float)
    if dx.shape != (m.dim,):
        raise ValueError(f"field returned shape {dx.shape}, expected ({m.dim},)")
    return dx


def _rk4_state(f, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, x + (0.5 * h) * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def flow(
    system: HybridSystem,
    mode: ModeId,
    t0: float,
    x0: np.ndarray,
    dt: float,
    want_jacobian: bool = False,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Integrate the mode's field from (t0, x0) for dt seconds.

    Fixed-step RK4 with internal step h = dt / ceil(dt / h_max) <= h_max.
    With ``want_jacobian`` the flow-map Jacobian A is integrated from the
    variational equations dA/dt = D_xF(t, x(t)) A, A(t0) = I.
    """
    m = system.modes[mode]
    x = np.array(x0, dtype=float)
    if x.shape != (m.dim,):
        raise ValueError(f"state has shape {x.shape}, mode {mode} expects ({m.dim},)")
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    A = np.eye(m.dim) if want_jacobian else None
    if dt == 0.0:
        return x, A

    n_steps = max(1, int(math.ceil(dt / m.h_max - 1e-12)))
    h = dt / n_steps
    f = m.field
    t = t0
    if not want_jacobian:
        for _ in range(n_steps):
            x = _rk4_state(f, t, x, h)
            t += h
            if m.project is not None:
                x = m.project(t, x)
        if not np.all(np.isfinite(x)):
            raise NumericalDivergenceError(f"non-finite state while flowing mode {mode}")
        return x, None

    jac = m.jac_x
    for _ in range(n_steps):
        # One RK4 step of the augmented system (x, A).
        k1 = f(t, x)
        K1 = jac(t, x) @ A
        th = t + 0.5 * h
        xa = x + (0.5 * h) * k1
        k2 = f(th, xa)
        K2 = jac(th, xa) @ (A + (0.5 * h) * K1)
        xb = x + (0.5 * h) * k2
        k3 = f(th, xb)
        K3 = jac(th, xb) @ (A + (0.5 * h) * K2)
        te = t + h
        xc = x + h * k3
        k4 = f(te, xc)
        K4 = jac(te, xc) @ (A + h * K3)
        x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        A = A + (h / 6.0) * (K1 + 2.0 * (K2 + K3) + K4)
        t = te
        if m.project is not None:
            A = m.project_jac(t, x) @ A
            x = m.project(t, x)
    if not np.all(np.isfinite(x)):
        raise NumericalDivergenceError(f"non-finite state while flowing mode {mode}")
    return x, A


def _guard_values(
    outgoing: list[tuple[int, Transition]],
    t: float,
    x: np.ndarray,
    guard_offsets: Optional[np.ndarray],
) -> list[float]:
    if guard_offsets is None:
        return [tr.guard.value(t, x) for _, tr in outgoing]
    return [tr.guard.value(t, x) - guard_offsets[k] for k, tr in outgoing]


def guard_rate(system: HybridSystem, mode: ModeId, tr: Transition, t: float, x: np.ndarray) -> float:
    """Time derivative of the guard value along the flow: D_xg . f + D_tg."""
    f = system.modes[mode].field(t, x)
    return float(np.dot(np.asarray(tr.guard.grad_x(t, x), dtype=float), f) + tr.guard.grad_t(t, x))


def detect_event(
    system: HybridSystem,
    mode: ModeId,
    t0: float,
    x0: np.ndarray,
    dt: float,
    guard_offsets: Optional[np.ndarray] = None,
) -> Optional[tuple[int, float, np.ndarray]]:
    """Find the earliest guard crossing in [t0, t0 + dt], if any.

    Crossings are bracketed on the internal integration grid and localized by
    bisection, re-flowing from (t0, x0) to each candidate time, until
    |g| < GUARD_ZERO_TOL or BISECTION_MAX_ITERS halvings.  The returned state
    satisfies g <= 0.  Guards already non-positive at t0 only fire after the
    trajectory re-enters the region where they are positive.
    """
    outgoing = system.outgoing(mode)
    if not outgoing or dt <= 0.0:
        return None
    m = system.modes[mode]
    x0 = np.asarray(x0, dtype=float)

    n_steps = max(1, int(math.ceil(dt / m.h_max - 1e-12)))
    h = dt / n_steps
    g_prev = _guard_values(outgoing, t0, x0, guard_offsets)
    armed = [v > 0.0 for v in g_prev]

    x_prev = x0
    tau_prev = 0.0
    x = x0
    for step in range(1, n_steps + 1):
        tau = step * h if step < n_steps else dt
        x = _rk4_state(m.field, t0 + tau_prev, x, tau - tau_prev)
        if m.project is not None:
            x = m.project(t0 + tau, x)
        g = _guard_values(outgoing, t0 + tau, x, guard_offsets)

        crossed = [i for i in range(len(outgoing)) if armed[i] and g[i] <= 0.0]
        if crossed:
            best = None
            for i in crossed:
                hit = _bisect_crossing(
                    system, mode, t0, x0, outgoing[i], guard_offsets,
                    tau_prev, x_prev, tau, x, g[i],
                )
                if best is None or hit[0] < best[0]:
                    best = (hit[0], i, hit[1])
            tau_star, i_star, x_star = best
            k, tr = outgoing[i_star]
            t_star = t0 + tau_star
            denom = guard_rate(system, mode, tr, t_star, x_star)
            if abs(denom) < TRANSVERSALITY_TOL:
                raise GrazingContactError(
                    f"guard {k} met tangentially at t={t_star:.6g} (|D_xg.f + D_tg| = {abs(denom):.3g})"
                )
            return k, t_star, x_star

        armed = [a or v > 0.0 for a, v in zip(armed, g)]
        g_prev = g
        x_prev = x
        tau_prev = tau
    if not np.all(np.isfinite(x)):
        raise NumericalDivergenceError(f"non-finite state while detecting events in mode {mode}")
    return None


def _bisect_crossing(
    system, mode, t0, x0, outgoing_entry, guard_offsets,
    tau_lo, x_lo, tau_hi, x_hi, g_hi,
):
    """Bisect one guard's crossing inside [tau_lo, tau_hi]; returns (tau, x)."""
    k, tr = outgoing_entry
    offset = 0.0 if guard_offsets is None else guard_offsets[k]
    for _ in range(BISECTION_MAX_ITERS):
        if abs(g_hi) < GUARD_ZERO_TOL:
            break
        tau_mid = 0.5 * (tau_lo + tau_hi)
        x_mid, _ = flow(system, mode, t0, x0, tau_mid)
        g_mid = tr.guard.value(t0 + tau_mid, x_mid) - offset
        if g_mid <= 0.0:
            tau_hi, x_hi, g_hi = tau_mid, x_mid, g_mid
        else:
            tau_lo = tau_mid
    return tau_hi, x_hi


def advance_segment(
    system: HybridSystem,
    mode: ModeId,
    t0: float,
    x0: np.ndarray,
    dt: float,
    theta_draw: Optional[Sequence[Optional[np.ndarray]]] = None,
    guard_offsets: Optional[np.ndarray] = None,
    events: Optional[list[TrajectoryEvent]] = None,
    max_events: int = MAX_EVENTS_PER_WINDOW,
    last_fire: Optional[dict[int, float]] = None,
) -> tuple[ModeId, np.ndarray]:
    """Advance (mode, state) by dt, applying any transitions encountered.

    A guard that is already satisfied at the segment start fires immediately
    only if the trajectory is still moving into it (guard value decreasing);
    otherwise the state is flowing back out and no event is triggered.

    Each transition has a refractory window of one internal step after it
    fires (tracked across segments through ``last_fire``): physical contact
    sequences are far slower, and the limit keeps degenerate configurations,
    where two guards hand the state back and forth at a single instant, from
    looping without advancing time.
    """
    t = t0
    x = np.asarray(x0, dtype=float)
    t_end = t0 + dt
    n_events = 0
    if last_fire is None:
        last_fire = {}

    def apply_event(k: int, tr: Transition, t_star: float, x_pre: np.ndarray) -> np.ndarray:
        theta = tr.reset.theta_mean
        if theta_draw is not None and theta_draw[k] is not None:
            theta = np.asarray(theta_draw[k], dtype=float)
        x_post = np.asarray(tr.reset.apply(t_star, x_pre, theta), dtype=float)
        if events is not None:
            events.append(TrajectoryEvent(t_star, k, np.array(x_pre), np.array(x_post)))
        last_fire[k] = t_star
        return x_post

    def refractory_until(k: int) -> float:
        if k not in last_fire:
            return -math.inf
        return last_fire[k] + system.modes[system.transitions[k].from_mode].h_max

    while True:
        # Fire guards the state already violates while moving deeper.  The
        # rate must clear the transversality tolerance, both because the
        # event maps need it and so that states resting exactly on a guard
        # (e.g. just after a liftoff) do not re-trigger it.
        fired = True
        while fired:
            fired = False
            for k, tr in system.outgoing(mode):
                offset = 0.0 if guard_offsets is None else guard_offsets[k]
                if t >= refractory_until(k) and tr.guard.value(t, x) - offset <= 0.0 and \
                        guard_rate(system, mode, tr, t, x) < -TRANSVERSALITY_TOL:
                    x = apply_event(k, tr, t, x)
                    mode = tr.to_mode
                    n_events += 1
                    if n_events > max_events:
                        raise ZenoSuspicionError(f"more than {max_events} events within one window at t={t:.6g}")
                    fired = True
                    break

        if t >= t_end:
            return mode, x
        w_end = min(t_end, t + DETECT_WINDOW_STEPS * system.modes[mode].h_max)
        ev = detect_event(system, mode, t, x, w_end - t, guard_offsets)
        if ev is None:
            x, _ = flow(system, mode, t, x, w_end - t)
            t = w_end
            continue
        k, t_star, x_pre = ev
        if t_star < refractory_until(k):
            # Skip the re-fire and step just past it; the immediate-fire rule
            # picks the transition back up if the state keeps pressing in.
            t_skip = min(t_end, refractory_until(k))
            x, _ = flow(system, mode, t, x, t_skip - t)
            t = t_skip
            continue
        tr = system.transitions[k]
        x = apply_event(k, tr, t_star, x_pre)
        mode = tr.to_mode
        t = t_star
        n_events += 1
        if n_events > max_events:
            raise ZenoSuspicionError(f"more than {max_events} events within one window at t={t:.6g}")


def simulate_ground_truth(
    system: HybridSystem,
    mode0: ModeId,
    x0: np.ndarray,
    theta_draw: Optional[Sequence[Optional[np.ndarray]]],
    guard_offsets: Optional[np.ndarray],
    T: float,
    dt_record: float,
) -> HybridTrajectory:
    """Simulate one trajectory under a fixed environment draw.

    Guards are evaluated as g(t, x) - guard_offsets[k] and resets applied
    with theta_draw[k]; both are held constant over the whole trajectory.
    The state is recorded every dt_record seconds.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if guard_offsets is not None:
        guard_offsets = np.asarray(guard_offsets, dtype=float)

    x = np.asarray(x0, dtype=float)
    mode = mode0
    events: list[TrajectoryEvent] = []
    samples: list[tuple[float, ModeId, np.ndarray]] = [(0.0, mode, x.copy())]
    last_fire: dict[int, float] = {}

    n_rec = max(1, int(round(T / dt_record)))
    if abs(n_rec * dt_record - T) > 1e-9 * max(1.0, T):
        n_rec = int(math.ceil(T / dt_record - 1e-12))
    t = 0.0
    for i in range(1, n_rec + 1):
        t_next = min(i * dt_record, T) if i < n_rec else T
        mode, x = advance_segment(
            system, mode, t, x, t_next - t,
            theta_draw=theta_draw, guard_offsets=guard_offsets, events=events,
            last_fire=last_fire,
        )
        samples.append((t_next, mode, x.copy()))
        t = t_next
    return HybridTrajectory(samples=samples, events=events)
