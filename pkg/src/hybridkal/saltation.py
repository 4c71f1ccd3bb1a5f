"""Saltation matrices and covariance maps at hybrid transition events.

At a transversal guard crossing, first-order perturbation analysis gives
three linear maps from uncertainty sources to post-event state perturbations:

* ``Xi_x``   -- pre-event state perturbations (the saltation matrix),
* ``Xi_g``   -- guard-surface offsets along the guard normal,
* ``D_theta_R`` -- reset-parameter perturbations.

All three share the scalar denominator D_xg . f_I + D_tg (the guard-normal
approach rate), and satisfy Xi_x = D_xR - Xi_g D_xg.  The covariance map sums
the three independent contributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidCovarianceError, TransversalityViolationError
from .hybrid import TRANSVERSALITY_TOL, HybridSystem, ModeId, Transition

PSD_TOL = 1e-8


@dataclass(frozen=True)
class EventContext:
    """Everything needed to linearize one transition event.

    ``f_pre`` is the source-mode field at (t, x_pre); ``f_post`` the
    destination-mode field at (t, x_post); x_post = R(t, x_pre, theta_mean).
    """

    t: float
    x_pre: np.ndarray
    x_post: np.ndarray
    f_pre: np.ndarray
    f_post: np.ndarray
    transition: Transition


def make_event_context(
    system: HybridSystem,
    transition_index: int,
    t: float,
    x_pre: np.ndarray,
) -> EventContext:
    """Assemble an EventContext at the mean reset parameters."""
    tr = system.transitions[transition_index]
    x_pre = np.asarray(x_pre, dtype=float)
    x_post = np.asarray(tr.reset.apply(t, x_pre, tr.reset.theta_mean), dtype=float)
    f_pre = np.asarray(system.modes[tr.from_mode].field(t, x_pre), dtype=float)
    f_post = np.asarray(system.modes[tr.to_mode].field(t, x_post), dtype=float)
    return EventContext(t=t, x_pre=x_pre, x_post=x_post, f_pre=f_pre, f_post=f_post, transition=tr)


@dataclass(frozen=True)
class SaltationBundle:
    """The three event linearizations and their shared denominator.

    ``D_xR`` (the plain reset Jacobian) is carried along because baseline
    filters substitute it for Xi_x.
    """

    Xi_x: np.ndarray        # (n_post, n_pre)
    Xi_g: np.ndarray        # (n_post,)
    D_theta_R: np.ndarray   # (n_post, p)
    denom: float            # D_xg . f_pre + D_tg
    D_xR: np.ndarray        # (n_post, n_pre)

    @property
    def n_pre(self) -> int:
        return self.Xi_x.shape[1]

    @property
    def n_post(self) -> int:
        return self.Xi_x.shape[0]


def saltation_bundle(ctx: EventContext) -> SaltationBundle:
    """Linearize the event in ctx, evaluating all derivatives at
    (t, x_pre, theta_mean).

    Raises TransversalityViolationError when the guard-normal approach rate
    is below tolerance, in which case none of the maps exist.
    """
    tr = ctx.transition
    t, x = ctx.t, ctx.x_pre
    theta = tr.reset.theta_mean

    Dg = np.asarray(tr.guard.grad_x(t, x), dtype=float).reshape(-1)
    Dg_t = float(tr.guard.grad_t(t, x))
    denom = float(Dg @ ctx.f_pre) + Dg_t
    if abs(denom) < TRANSVERSALITY_TOL:
        raise TransversalityViolationError(
            f"guard-normal approach rate {denom:.3g} below tolerance at t={t:.6g}"
        )

    DR = np.asarray(tr.reset.jac_x(t, x, theta), dtype=float)
    DR_t = np.asarray(tr.reset.jac_t(t, x, theta), dtype=float).reshape(-1)
    D_theta = np.asarray(tr.reset.jac_theta(t, x, theta), dtype=float)
    if D_theta.ndim == 1:
        D_theta = D_theta.reshape(-1, 1)

    # Xi_g = (D_xR f_I + D_tR - f_J) / denom;  Xi_x = D_xR - Xi_g D_xg.
    Xi_g = (DR @ ctx.f_pre + DR_t - ctx.f_post) / denom
    Xi_x = DR - np.outer(Xi_g, Dg)
    return SaltationBundle(Xi_x=Xi_x, Xi_g=Xi_g, D_theta_R=D_theta, denom=denom, D_xR=DR)


def extended_saltation(bundle: SaltationBundle) -> np.ndarray:
    """Block matrix [[Xi_x, Xi_g], [0, 1]] acting on (state, guard offset)."""
    n_post, n_pre = bundle.Xi_x.shape
    out = np.zeros((n_post + 1, n_pre + 1))
    out[:n_post, :n_pre] = bundle.Xi_x
    out[:n_post, n_pre] = bundle.Xi_g
    out[n_post, n_pre] = 1.0
    return out


def _symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def _check_psd(S: np.ndarray, name: str) -> None:
    S = np.asarray(S, dtype=float)
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-8):
        raise InvalidCovarianceError(f"{name} must be a symmetric matrix")
    if S.shape[0] and np.linalg.eigvalsh(S).min() < -PSD_TOL:
        raise InvalidCovarianceError(f"{name} has eigenvalue below -{PSD_TOL}")


def propagate_event_covariance(
    bundle: SaltationBundle,
    Sigma_x: np.ndarray,
    sigma_g_sq: float = 0.0,
    Sigma_theta: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Map a pre-event state covariance through the event.

    Returns Xi_x Sigma_x Xi_x^T + Xi_g sigma_g^2 Xi_g^T
    + D_theta_R Sigma_theta D_theta_R^T, each term symmetrized, so the result
    is exactly additive over the three uncertainty sources.
    """
    Sigma_x = np.asarray(Sigma_x, dtype=float)
    _check_psd(Sigma_x, "Sigma_x")
    if sigma_g_sq < 0.0:
        raise InvalidCovarianceError("sigma_g_sq must be nonnegative")

    out = _symmetrize(bundle.Xi_x @ Sigma_x @ bundle.Xi_x.T)
    if sigma_g_sq != 0.0:
        out = out + _symmetrize(np.outer(bundle.Xi_g, bundle.Xi_g) * sigma_g_sq)
    if Sigma_theta is not None and bundle.D_theta_R.shape[1]:
        Sigma_theta = np.asarray(Sigma_theta, dtype=float)
        _check_psd(Sigma_theta, "Sigma_theta")
        if np.any(Sigma_theta):
            out = out + _symmetrize(bundle.D_theta_R @ Sigma_theta @ bundle.D_theta_R.T)
    return out


def event_covariance_cross(bundle: SaltationBundle, sigma_g_sq: float) -> np.ndarray:
    """On-demand post-event state/guard cross-covariance column Xi_g sigma_g^2
    (the off-diagonal block of the extended-matrix covariance update when the
    prior state/guard covariance is block-diagonal)."""
    return (bundle.Xi_g * sigma_g_sq).reshape(-1, 1)


__all__ = [
    "EventContext",
    "SaltationBundle",
    "make_event_context",
    "saltation_bundle",
    "extended_saltation",
    "propagate_event_covariance",
]
