"""Sampling oracle for uncertainty propagation through hybrid events.

Particle clouds are drawn from a Gaussian initial belief together with
per-particle guard offsets and reset-parameter draws, simulated through the
system, and summarized as empirical moments.  Predicted Gaussians are scored
against the empirical ones with the closed-form Gaussian K-L divergence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    HybridkalError,
    MultimodalCloudError,
    SingularCovarianceError,
)
from .filters import GaussianBelief
from .hybrid import HybridSystem, simulate_ground_truth

KL_REGULARIZATION = 1e-10
MAX_EXCLUDED_FRACTION = 0.01


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix via eigendecomposition (rank-deficiency ok)."""
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V @ np.diag(np.sqrt(np.maximum(w, 0.0)))


@dataclass(frozen=True)
class SampleCloud:
    """Particle states at a common time, with per-particle modes."""

    particles: np.ndarray   # (N, n)
    t: float
    modes: np.ndarray       # (N,) int
    n_excluded: int = 0

    def __post_init__(self):
        if self.particles.shape[0] < 2:
            raise ValueError("a cloud needs at least two particles")
        if not np.all(np.isfinite(self.particles)):
            raise ValueError("cloud contains non-finite states")


@dataclass(frozen=True)
class PropagationSpec:
    """What to sample and how long to simulate each particle.

    The stop rule is a fixed horizon when ``settle`` is None, otherwise each
    particle runs to (nominal first event time + settle) so all particles are
    compared at equal time shortly after the event.  With a settle rule,
    particles that never reach a guard are excluded as failures.
    """

    system: HybridSystem
    mode0: int
    initial: GaussianBelief
    n_samples: int
    horizon: float
    settle: Optional[float] = None
    sigma_g: Optional[np.ndarray] = None          # per transition
    sigma_theta: Optional[list[Optional[np.ndarray]]] = None  # per transition

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.horizon <= 0 or (self.settle is not None and self.settle <= 0):
            raise ValueError("horizon and settle must be positive")


def _transition_sigmas(spec: PropagationSpec):
    system = spec.system
    n_tr = len(system.transitions)
    sigma_g = spec.sigma_g
    if sigma_g is None:
        sigma_g = np.array([tr.guard.sigma_g for tr in system.transitions])
    sigma_theta = spec.sigma_theta
    if sigma_theta is None:
        sigma_theta = [tr.reset.sigma_theta for tr in system.transitions]
    return np.asarray(sigma_g, dtype=float), sigma_theta, n_tr


def _resolve_end_time(spec: PropagationSpec) -> float:
    if spec.settle is None:
        return spec.horizon
    nominal = simulate_ground_truth(
        spec.system, spec.mode0, spec.initial.mean, None, None,
        T=spec.horizon, dt_record=spec.horizon,
    )
    if not nominal.events:
        raise HybridkalError("nominal trajectory reaches no event within the horizon")
    return nominal.events[0].t + spec.settle


def sample_propagate(spec: PropagationSpec, seed: int) -> SampleCloud:
    """Draw particles and environments, simulate each to the stop rule.

    Per-particle randomness comes from a substream derived from
    (seed, particle index), so results are reproducible and independent of
    any parallel execution order.  Diverging particles are excluded; more
    than 1% exclusions is an error.
    """
    system = spec.system
    sigma_g, sigma_theta, n_tr = _transition_sigmas(spec)
    t_end = _resolve_end_time(spec)
    n = spec.initial.mean.size

    cov = np.asarray(spec.initial.cov, dtype=float)
    # Degenerate directions are fine: the factor just has zero columns.
    L = _psd_factor(cov)
    theta_factors: list[Optional[np.ndarray]] = []
    for k, tr in enumerate(system.transitions):
        if tr.reset.theta_mean.size and sigma_theta[k] is not None and np.any(sigma_theta[k]):
            theta_factors.append(_psd_factor(np.asarray(sigma_theta[k], dtype=float)))
        else:
            theta_factors.append(None)

    states = np.empty((spec.n_samples, n))
    modes = np.empty(spec.n_samples, dtype=int)
    ok = np.zeros(spec.n_samples, dtype=bool)
    for i in range(spec.n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        x0 = spec.initial.mean + L @ rng.standard_normal(n)
        offsets = rng.standard_normal(n_tr) * sigma_g
        thetas = [
            None if Lk is None else tr.reset.theta_mean + Lk @ rng.standard_normal(Lk.shape[1])
            for Lk, tr in zip(theta_factors, system.transitions)
        ]
        try:
            traj = simulate_ground_truth(
                system, spec.mode0, x0, thetas, offsets, T=t_end, dt_record=t_end,
            )
        except HybridkalError:
            continue
        if spec.settle is not None and not traj.events:
            continue
        states[i] = traj.final_state
        modes[i] = traj.final_mode
        ok[i] = True

    n_excluded = int(spec.n_samples - ok.sum())
    if n_excluded > MAX_EXCLUDED_FRACTION * spec.n_samples:
        raise HybridkalError(
            f"{n_excluded} of {spec.n_samples} particles failed to propagate"
        )
    return SampleCloud(particles=states[ok], t=t_end, modes=modes[ok], n_excluded=n_excluded)


def empirical_moments(cloud: SampleCloud) -> GaussianBelief:
    """Sample mean and unbiased (N-1) covariance of a single-mode cloud."""
    unique = np.unique(cloud.modes)
    if unique.size != 1:
        raise MultimodalCloudError(f"cloud spans modes {unique.tolist()}")
    mean = cloud.particles.mean(axis=0)
    dev = cloud.particles - mean
    cov = dev.T @ dev / (cloud.particles.shape[0] - 1)
    return GaussianBelief(mode=int(unique[0]), mean=mean, cov=0.5 * (cov + cov.T), t=cloud.t)


def _pd_factor(cov: np.ndarray, name: str):
    """Cholesky factor, regularizing once by 1e-10 I if needed."""
    cov = np.asarray(cov, dtype=float)
    try:
        if np.linalg.eigvalsh(cov).min() > 1e-12:
            return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    reg = cov + KL_REGULARIZATION * np.eye(cov.shape[0])
    try:
        return np.linalg.cholesky(reg)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(f"{name} covariance is singular") from None


def kl_divergence(g0: GaussianBelief, g1: GaussianBelief) -> float:
    """Closed-form KL(N0 || N1) between Gaussians of equal dimension:

    1/2 [tr(S1^-1 S0) + (m1-m0)^T S1^-1 (m1-m0) - k + ln(det S1 / det S0)].
    """
    if g0.mean.size != g1.mean.size:
        raise ValueError("KL divergence needs equal dimensions")
    k = g0.mean.size
    L0 = _pd_factor(g0.cov, "first")
    L1 = _pd_factor(g1.cov, "second")
    # tr(S1^-1 S0) = ||L1^-1 L0||_F^2; logdets from the Cholesky diagonals.
    M = np.linalg.solve(L1, L0)
    trace_term = float(np.sum(M * M))
    d = g1.mean - g0.mean
    z = np.linalg.solve(L1, d)
    maha = float(z @ z)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L1))) - np.sum(np.log(np.diag(L0))))
    return 0.5 * (trace_term + maha - k + logdet)


__all__ = [
    "SampleCloud",
    "PropagationSpec",
    "sample_propagate",
    "empirical_moments",
    "kl_divergence",
]
