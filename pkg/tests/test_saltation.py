"""Saltation bundle construction and event covariance maps."""

import numpy as np
import pytest

from hybridkal.errors import InvalidCovarianceError, TransversalityViolationError
from hybridkal.hybrid import GuardFn, HybridSystem, Mode, ResetFn, Transition, detect_event, flow
from hybridkal.saltation import (
    extended_saltation,
    make_event_context,
    propagate_event_covariance,
    saltation_bundle,
)
from hybridkal.systems import BallParams, make_bouncing_ball

from conftest import make_ball_1d

# Hand evaluation for the 1D ball at impact velocity v = -7, alpha = 0.8:
# denom = v = -7, f_pre = [-7, -9.8], f_post = [5.6, -9.8].
XI_X_1D = np.array([[-0.8, 0.0], [2.52, -0.8]])
XI_G_1D = np.array([1.8, -2.52])


def bundle_1d_ball():
    sys_ = make_ball_1d(alpha=0.8)
    ctx = make_event_context(sys_, 0, 0.0, np.array([0.0, -7.0]))
    return saltation_bundle(ctx)


class TestSaltationBundle:
    def test_1d_ball_matrices(self):
        b = bundle_1d_ball()
        assert np.allclose(b.Xi_x, XI_X_1D, atol=1e-12)
        assert np.allclose(b.Xi_g, XI_G_1D, atol=1e-12)
        assert b.denom == -7.0
        assert b.D_theta_R.shape == (2, 0)

    def test_identity_reset_same_field(self):
        # f_post = f_pre and R = id make the correction vanish.
        def field(t, x):
            return np.array([1.0, -2.0])

        guard = GuardFn(value=lambda t, x: x[0] - 1.0, grad_x=lambda t, x: np.array([1.0, 0.0]),
                        grad_t=lambda t, x: 0.0)
        reset = ResetFn(
            apply=lambda t, x, th: x.copy(),
            jac_x=lambda t, x, th: np.eye(2),
            jac_t=lambda t, x, th: np.zeros(2),
            jac_theta=lambda t, x, th: np.zeros((2, 0)),
        )
        sys_ = HybridSystem(modes=[Mode(field=field, dim=2)],
                            transitions=[Transition(0, 0, guard, reset)])
        ctx = make_event_context(sys_, 0, 0.0, np.array([1.0, 0.3]))
        b = saltation_bundle(ctx)
        assert np.allclose(b.Xi_x, np.eye(2), atol=1e-12)
        assert np.allclose(b.Xi_g, 0.0, atol=1e-12)

    def test_grazing_raises(self):
        sys_ = make_ball_1d()
        ctx = make_event_context(sys_, 0, 0.0, np.array([0.0, -1e-9]))
        with pytest.raises(TransversalityViolationError):
            saltation_bundle(ctx)

    def test_identity_relation(self):
        # Xi_x = D_xR - Xi_g D_xg must hold exactly for every bundle.
        b = bundle_1d_ball()
        D_xR = np.array([[1.0, 0.0], [0.0, -0.8]])
        D_xg = np.array([1.0, 0.0])
        assert np.max(np.abs(b.Xi_x - (D_xR - np.outer(b.Xi_g, D_xg)))) < 1e-10

    def test_theta_jacobian_from_2d_ball(self):
        sys_ = make_bouncing_ball(BallParams(theta=-0.25))
        x_pre = np.array([0.2, -0.05, 0.3, -8.0])
        ctx = make_event_context(sys_, 0, 0.0, x_pre)
        b = saltation_bundle(ctx)
        assert b.D_theta_R.shape == (4, 1)
        # Matches finite differences of the reset in theta.
        tr = sys_.transitions[0]
        h = 1e-6
        fd = (tr.reset.apply(0.0, x_pre, np.array([-0.25 + h]))
              - tr.reset.apply(0.0, x_pre, np.array([-0.25 - h]))) / (2 * h)
        assert np.allclose(b.D_theta_R[:, 0], fd, rtol=1e-6, atol=1e-8)


class TestExtendedSaltation:
    def test_structure(self):
        b = bundle_1d_ball()
        ext = extended_saltation(b)
        expected = np.array([
            [-0.8, 0.0, 1.8],
            [2.52, -0.8, -2.52],
            [0.0, 0.0, 1.0],
        ])
        assert np.allclose(ext, expected, atol=1e-12)

    def test_bottom_row(self):
        ext = extended_saltation(bundle_1d_ball())
        assert ext[-1, -1] == 1.0
        assert np.array_equal(ext[-1, :-1], np.zeros(2))


class TestPropagateEventCovariance:
    def test_reduces_to_classical_map(self):
        b = bundle_1d_ball()
        Sigma = np.array([[0.02, 0.003], [0.003, 0.05]])
        out = propagate_event_covariance(b, Sigma, 0.0, None)
        classical = b.Xi_x @ Sigma @ b.Xi_x.T
        assert np.allclose(out, 0.5 * (classical + classical.T), atol=1e-15)

    def test_hand_computed_combined_update(self):
        # Sigma_x = 0.01 I, sigma_g^2 = 0.04:
        # 0.01 Xi_x Xi_x^T + 0.04 Xi_g Xi_g^T, entries worked out by hand.
        b = bundle_1d_ball()
        out = propagate_event_covariance(b, 0.01 * np.eye(2), 0.04, None)
        expected = np.array([[0.136, -0.2016], [-0.2016, 0.32392]])
        assert np.allclose(out, expected, atol=1e-12)

    def test_monte_carlo_cross_check(self, rng):
        # Sample the linear maps directly; the sample covariance of
        # Xi_x dx + Xi_g dg must approach the propagated covariance.
        b = bundle_1d_ball()
        n = 100_000
        dx = rng.normal(0.0, 0.1, size=(n, 2))
        dg = rng.normal(0.0, 0.2, size=n)
        y = dx @ b.Xi_x.T + np.outer(dg, b.Xi_g)
        emp = np.cov(y.T)
        pred = propagate_event_covariance(b, 0.01 * np.eye(2), 0.04, None)
        assert np.allclose(emp, pred, atol=3.0 * np.max(np.abs(pred)) / np.sqrt(n) * 3)

    def test_rank_one_guard_only(self):
        b = bundle_1d_ball()
        out = propagate_event_covariance(b, np.zeros((2, 2)), 0.04, None)
        assert np.allclose(out, 0.04 * np.outer(b.Xi_g, b.Xi_g), atol=1e-15)
        assert np.linalg.matrix_rank(out) == 1

    def test_additivity_exact(self):
        sys_ = make_bouncing_ball()
        ctx = make_event_context(sys_, 0, 0.0, np.array([0.1, -0.07, 0.5, -9.0]))
        b = saltation_bundle(ctx)
        Sigma = np.diag([0.05, 0.05, 0.001, 0.001])
        Sigma_th = np.array([[0.0025]])
        total = propagate_event_covariance(b, Sigma, 0.0625, Sigma_th)
        parts = (
            propagate_event_covariance(b, Sigma, 0.0, None)
            + propagate_event_covariance(b, np.zeros((4, 4)), 0.0625, None)
            + propagate_event_covariance(b, np.zeros((4, 4)), 0.0, Sigma_th)
        )
        assert np.array_equal(total, parts)

    def test_non_psd_input_rejected(self):
        b = bundle_1d_ball()
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
        with pytest.raises(InvalidCovarianceError):
            propagate_event_covariance(b, bad, 0.0, None)

    def test_psd_preserved(self, rng):
        b = bundle_1d_ball()
        for _ in range(25):
            L = rng.normal(size=(2, 2))
            out = propagate_event_covariance(b, L @ L.T, rng.uniform(0, 0.5), None)
            assert np.linalg.eigvalsh(out).min() >= -1e-10


class TestFirstOrderAccuracy:
    """Simulated perturbations must match the linear maps to second order."""

    @staticmethod
    def _post_state(system, x0, dt_total, guard_offset=0.0, theta=None):
        offsets = np.array([guard_offset])
        ev = detect_event(system, 0, 0.0, x0, dt_total, guard_offsets=offsets)
        k, t_star, x_pre = ev
        tr = system.transitions[k]
        th = tr.reset.theta_mean if theta is None else theta
        x_post = tr.reset.apply(t_star, x_pre, th)
        x_end, _ = flow(system, 0, t_star, x_post, dt_total - t_star)
        return x_end

    def _setup(self):
        sys_ = make_bouncing_ball(BallParams(theta=-0.25))
        x0 = np.array([0.0, 2.0, 0.3, -4.0])
        dt_total = 0.8
        ev = detect_event(sys_, 0, 0.0, x0, dt_total)
        _, t_star, x_pre = ev
        ctx = make_event_context(sys_, 0, t_star, x_pre)
        b = saltation_bundle(ctx)
        A1 = flow(sys_, 0, 0.0, x0, t_star, want_jacobian=True)[1]
        A2 = flow(sys_, 0, t_star, ctx.x_post, dt_total - t_star, want_jacobian=True)[1]
        nominal_end = self._post_state(sys_, x0, dt_total)
        return sys_, x0, dt_total, b, A1, A2, nominal_end

    def test_state_perturbation_quadratic_decay(self, rng):
        sys_, x0, dt_total, b, A1, A2, nominal = self._setup()
        direction = rng.normal(size=4)
        direction /= np.linalg.norm(direction)
        errs = []
        for eps in (1e-3, 5e-4):
            dx = eps * direction
            sim = self._post_state(sys_, x0 + dx, dt_total) - nominal
            pred = A2 @ b.Xi_x @ A1 @ dx
            errs.append(np.linalg.norm(sim - pred))
        assert errs[0] / errs[1] >= 3.5

    def test_guard_offset_quadratic_decay(self):
        sys_, x0, dt_total, b, A1, A2, nominal = self._setup()
        errs = []
        for eps in (1e-3, 5e-4):
            sim = self._post_state(sys_, x0, dt_total, guard_offset=eps) - nominal
            pred = A2 @ (b.Xi_g * eps)
            errs.append(np.linalg.norm(sim - pred))
        assert errs[0] / errs[1] >= 3.5

    def test_theta_perturbation_quadratic_decay(self):
        sys_, x0, dt_total, b, A1, A2, nominal = self._setup()
        errs = []
        for eps in (1e-3, 5e-4):
            theta = sys_.transitions[0].reset.theta_mean + eps
            sim = self._post_state(sys_, x0, dt_total, theta=theta) - nominal
            pred = A2 @ (b.D_theta_R[:, 0] * eps)
            errs.append(np.linalg.norm(sim - pred))
        assert errs[0] / errs[1] >= 3.5
