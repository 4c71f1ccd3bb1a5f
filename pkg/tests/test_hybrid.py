"""Flows, event detection, and ground-truth simulation."""

import math

import numpy as np
import pytest

from hybridkal.errors import GrazingContactError, NumericalDivergenceError
from hybridkal.hybrid import (
    GuardFn,
    HybridSystem,
    Mode,
    ResetFn,
    Transition,
    detect_event,
    eval_field,
    fd_jacobian,
    flow,
    simulate_ground_truth,
)
from hybridkal.systems import BallParams, make_bouncing_ball

from conftest import ballistic_impact_time, make_ball_1d

FLAT_BALL = make_bouncing_ball(BallParams(theta=0.0, sigma_theta=0.0, sigma_ground=0.0))


class TestEvalField:
    def test_ball_field(self):
        sys_ = make_bouncing_ball()
        out = eval_field(sys_, 0, 0.0, np.array([1.0, 3.0, 2.0, -5.0]))
        assert np.array_equal(out, [2.0, -5.0, 0.0, -9.8])

    def test_rest_state_gravity_only(self):
        out = eval_field(make_bouncing_ball(), 0, 0.0, np.zeros(4))
        assert np.array_equal(out, [0.0, 0.0, 0.0, -9.8])

    def test_zero_field_mode(self):
        sys_ = HybridSystem(modes=[Mode(field=lambda t, x: np.zeros(3), dim=3)], transitions=[])
        assert np.array_equal(eval_field(sys_, 0, 1.0, np.array([1.0, -2.0, 7.0])), np.zeros(3))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_field(make_bouncing_ball(), 0, 0.0, np.zeros(3))


class TestFlow:
    def test_ballistic_closed_form(self):
        # y = y0 + v0 t - 4.9 t^2; RK4 is exact on polynomial flows.
        x1, _ = flow(FLAT_BALL, 0, 0.0, np.array([0.0, 3.0, 0.0, -5.0]), 0.1)
        assert np.allclose(x1, [0.0, 2.451, 0.0, -5.98], rtol=0, atol=1e-12)

    def test_zero_duration(self):
        x0 = np.array([0.3, 1.0, -2.0, 0.5])
        x1, A = flow(FLAT_BALL, 0, 0.0, x0, 0.0, want_jacobian=True)
        assert np.array_equal(x1, x0)
        assert np.array_equal(A, np.eye(4))

    def test_double_integrator_jacobian_exact(self):
        _, A = flow(FLAT_BALL, 0, 0.0, np.array([0.0, 3.0, 0.0, -5.0]), 0.1, want_jacobian=True)
        expected = np.eye(4)
        expected[0, 2] = expected[1, 3] = 0.1
        assert np.allclose(A, expected, atol=1e-14)

    def test_flow_consistency(self):
        x0 = np.array([0.0, 5.0, 1.0, -1.0])
        whole, _ = flow(FLAT_BALL, 0, 0.0, x0, 0.0173)
        mid, _ = flow(FLAT_BALL, 0, 0.0, x0, 0.011)
        split, _ = flow(FLAT_BALL, 0, 0.011, mid, 0.0173 - 0.011)
        assert np.allclose(split, whole, rtol=1e-8)

    def test_variational_matches_finite_differences(self):
        # Nonlinear field so the variational equations are exercised.
        def field(t, x):
            return np.array([x[1], -math.sin(x[0]) - 0.1 * x[1]])

        sys_ = HybridSystem(modes=[Mode(field=field, dim=2)], transitions=[])
        x0 = np.array([0.7, -0.2])
        _, A = flow(sys_, 0, 0.0, x0, 0.5, want_jacobian=True)
        A_fd = fd_jacobian(lambda z: flow(sys_, 0, 0.0, z, 0.5)[0], x0)
        assert np.allclose(A, A_fd, rtol=1e-4, atol=1e-8)

    def test_divergence_raises(self):
        sys_ = HybridSystem(
            modes=[Mode(field=lambda t, x: np.array([x[0] ** 3]), dim=1, h_max=0.1)],
            transitions=[],
        )
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalDivergenceError):
            flow(sys_, 0, 0.0, np.array([5.0]), 20.0)


class TestDetectEvent:
    def test_ball_drop_impact(self):
        t_star = ballistic_impact_time(3.0, -5.0)
        ev = detect_event(FLAT_BALL, 0, 0.0, np.array([0.0, 3.0, 0.0, -5.0]), 1.0)
        assert ev is not None
        k, t_hit, x_hit = ev
        assert k == 0
        assert abs(t_hit - t_star) < 1e-9
        assert abs(x_hit[1]) < 1e-10
        assert abs(x_hit[3] - (-5.0 - 9.8 * t_star)) < 1e-8

    def test_ascending_no_crossing(self):
        assert detect_event(FLAT_BALL, 0, 0.0, np.array([0.0, 3.0, 0.0, 5.0]), 0.2) is None

    def test_event_determinism(self):
        x0 = np.array([0.1, 2.7, -0.4, -4.0])
        a = detect_event(FLAT_BALL, 0, 0.0, x0, 1.0)
        b = detect_event(FLAT_BALL, 0, 0.0, x0, 1.0)
        assert a[1] == b[1]
        assert np.array_equal(a[2], b[2])

    def test_grazing_contact_error(self):
        # The guard value creeps through zero at 1e-9 per second, far below
        # the transversality tolerance.
        def field(t, x):
            return np.array([-1e-9, 0.0])

        guard = GuardFn(value=lambda t, x: x[0], grad_x=lambda t, x: np.array([1.0, 0.0]),
                        grad_t=lambda t, x: 0.0)
        reset = ResetFn(apply=lambda t, x, th: x.copy())
        sys_ = HybridSystem(
            modes=[Mode(field=field, jac_x=lambda t, x: np.zeros((2, 2)), dim=2)],
            transitions=[Transition(0, 0, guard, reset)],
        )
        with pytest.raises(GrazingContactError):
            detect_event(sys_, 0, 0.0, np.array([2e-10, 0.0]), 0.5)

    def test_guard_offset_shifts_crossing(self):
        # Lowering the surface by 0.5 delays the impact.
        ev_lowered = detect_event(
            FLAT_BALL, 0, 0.0, np.array([0.0, 3.0, 0.0, -5.0]), 1.0,
            guard_offsets=np.array([-0.5]),
        )
        t_star = ballistic_impact_time(3.5, -5.0)
        assert abs(ev_lowered[1] - t_star) < 1e-9


class TestSimulateGroundTruth:
    def test_single_impact_near_analytic_time(self):
        traj = simulate_ground_truth(
            FLAT_BALL, 0, np.array([0.0, 3.0, 0.0, -5.0]), None, None, T=1.0, dt_record=0.01,
        )
        assert len(traj.events) == 1
        assert abs(traj.events[0].t - ballistic_impact_time(3.0, -5.0)) < 1e-9
        # Post-impact velocity flips through the elastic reset (alpha = 0.8).
        v_in = traj.events[0].x_pre[3]
        assert abs(traj.events[0].x_post[3] + 0.8 * v_in) < 1e-12

    def test_no_event_before_horizon(self):
        traj = simulate_ground_truth(
            FLAT_BALL, 0, np.array([0.0, 3.0, 0.0, -5.0]), None, None, T=0.3, dt_record=0.01,
        )
        assert traj.events == []
        assert len(traj.samples) == 31

    def test_samples_strictly_increasing(self):
        traj = simulate_ground_truth(
            FLAT_BALL, 0, np.array([0.0, 3.0, 0.0, -5.0]), None, None, T=1.0, dt_record=0.01,
        )
        t = traj.times
        assert np.all(np.diff(t) > 0)

    def test_event_reset_consistency(self):
        ball = make_ball_1d(alpha=0.5)
        traj = simulate_ground_truth(ball, 0, np.array([1.0, 0.0]), None, None, T=2.0, dt_record=0.01)
        assert len(traj.events) >= 2
        for ev in traj.events:
            assert np.allclose(ev.x_post, [ev.x_pre[0], -0.5 * ev.x_pre[1]], atol=1e-12)

    def test_theta_and_offset_draws_used(self):
        ball = make_bouncing_ball(BallParams(theta=0.0))
        traj = simulate_ground_truth(
            ball, 0, np.array([0.0, 3.0, 0.0, -5.0]),
            theta_draw=[np.array([0.1])], guard_offsets=np.array([-0.5]),
            T=1.0, dt_record=0.01,
        )
        ev = traj.events[0]
        assert abs(ev.t - ballistic_impact_time(3.5, -5.0)) < 1e-9
        # Reflection used theta = 0.1: tangential component preserved.
        tang = np.array([math.cos(0.1), math.sin(0.1)])
        assert abs(ev.x_post[2:] @ tang - ev.x_pre[2:] @ tang) < 1e-12

    def test_determinism_bitwise(self):
        args = (FLAT_BALL, 0, np.array([0.0, 3.0, 0.0, -5.0]), None, None)
        a = simulate_ground_truth(*args, T=1.0, dt_record=0.01)
        b = simulate_ground_truth(*args, T=1.0, dt_record=0.01)
        assert a.events[0].t == b.events[0].t
        assert all(np.array_equal(sa[2], sb[2]) for sa, sb in zip(a.samples, b.samples))


class TestExtensibility:
    def test_field_and_guard_evaluate_below_surface(self):
        x_below = np.array([0.0, -1.0, 0.0, -3.0])
        assert np.all(np.isfinite(eval_field(FLAT_BALL, 0, 0.0, x_below)))
        assert FLAT_BALL.transitions[0].guard.value(0.0, x_below) < 0
