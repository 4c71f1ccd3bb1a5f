"""Benchmark system construction: dynamics, guards, resets, derivatives."""

import math

import numpy as np
import pytest

from hybridkal.hybrid import (
    detect_event,
    fd_jacobian,
    fd_scalar_gradient,
    flow,
    simulate_ground_truth,
)
from hybridkal.systems import (
    AslipParams,
    BallParams,
    CircleParams,
    make_aslip,
    make_bouncing_ball,
    make_circle_drop,
    make_system,
)
from hybridkal.systems.aslip import leg_length, slave_toe, stance_energy
from hybridkal.systems.circle_drop import constraint_multiplier

from conftest import ballistic_impact_time


def random_states(name, rng, n):
    """States in each system's physically meaningful region."""
    for _ in range(n):
        if name == "ball2d":
            yield np.array([rng.normal(0, 1), rng.uniform(0.5, 4.0),
                            rng.normal(0, 2), rng.normal(-5, 2)])
        elif name == "circle_drop":
            yield np.array([rng.uniform(-1.2, 1.2), rng.uniform(1.7, 4.0),
                            rng.normal(0, 2), rng.normal(-3, 2)])
        else:
            yield np.array([rng.normal(0, 0.3), rng.uniform(1.2, 2.0), rng.normal(0, 0.25),
                            rng.normal(0, 0.3), rng.uniform(0.02, 0.6),
                            rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 0.5)])


class TestBouncingBall:
    def test_elastic_reflection_flat_ground(self):
        sys_ = make_bouncing_ball(BallParams(theta=0.0, alpha=1.0))
        out = sys_.transitions[0].reset.apply(0.0, np.array([0.0, 0.0, 1.0, -5.0]), np.array([0.0]))
        assert np.allclose(out, [0.0, 0.0, 1.0, 5.0], atol=1e-12)

    def test_partial_restitution(self):
        sys_ = make_bouncing_ball(BallParams(theta=0.0, alpha=0.8))
        out = sys_.transitions[0].reset.apply(0.0, np.array([0.0, 0.0, 1.0, -5.0]), np.array([0.0]))
        assert np.allclose(out, [0.0, 0.0, 1.0, 4.0], atol=1e-12)

    def test_tangential_velocity_preserved(self, rng):
        sys_ = make_bouncing_ball()
        for _ in range(10):
            theta = rng.uniform(-0.6, 0.6)
            x = np.array([rng.normal(), rng.normal(), rng.normal(0, 3), rng.normal(0, 3)])
            out = sys_.transitions[0].reset.apply(0.0, x, np.array([theta]))
            tang = np.array([math.cos(theta), math.sin(theta)])
            assert out[2:] @ tang == pytest.approx(x[2:] @ tang, abs=1e-12)

    def test_energy_conserved_elastic_impacts(self):
        sys_ = make_bouncing_ball(BallParams(theta=0.0, alpha=1.0))
        x0 = np.array([0.0, 3.0, 0.5, -5.0])
        traj = simulate_ground_truth(sys_, 0, x0, None, None, T=2.5, dt_record=0.01)
        assert len(traj.events) >= 2

        def energy(x):
            return 0.5 * (x[2] ** 2 + x[3] ** 2) + 9.8 * x[1]

        e0 = energy(x0)
        for _, _, x in traj.samples:
            assert abs(energy(x) - e0) / e0 < 1e-9

    def test_alpha_as_second_reset_parameter(self):
        sys_ = make_bouncing_ball(BallParams(theta=0.0, alpha=0.8, sigma_alpha=0.05))
        tr = sys_.transitions[0]
        assert np.array_equal(tr.reset.theta_mean, [0.0, 0.8])
        x = np.array([0.0, 0.0, 1.0, -5.0])
        out = tr.reset.apply(0.0, x, np.array([0.0, 1.0]))
        assert np.allclose(out, [0.0, 0.0, 1.0, 5.0], atol=1e-12)
        J = tr.reset.jac_theta(0.0, x, tr.reset.theta_mean)
        J_fd = fd_jacobian(lambda v: tr.reset.apply(0.0, x, v), tr.reset.theta_mean)
        assert np.allclose(J, J_fd, rtol=1e-5, atol=1e-8)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            BallParams(alpha=1.5)


class TestCircleDrop:
    def test_top_drop_kills_velocity(self):
        sys_ = make_circle_drop()
        ev = detect_event(sys_, 0, 0.0, np.array([0.0, 5.0, 0.0, 0.0]), 2.0)
        k, t_star, x_star = ev
        assert k == 0
        assert math.hypot(x_star[0], x_star[1]) == pytest.approx(2.0, abs=1e-9)
        out = sys_.transitions[0].reset.apply(t_star, x_star, np.array([2.0]))
        assert np.allclose(out[2:], 0.0, atol=1e-9)

    def test_plastic_impact_keeps_tangential_speed(self, rng):
        sys_ = make_circle_drop()
        tr = sys_.transitions[0]
        for _ in range(10):
            phi = rng.uniform(-0.5, 0.5)
            x = np.array([2.0 * math.sin(phi), 2.0 * math.cos(phi),
                          rng.normal(0, 2), -abs(rng.normal(3, 2))])
            out = tr.reset.apply(0.0, x, np.array([2.0]))
            n = np.array([math.sin(phi), math.cos(phi)])
            tang = np.array([n[1], -n[0]])
            assert out[2:] @ tang == pytest.approx(x[2:] @ tang, abs=1e-10)
            assert abs(out[2:] @ n) < 1e-10

    def test_constraint_preserved_while_sliding(self):
        sys_ = make_circle_drop()
        traj = simulate_ground_truth(
            sys_, 0, np.array([0.5, 5.0, 0.0, 0.0]), None, None, T=3.0, dt_record=0.01)
        drifts = [abs(math.hypot(x[0], x[1]) - 2.0) for _, m, x in traj.samples if m == 1]
        assert drifts and max(drifts) < 1e-8

    def test_liftoff_when_multiplier_crosses_zero(self):
        sys_ = make_circle_drop()
        traj = simulate_ground_truth(
            sys_, 0, np.array([0.5, 5.0, 0.0, 0.0]), None, None, T=3.0, dt_record=0.01)
        liftoffs = [e for e in traj.events if e.transition == 1]
        assert len(liftoffs) == 1
        assert abs(constraint_multiplier(9.8, liftoffs[0].x_pre)) < 1e-8
        # multiplier positive while constrained (surface can only push)
        for t, m, x in traj.samples:
            if m == 1 and t < liftoffs[0].t - 0.01:
                assert constraint_multiplier(9.8, x) > 0

    def test_event_sequence(self):
        sys_ = make_circle_drop()
        traj = simulate_ground_truth(
            sys_, 0, np.array([0.5, 5.0, 0.0, 0.0]), None, None, T=3.0, dt_record=0.01)
        kinds = [e.transition for e in traj.events]
        assert kinds[:2] == [0, 1]


class TestAslip:
    def test_vertical_drop_stays_on_axis(self):
        sys_ = make_aslip()
        q0 = np.array([0.0, 2.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        traj = simulate_ground_truth(sys_, 0, q0, None, None, T=5.0, dt_record=0.01)
        assert max(abs(x[0]) for _, _, x in traj.samples) < 1e-12
        assert max(abs(x[2]) for _, _, x in traj.samples) < 1e-12

    def test_first_touchdown_time(self):
        sys_ = make_aslip()
        q0 = np.array([0.0, 2.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        traj = simulate_ground_truth(sys_, 0, q0, None, None, T=1.0, dt_record=0.01)
        assert traj.events[0].transition == 0
        assert traj.events[0].t == pytest.approx(math.sqrt(2.0 / 9.8), abs=1e-9)

    def test_stance_energy_conserved(self):
        p = AslipParams()
        sys_ = make_aslip(p)
        q0 = np.array([0.0, 2.5, 0.05, 0.0, 1.0, 0.1, 0.0, 0.0])
        traj = simulate_ground_truth(sys_, 0, slave_toe(p, q0), None, None, T=1.2, dt_record=0.005)
        stance = [x for _, m, x in traj.samples if m == 1]
        assert len(stance) > 10
        E = [stance_energy(p, q) for q in stance]
        assert (max(E) - min(E)) / E[0] < 1e-6

    def test_liftoff_at_rest_length(self):
        p = AslipParams()
        sys_ = make_aslip(p)
        q0 = np.array([0.0, 2.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        traj = simulate_ground_truth(sys_, 0, q0, None, None, T=2.0, dt_record=0.01)
        liftoffs = [e for e in traj.events if e.transition == 1]
        assert liftoffs
        assert leg_length(p, liftoffs[0].x_pre) == pytest.approx(p.l_0, abs=1e-9)

    def test_toe_pinned_during_stance(self):
        sys_ = make_aslip()
        q0 = np.array([0.0, 2.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        traj = simulate_ground_truth(sys_, 0, q0, None, None, T=1.2, dt_record=0.005)
        toe = np.array([x[3:5] for _, m, x in traj.samples if m == 1])
        assert np.ptp(toe[:, 0]) == 0.0
        assert np.ptp(toe[:, 1]) == 0.0

    def test_aerial_toe_slaved(self):
        p = AslipParams()
        sys_ = make_aslip(p)
        q = np.array([0.3, 2.5, 0.2, 9.9, 9.9, 0.5, 0.3, 0.4])  # toe entries bogus
        out, _ = flow(sys_, 0, 0.0, q, 0.05)
        assert np.allclose(out[3:5], slave_toe(p, out)[3:5], atol=1e-12)


class TestDerivativeHygiene:
    """All analytic derivatives agree with central finite differences."""

    @pytest.mark.parametrize("name", ["ball2d", "circle_drop", "aslip"])
    def test_field_jacobians(self, name, rng):
        sys_ = make_system(name)
        for x in random_states(name, rng, 20):
            for mode_id, mode in enumerate(sys_.modes):
                J = mode.jac_x(0.0, x)
                J_fd = fd_jacobian(lambda z: mode.field(0.0, z), x)
                assert np.allclose(J, J_fd, rtol=1e-5, atol=2e-5)

    @pytest.mark.parametrize("name", ["ball2d", "circle_drop", "aslip"])
    def test_guard_gradients(self, name, rng):
        sys_ = make_system(name)
        for x in random_states(name, rng, 20):
            for tr in sys_.transitions:
                g = tr.guard.grad_x(0.0, x)
                g_fd = fd_scalar_gradient(lambda z: tr.guard.value(0.0, z), x)
                assert np.allclose(g, g_fd, rtol=1e-5, atol=2e-5)

    @pytest.mark.parametrize("name", ["ball2d", "circle_drop", "aslip"])
    def test_reset_jacobians(self, name, rng):
        sys_ = make_system(name)
        for x in random_states(name, rng, 20):
            for tr in sys_.transitions:
                th = tr.reset.theta_mean
                J = tr.reset.jac_x(0.0, x, th)
                J_fd = fd_jacobian(lambda z: tr.reset.apply(0.0, z, th), x)
                assert np.allclose(J, J_fd, rtol=1e-5, atol=2e-5)
                if th.size:
                    Jt = tr.reset.jac_theta(0.0, x, th)
                    Jt_fd = fd_jacobian(lambda v: tr.reset.apply(0.0, x, v), th)
                    assert np.allclose(Jt, Jt_fd, rtol=1e-5, atol=2e-5)


class TestRegistry:
    def test_names(self):
        for name in ("ball2d", "circle_drop", "aslip"):
            assert make_system(name) is not None
        with pytest.raises(ValueError):
            make_system("pogo")
