"""Planar asymmetric spring-loaded inverted-pendulum hopper.

State: q = [x_b, y_b, th_b, x_t, y_t, xd_b, yd_b, thd_b] -- body position,
body pitch, toe position, body velocities.  Toe velocities are not state:
in flight the toe is kinematically slaved to the body pose at rest leg
length l_0 and rest hip angle phi_0; in stance the toe is pinned.

Geometry: the hip sits at body-frame offset l_b from the center of mass,
hip = (x_b + l_b sin th, y_b - l_b cos th); the leg runs from the hip to the
toe with length l and absolute angle psi = atan2(w_x, -w_y) for
w = toe - hip, so the hip angle is phi = psi - th.

Stance dynamics come from the Lagrangian of the pinned-toe model (body mass
and inertia only, leg massless) with potential
m a_g y + 1/2 k_l (l0 - l)^2 + 1/2 k_h (phi0 - phi)^2; since the mass matrix
is constant diagonal, the accelerations are gradient forces divided by
m_b / I_b.  The closed-form expressions and their Jacobian below are
machine-generated from that Lagrangian and are pinned by the
finite-difference and energy-conservation tests.

Touchdown fires when the toe reaches the (uncertain) ground height, pinning
the toe with an identity reset on q.  Liftoff fires when the leg recovers
its rest length; the reset re-slaves the toe to the body pose, which is
identity on body states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..hybrid import GuardFn, HybridSystem, Mode, ResetFn, Transition

_AERIAL_H_MAX = 5e-3
# RK4 at 2.5e-3 keeps the stance energy drift near 1e-10 relative per phase,
# four orders under the 1e-6 budget.
_STANCE_H_MAX = 2.5e-3


@dataclass(frozen=True)
class AslipParams:
    m_b: float = 1.0
    a_g: float = 9.8
    l_b: float = 0.5
    I_b: float = 1.0
    k_h: float = 100.0
    k_l: float = 100.0
    l_0: float = 1.0
    phi_0: float = 0.0
    ground_height: float = 0.0
    sigma_ground: float = 0.01

    def __post_init__(self):
        if min(self.m_b, self.I_b, self.k_h, self.k_l, self.l_0, self.l_b) <= 0:
            raise ValueError("masses, inertias, stiffnesses and lengths must be positive")
        if self.sigma_ground < 0:
            raise ValueError("sigma_ground must be nonnegative")


def leg_vector(p: AslipParams, q) -> tuple[float, float]:
    """w = toe - hip in world coordinates."""
    s, c = math.sin(q[2]), math.cos(q[2])
    return q[3] - q[0] - p.l_b * s, q[4] - q[1] + p.l_b * c


def leg_length(p: AslipParams, q) -> float:
    wx, wy = leg_vector(p, q)
    return math.hypot(wx, wy)


def hip_angle(p: AslipParams, q) -> float:
    wx, wy = leg_vector(p, q)
    return math.atan2(wx, -wy) - q[2]


def stance_energy(p: AslipParams, q) -> float:
    """Kinetic + gravitational + spring energy of the pinned-toe model."""
    kin = 0.5 * p.m_b * (q[5] ** 2 + q[6] ** 2) + 0.5 * p.I_b * q[7] ** 2
    pot = p.m_b * p.a_g * q[1]
    pot += 0.5 * p.k_l * (p.l_0 - leg_length(p, q)) ** 2
    pot += 0.5 * p.k_h * (p.phi_0 - hip_angle(p, q)) ** 2
    return kin + pot


def _stance_accels(p: AslipParams, x, y, th, ptx, pty):
    m, ag, lb, Ib = p.m_b, p.a_g, p.l_b, p.I_b
    kh, kl, l0, phi0 = p.k_h, p.k_l, p.l_0, p.phi_0
    x1 = math.cos(th)
    x4 = math.sin(th)
    x3 = pty + lb * x1 - y           # w_y
    x6 = -ptx + x + lb * x4          # -w_x
    x9 = x6 * x6 + x3 * x3           # l^2
    x10 = 1.0 / x9
    x13 = phi0 + th - math.atan2(-x6, -x3)   # phi0 - phi
    x14 = kh * x13
    x15 = x10 * x14
    x16 = math.sqrt(x9)
    x18 = kl * (l0 - x16)
    x19 = x18 / x16
    x23 = x3 * x4 + x1 * (-x6)
    x24 = lb * x23
    x27 = lb * (x1 * x3 + x4 * x6) * x10 - 1.0
    ax = (x15 * x3 + x19 * x6) / m
    ay = -(ag * m - x15 * x6 + x19 * x3) / m
    ath = -(-x14 * x27 + x19 * x24) / Ib
    return ax, ay, ath


def _stance_accel_jac(p: AslipParams, x, y, th, ptx, pty):
    """3 x 5 Jacobian of (ax, ay, ath) w.r.t. (x, y, th, ptx, pty)."""
    m, ag, lb, Ib = p.m_b, p.a_g, p.l_b, p.I_b
    kh, kl, l0, phi0 = p.k_h, p.k_l, p.l_0, p.phi_0
    x0 = 1.0 / m
    x1 = math.cos(th)
    x2 = lb * x1
    x3 = pty + x2 - y
    x4 = math.sin(th)
    x5 = lb * x4
    x6 = -ptx + x + x5
    x7 = x6 * x6
    x8 = x3 * x3
    x9 = x7 + x8
    x10 = 1.0 / x9
    x11 = -x6
    x12 = -x3
    x13 = phi0 + th - math.atan2(x11, x12)
    x14 = kh * x13
    x15 = x10 * x14
    x16 = math.sqrt(x9)
    x17 = l0 - x16
    x18 = kl * x17
    x19 = x18 / x16
    x20 = 1.0 / Ib
    x21 = x3 * x4
    x22 = x1 * x11
    x23 = x21 + x22
    x24 = lb * x23
    x25 = x10 * x6
    x26 = x10 * x3
    x27 = x2 * x26 + x25 * x5 - 1.0
    x28 = -x27
    x29 = x10 * x10
    x30 = kh * x29
    x31 = kl * x10
    x32 = -x19
    x33 = 1.0 / (x16 * x9)
    x34 = x18 * x33
    x35 = x3 * x6
    x36 = 2.0 * x14 * x29
    x37 = x35 * x36
    x38 = x30 * x8 + x31 * x7 + x32 + x34 * x7 + x37
    x39 = -x30 * x35 + x31 * x35 + x34 * x35
    x40 = -kh * x10 * x13 + x36 * x8 + x39
    x41 = x1 * x6
    x42 = -x3 * x4 + x41
    x43 = -x42
    x44 = lb * x43
    x45 = x34 * x6
    x46 = x3 * x44
    x47 = kh * x28
    x48 = x24 * x31
    x49 = x19 * x2 + x26 * x47 + x48 * x6
    x50 = x0 * (x15 - x36 * x7 + x39)
    x51 = x0 * (x30 * x7 + x31 * x8 + x32 + x34 * x8 - x37)
    x52 = -x19 * x5
    x53 = x4 * x6
    x54 = x12 * x12
    x55 = 1.0 / (x11 * x11 + x54)
    x56 = 2.0 * x55
    x57 = x12 * x56
    x58 = lb * x14 * x55
    x59 = x24 * x45 + x49
    x60 = 2.0 * x10
    x61 = lb * x15
    x62 = x24 * x3 * x34 - x25 * x47 + x3 * x48 + x52
    x63 = lb * lb
    x64 = x12 * x4
    x65 = x22 - x64
    x66 = x56 * x6

    J = np.zeros((3, 5))
    J[0, 0] = -x0 * x38
    J[0, 1] = x0 * x40
    J[0, 2] = -x0 * (kh * lb * x10 * x13 * x4 - x36 * x46 - x44 * x45 - x49)
    J[0, 3] = x0 * x38
    J[0, 4] = -x0 * x40
    J[1, 0] = x50
    J[1, 1] = -x51
    J[1, 2] = x0 * (kh * lb * x1 * x10 * x13 - kh * x25 * x27
                    + kl * lb * x17 * x3 * x33 * x42 - lb * x36 * x42 * x6
                    - x31 * x46 - x52)
    J[1, 3] = -x50
    J[1, 4] = x51
    J[2, 0] = x20 * (x58 * (x11 * x53 * x56 - x22 * x57 + x4) + x59)
    J[2, 1] = -x20 * (x61 * (-x1 * x60 * x8 + x1 - 2.0 * x21 * x25) + x62)
    J[2, 2] = -x20 * (kh * x28 * x28
                      - lb * x19 * (lb * x1 * x1 + lb * x4 * x4 - x1 * x3 - x53)
                      + x23 * x23 * x31 * x63 + x23 * x34 * x43 * x63
                      - x58 * (-x2 * x57 * x65 + x41 + x5 * x65 * x66 + x64))
    J[2, 3] = -x20 * (x59 + x61 * (-2.0 * x26 * x41 - x4 * x60 * x7 + x4))
    J[2, 4] = -x20 * (-x58 * (-x1 * x54 * x56 + x1 + x64 * x66) - x62)
    return J


def _toe_offsets(p: AslipParams, th: float) -> tuple[float, float]:
    """(d x_t / d th, d y_t / d th) of the slaved toe position."""
    return (
        p.l_b * math.cos(th) + p.l_0 * math.cos(th + p.phi_0),
        p.l_b * math.sin(th) + p.l_0 * math.sin(th + p.phi_0),
    )


def slave_toe(p: AslipParams, q: np.ndarray) -> np.ndarray:
    """Return q with the toe placed at rest leg length and rest hip angle."""
    out = np.array(q, dtype=float)
    th = q[2]
    out[3] = q[0] + p.l_b * math.sin(th) + p.l_0 * math.sin(th + p.phi_0)
    out[4] = q[1] - p.l_b * math.cos(th) - p.l_0 * math.cos(th + p.phi_0)
    return out


def _slave_jac(p: AslipParams, q: np.ndarray) -> np.ndarray:
    J = np.eye(8)
    J[3, 3] = J[4, 4] = 0.0
    dx, dy = _toe_offsets(p, q[2])
    J[3, 0] = 1.0
    J[3, 2] = dx
    J[4, 1] = 1.0
    J[4, 2] = dy
    return J


def make_aslip(p: AslipParams = AslipParams()) -> HybridSystem:
    """Build the hopper with analytic derivatives for both modes."""

    def aerial_field(t, q):
        dx, dy = _toe_offsets(p, q[2])
        thd = q[7]
        return np.array([
            q[5], q[6], thd,
            q[5] + dx * thd,
            q[6] + dy * thd,
            0.0, -p.a_g, 0.0,
        ])

    def aerial_jac(t, q):
        dx, dy = _toe_offsets(p, q[2])
        J = np.zeros((8, 8))
        J[0, 5] = J[1, 6] = J[2, 7] = 1.0
        J[3, 5] = 1.0
        J[3, 2] = -dy * q[7]   # d(dx)/dth = -dy
        J[3, 7] = dx
        J[4, 6] = 1.0
        J[4, 2] = dx * q[7]    # d(dy)/dth = dx
        J[4, 7] = dy
        return J

    aerial = Mode(
        field=aerial_field,
        jac_x=aerial_jac,
        dim=8,
        h_max=_AERIAL_H_MAX,
        project=lambda t, q: slave_toe(p, q),
        project_jac=lambda t, q: _slave_jac(p, q),
    )

    def stance_field(t, q):
        ax, ay, ath = _stance_accels(p, q[0], q[1], q[2], q[3], q[4])
        return np.array([q[5], q[6], q[7], 0.0, 0.0, ax, ay, ath])

    def stance_jac(t, q):
        J = np.zeros((8, 8))
        J[0, 5] = J[1, 6] = J[2, 7] = 1.0
        J[5:8, 0:5] = _stance_accel_jac(p, q[0], q[1], q[2], q[3], q[4])
        return J

    stance = Mode(field=stance_field, jac_x=stance_jac, dim=8, h_max=_STANCE_H_MAX)

    touchdown = Transition(
        from_mode=0,
        to_mode=1,
        guard=GuardFn(
            value=lambda t, q: q[4] - p.ground_height,
            grad_x=lambda t, q: np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            grad_t=lambda t, q: 0.0,
            sigma_g=p.sigma_ground,
        ),
        reset=ResetFn(
            apply=lambda t, q, th: np.array(q, dtype=float),
            jac_x=lambda t, q, th: np.eye(8),
            jac_t=lambda t, q, th: np.zeros(8),
            jac_theta=lambda t, q, th: np.zeros((8, 0)),
        ),
    )

    def liftoff_guard(t, q):
        return p.l_0 - leg_length(p, q)

    def liftoff_guard_grad(t, q):
        wx, wy = leg_vector(p, q)
        l = math.hypot(wx, wy)
        s, c = math.sin(q[2]), math.cos(q[2])
        g = np.zeros(8)
        # -d l / d q; d l/d(x,y) = (-wx, -wy)/l, d l/d th = -l_b (wx c + wy s)/l
        g[0] = wx / l
        g[1] = wy / l
        g[2] = p.l_b * (wx * c + wy * s) / l
        g[3] = -wx / l
        g[4] = -wy / l
        return g

    liftoff = Transition(
        from_mode=1,
        to_mode=0,
        guard=GuardFn(
            value=liftoff_guard,
            grad_x=liftoff_guard_grad,
            grad_t=lambda t, q: 0.0,
            sigma_g=0.0,
        ),
        reset=ResetFn(
            apply=lambda t, q, th: slave_toe(p, q),
            jac_x=lambda t, q, th: _slave_jac(p, q),
            jac_t=lambda t, q, th: np.zeros(8),
            jac_theta=lambda t, q, th: np.zeros((8, 0)),
        ),
    )

    return HybridSystem(modes=[aerial, stance], transitions=[touchdown, liftoff])
