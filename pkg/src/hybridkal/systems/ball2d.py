"""2D point mass bouncing elastically on an inclined plane.

State: [px, py, vx, vy].  Single ballistic mode with a self-transition at the
ground plane.  The ground height enters the guard as an offset along its
normal (standard deviation ``sigma_ground``); the ground angle is an
uncertain reset parameter (standard deviation ``sigma_theta``), optionally
joined by the coefficient of restitution when ``sigma_alpha`` > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..hybrid import GuardFn, HybridSystem, Mode, ResetFn, Transition

# RK4 integrates ballistic flight (and its variational equations) exactly at
# any step size; a coarse step just saves work.
_BALLISTIC_H_MAX = 0.01


@dataclass(frozen=True)
class BallParams:
    a_g: float = 9.8
    theta: float = -0.25          # ground angle, uncertain reset parameter [rad]
    alpha: float = 0.8            # coefficient of restitution
    ground_offset_mean: float = 0.0
    sigma_ground: float = 0.25
    sigma_theta: float = 0.05
    sigma_alpha: float = 0.0      # > 0 exposes alpha as a second reset parameter

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if min(self.sigma_ground, self.sigma_theta, self.sigma_alpha) < 0.0:
            raise ValueError("standard deviations must be nonnegative")


def _reflect(x: np.ndarray, theta: float, alpha: float) -> np.ndarray:
    # Remove (1 + alpha) times the velocity component along the ground normal
    # n = (-sin t, cos t); the tangential component is untouched.
    s, c = math.sin(theta), math.cos(theta)
    vn = x[3] * c - x[2] * s
    return np.array([
        x[0],
        x[1],
        x[2] + s * (1.0 + alpha) * vn,
        x[3] - c * (1.0 + alpha) * vn,
    ])


def make_bouncing_ball(p: BallParams = BallParams()) -> HybridSystem:
    """Build the elastic-ball hybrid system with analytic derivatives."""
    a_g = p.a_g
    theta0 = p.theta
    alpha0 = p.alpha
    with_alpha = p.sigma_alpha > 0.0

    def field(t, x):
        return np.array([x[2], x[3], 0.0, -a_g])

    jac = np.zeros((4, 4))
    jac[0, 2] = 1.0
    jac[1, 3] = 1.0

    def field_jac(t, x):
        return jac

    s0, c0 = math.sin(theta0), math.cos(theta0)
    grad_g = np.array([-s0, c0, 0.0, 0.0])
    offset = p.ground_offset_mean

    def guard_value(t, x):
        return x[1] * c0 - x[0] * s0 - offset

    mode = Mode(field=field, jac_x=field_jac, dim=4, h_max=_BALLISTIC_H_MAX)

    def reset_apply(t, x, th):
        alpha = th[1] if with_alpha else alpha0
        return _reflect(x, th[0], alpha)

    def reset_jac_x(t, x, th):
        alpha = th[1] if with_alpha else alpha0
        s, c = math.sin(th[0]), math.cos(th[0])
        k = 1.0 + alpha
        J = np.eye(4)
        J[2, 2] = 1.0 - k * s * s
        J[2, 3] = k * s * c
        J[3, 2] = k * s * c
        J[3, 3] = 1.0 - k * c * c
        return J

    def reset_jac_theta(t, x, th):
        alpha = th[1] if with_alpha else alpha0
        s, c = math.sin(th[0]), math.cos(th[0])
        k = 1.0 + alpha
        vn = x[3] * c - x[2] * s
        dvn = -x[3] * s - x[2] * c  # d vn / d theta
        col_theta = np.array([
            0.0,
            0.0,
            c * k * vn + s * k * dvn,
            s * k * vn - c * k * dvn,
        ])
        if not with_alpha:
            return col_theta.reshape(4, 1)
        col_alpha = np.array([0.0, 0.0, s * vn, -c * vn])
        return np.column_stack([col_theta, col_alpha])

    def reset_jac_t(t, x, th):
        return np.zeros(4)

    if with_alpha:
        theta_mean = np.array([theta0, alpha0])
        sigma_theta = np.diag([p.sigma_theta**2, p.sigma_alpha**2])
    else:
        theta_mean = np.array([theta0])
        sigma_theta = np.array([[p.sigma_theta**2]])

    transition = Transition(
        from_mode=0,
        to_mode=0,
        guard=GuardFn(
            value=guard_value,
            grad_x=lambda t, x: grad_g,
            grad_t=lambda t, x: 0.0,
            sigma_g=p.sigma_ground,
        ),
        reset=ResetFn(
            apply=reset_apply,
            jac_x=reset_jac_x,
            jac_t=reset_jac_t,
            jac_theta=reset_jac_theta,
            theta_mean=theta_mean,
            sigma_theta=sigma_theta,
        ),
    )
    return HybridSystem(modes=[mode], transitions=[transition])
