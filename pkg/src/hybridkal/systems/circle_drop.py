"""Point mass dropping plastically onto a circle of uncertain radius.

State: [px, py, vx, vy], circle centered at the origin.  Two modes:

* aerial -- ballistic flight; impact guard ||p|| - r with the radius
  standard deviation as guard uncertainty;
* constrained -- sliding on the circle with the multiplier lambda chosen so
  the radial acceleration is zero; liftoff guard is lambda itself, which
  fires when holding the constraint would require pulling the mass inward.

The plastic impact removes the velocity component along the surface normal.
The normal direction is parameterized by the radius through the tangent
angle at the impact point (sin = px / r), so the radius is both the guard
offset parameter and the reset parameter of the impact transition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..hybrid import GuardFn, HybridSystem, Mode, ResetFn, Transition

_BALLISTIC_H_MAX = 0.01
_CONSTRAINED_H_MAX = 1e-3


@dataclass(frozen=True)
class CircleParams:
    radius_mean: float = 2.0
    sigma_radius: float = 0.25
    a_g: float = 9.8

    def __post_init__(self):
        if self.radius_mean <= 0:
            raise ValueError("radius_mean must be positive")
        if self.sigma_radius < 0:
            raise ValueError("sigma_radius must be nonnegative")


def _lambda_terms(a_g: float, x: np.ndarray):
    px, py, vx, vy = x
    s2 = px * px + py * py
    s = math.sqrt(s2)
    u = px * vx + py * vy
    q = vx * vx + vy * vy
    return px, py, vx, vy, s, s2, u, q


def constraint_multiplier(a_g: float, x: np.ndarray) -> float:
    """Force per unit mass along the outward radial direction required to
    hold the radial acceleration at zero.

    lambda = (a_g py - |v|^2 + (p.v)^2 / |p|^2) / |p|; the (p.v)^2 term
    keeps states slightly off the constraint from drifting quadratically.
    Positive lambda means the surface pushes outward.
    """
    px, py, vx, vy, s, s2, u, q = _lambda_terms(a_g, x)
    return (a_g * py - q + u * u / s2) / s


def _lambda_gradient(a_g: float, x: np.ndarray) -> np.ndarray:
    px, py, vx, vy, s, s2, u, q = _lambda_terms(a_g, x)
    s3 = s * s2
    core = a_g * py - q + u * u / s2
    d_px = (2.0 * u * vx / s2 - 2.0 * u * u * px / (s2 * s2)) / s - core * px / s3
    d_py = (a_g + 2.0 * u * vy / s2 - 2.0 * u * u * py / (s2 * s2)) / s - core * py / s3
    d_vx = (-2.0 * vx + 2.0 * u * px / s2) / s
    d_vy = (-2.0 * vy + 2.0 * u * py / s2) / s
    return np.array([d_px, d_py, d_vx, d_vy])


def make_circle_drop(p: CircleParams = CircleParams()) -> HybridSystem:
    """Build the circle-drop hybrid system with analytic derivatives."""
    a_g = p.a_g
    r0 = p.radius_mean

    # Aerial mode: ballistic.
    def aerial_field(t, x):
        return np.array([x[2], x[3], 0.0, -a_g])

    aerial_jac = np.zeros((4, 4))
    aerial_jac[0, 2] = 1.0
    aerial_jac[1, 3] = 1.0
    aerial = Mode(field=aerial_field, jac_x=lambda t, x: aerial_jac, dim=4,
                  h_max=_BALLISTIC_H_MAX)

    # Constrained mode: gravity plus the radial constraint force.
    def constrained_field(t, x):
        px, py, vx, vy, s, s2, u, q = _lambda_terms(a_g, x)
        lam = (a_g * py - q + u * u / s2) / s
        return np.array([vx, vy, lam * px / s, -a_g + lam * py / s])

    def constrained_jac(t, x):
        px, py, vx, vy, s, s2, u, q = _lambda_terms(a_g, x)
        lam = (a_g * py - q + u * u / s2) / s
        grad = _lambda_gradient(a_g, x)
        n = np.array([px / s, py / s])
        # d(n)/d(p) = (I - n n^T) / s
        dn = (np.eye(2) - np.outer(n, n)) / s
        J = np.zeros((4, 4))
        J[0, 2] = 1.0
        J[1, 3] = 1.0
        J[2:, :] = np.outer(n, grad)
        J[2:, :2] += lam * dn
        return J

    constrained = Mode(field=constrained_field, jac_x=constrained_jac, dim=4,
                       h_max=_CONSTRAINED_H_MAX)

    # Impact: guard ||p|| - r0, uncertainty = radius spread along the normal.
    def impact_guard(t, x):
        return math.hypot(x[0], x[1]) - r0

    def impact_guard_grad(t, x):
        s = math.hypot(x[0], x[1])
        return np.array([x[0] / s, x[1] / s, 0.0, 0.0])

    def _normal(px: float, r: float) -> tuple[float, float]:
        n1 = px / r
        return n1, math.sqrt(max(1.0 - n1 * n1, 1e-12))

    def impact_reset(t, x, th):
        n1, n2 = _normal(x[0], th[0])
        vn = x[2] * n1 + x[3] * n2
        return np.array([x[0], x[1], x[2] - vn * n1, x[3] - vn * n2])

    def impact_jac_x(t, x, th):
        r = th[0]
        n1, n2 = _normal(x[0], r)
        vn = x[2] * n1 + x[3] * n2
        dn1 = 1.0 / r
        dn2 = -n1 / n2 * dn1
        dvn = x[2] * dn1 + x[3] * dn2
        J = np.eye(4)
        J[2, 0] = -dvn * n1 - vn * dn1
        J[3, 0] = -dvn * n2 - vn * dn2
        J[2, 2] = 1.0 - n1 * n1
        J[2, 3] = -n1 * n2
        J[3, 2] = -n1 * n2
        J[3, 3] = 1.0 - n2 * n2
        return J

    def impact_jac_theta(t, x, th):
        r = th[0]
        n1, n2 = _normal(x[0], r)
        vn = x[2] * n1 + x[3] * n2
        dn1 = -x[0] / (r * r)
        dn2 = -n1 / n2 * dn1
        dvn = x[2] * dn1 + x[3] * dn2
        return np.array([
            [0.0],
            [0.0],
            [-dvn * n1 - vn * dn1],
            [-dvn * n2 - vn * dn2],
        ])

    impact = Transition(
        from_mode=0,
        to_mode=1,
        guard=GuardFn(
            value=impact_guard,
            grad_x=impact_guard_grad,
            grad_t=lambda t, x: 0.0,
            sigma_g=p.sigma_radius,
        ),
        reset=ResetFn(
            apply=impact_reset,
            jac_x=impact_jac_x,
            jac_t=lambda t, x, th: np.zeros(4),
            jac_theta=impact_jac_theta,
            theta_mean=np.array([r0]),
            sigma_theta=np.array([[p.sigma_radius**2]]),
            # One physical radius: a sampled surface shift d puts the surface
            # at r0 + d, which is also the radius the reset normal sees.
            theta_from_offset=lambda d: np.array([r0 + d]),
        ),
    )

    liftoff = Transition(
        from_mode=1,
        to_mode=0,
        guard=GuardFn(
            value=lambda t, x: constraint_multiplier(a_g, x),
            grad_x=lambda t, x: _lambda_gradient(a_g, x),
            grad_t=lambda t, x: 0.0,
            sigma_g=0.0,
        ),
        reset=ResetFn(
            apply=lambda t, x, th: x.copy(),
            jac_x=lambda t, x, th: np.eye(4),
            jac_t=lambda t, x, th: np.zeros(4),
            jac_theta=lambda t, x, th: np.zeros((4, 0)),
        ),
    )

    return HybridSystem(modes=[aerial, constrained], transitions=[impact, liftoff])
