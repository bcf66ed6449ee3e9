"""Kinematic bicycle model used by the planner.

State vector layout (``STATE_FIELDS``): ``[s, X, Y, V, psi, delta]``, with the
curvilinear abscissa ``s`` advancing at ``V``. Inputs are the acceleration
``u1`` and the front steering rate ``u2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_FIELDS = ("s", "x", "y", "v", "psi", "delta")
IS, IX, IY, IV, IPSI, IDELTA = range(6)


@dataclass(frozen=True)
class KbmParams:
    l_f: float = 1.2
    l_r: float = 1.7
    delta_mech: float = 0.55
    mu: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        if self.l_f <= 0 or self.l_r <= 0:
            raise ValueError("axle distances must be positive")
        if not 0 < self.mu <= 1.2:
            raise ValueError(f"mu must lie in (0, 1.2], got {self.mu}")
        if not 0 < self.delta_mech < math.pi / 2:
            raise ValueError("delta_mech must lie in (0, pi/2)")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    @property
    def a_lat_max(self) -> float:
        """Validity bound on lateral acceleration, 0.5 * mu * g."""
        return 0.5 * self.mu * self.g


@dataclass(frozen=True)
class KbmState:
    s: float = 0.0
    x: float = 0.0
    y: float = 0.0
    v: float = 0.0
    psi: float = 0.0
    delta: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.s, self.x, self.y, self.v, self.psi, self.delta])

    @classmethod
    def from_array(cls, a) -> "KbmState":
        return cls(*(float(v) for v in a[:6]))


@dataclass(frozen=True)
class KbmInput:
    u1: float = 0.0
    u2: float = 0.0


def slip_angle_beta(delta: float, params: KbmParams) -> float:
    if abs(delta) >= math.pi / 2:
        raise ValueError(f"steering angle {delta} outside (-pi/2, pi/2)")
    return math.atan(math.tan(delta) * params.l_r / params.wheelbase)


def _rhs(x, u1, u2, l_r, k_beta):
    v = x[3]
    beta = math.atan(math.tan(x[5]) * k_beta)
    heading = x[4] + beta
    return (
        v,
        v * math.cos(heading),
        v * math.sin(heading),
        u1,
        v / l_r * math.sin(beta),
        u2,
    )


def kbm_derivative(state: KbmState, inp: KbmInput, params: KbmParams) -> np.ndarray:
    slip_angle_beta(state.delta, params)  # domain check
    x = state.to_array()
    return np.array(_rhs(x, inp.u1, inp.u2, params.l_r, params.l_r / params.wheelbase))


def rk4_step(x, u1: float, u2: float, dt: float, params: KbmParams) -> tuple:
    """One RK4 step on a plain 6-sequence; speed is clamped at zero afterwards."""
    l_r = params.l_r
    kb = l_r / params.wheelbase
    h2 = 0.5 * dt
    k1 = _rhs(x, u1, u2, l_r, kb)
    x2 = [x[i] + h2 * k1[i] for i in range(6)]
    k2 = _rhs(x2, u1, u2, l_r, kb)
    x3 = [x[i] + h2 * k2[i] for i in range(6)]
    k3 = _rhs(x3, u1, u2, l_r, kb)
    x4 = [x[i] + dt * k3[i] for i in range(6)]
    k4 = _rhs(x4, u1, u2, l_r, kb)
    out = [x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(6)]
    if out[3] < 0.0:
        out[3] = 0.0
    return tuple(out)


def _jac(x, l_r, k_beta):
    """Jacobian of the right-hand side with respect to the state."""
    v, psi, delta = x[3], x[4], x[5]
    t = math.tan(delta)
    beta = math.atan(t * k_beta)
    dbeta = k_beta * (1.0 + t * t) / (1.0 + (k_beta * t) ** 2)
    c, s = math.cos(psi + beta), math.sin(psi + beta)
    sb, cb = math.sin(beta), math.cos(beta)
    J = np.zeros((6, 6))
    J[0, 3] = 1.0
    J[1, 3], J[1, 4], J[1, 5] = c, -v * s, -v * s * dbeta
    J[2, 3], J[2, 4], J[2, 5] = s, v * c, v * c * dbeta
    J[4, 3], J[4, 5] = sb / l_r, v / l_r * cb * dbeta
    return J


_FU = np.zeros((6, 2))
_FU[3, 0] = 1.0
_FU[5, 1] = 1.0


def rk4_step_jacobian(x, u1: float, u2: float, dt: float, params: KbmParams):
    """RK4 step plus its exact sensitivities ``A = dx+/dx`` and ``B = dx+/du``."""
    l_r = params.l_r
    kb = l_r / params.wheelbase
    x = np.asarray(x, dtype=float)
    h2 = 0.5 * dt
    k1 = np.array(_rhs(x, u1, u2, l_r, kb))
    J1 = _jac(x, l_r, kb)
    x2 = x + h2 * k1
    k2 = np.array(_rhs(x2, u1, u2, l_r, kb))
    J2 = _jac(x2, l_r, kb)
    x3 = x + h2 * k2
    k3 = np.array(_rhs(x3, u1, u2, l_r, kb))
    J3 = _jac(x3, l_r, kb)
    x4 = x + dt * k3
    k4 = np.array(_rhs(x4, u1, u2, l_r, kb))
    J4 = _jac(x4, l_r, kb)

    eye = np.eye(6)
    K1x, K1u = J1, _FU
    K2x = J2 @ (eye + h2 * K1x)
    K2u = J2 @ (h2 * K1u) + _FU
    K3x = J3 @ (eye + h2 * K2x)
    K3u = J3 @ (h2 * K2u) + _FU
    K4x = J4 @ (eye + dt * K3x)
    K4u = J4 @ (dt * K3u) + _FU
    A = eye + dt / 6.0 * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
    B = dt / 6.0 * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)

    # Same arithmetic order as rk4_step so both paths agree bit for bit.
    out = np.array(rk4_step(x, u1, u2, dt, params))
    if out[3] == 0.0:
        A[3, :] = 0.0
        B[3, :] = 0.0
    return out, A, B


def integrate_step(state: KbmState, inp: KbmInput, dt: float, params: KbmParams) -> KbmState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return KbmState(*rk4_step(state.to_array(), inp.u1, inp.u2, dt, params))


def delta_for_radius(radius: float, params: KbmParams) -> float:
    """Kinematic steering angle that produces a steady turn of ``radius``."""
    if radius <= params.l_r:
        raise ValueError(f"radius {radius} must exceed l_r = {params.l_r}")
    return math.atan((params.l_f / params.l_r + 1.0) * math.tan(math.asin(params.l_r / radius)))


def delta_max(v: float, params: KbmParams) -> float:
    """Largest steering angle keeping the lateral acceleration under 0.5 mu g."""
    if v <= 0.0:
        return params.delta_mech
    arg = params.a_lat_max * params.l_r / (v * v)
    if arg >= 1.0:
        return params.delta_mech
    d = math.atan((params.l_f / params.l_r + 1.0) * math.tan(math.asin(arg)))
    return min(params.delta_mech, d)


def delta_max_and_slope(v: float, params: KbmParams) -> tuple[float, float]:
    """``delta_max(v)`` and its derivative with respect to ``v``."""
    if v <= 0.0:
        return params.delta_mech, 0.0
    arg = params.a_lat_max * params.l_r / (v * v)
    if arg >= 1.0:
        return params.delta_mech, 0.0
    ratio = params.l_f / params.l_r + 1.0
    a = math.asin(arg)
    ta = math.tan(a)
    d = math.atan(ratio * ta)
    if d >= params.delta_mech:
        return params.delta_mech, 0.0
    darg = -2.0 * arg / v
    da = darg / math.sqrt(1.0 - arg * arg)
    dta = (1.0 + ta * ta) * da
    dd = ratio * dta / (1.0 + (ratio * ta) ** 2)
    return d, dd


def lateral_acceleration(v: float, delta: float, params: KbmParams) -> float:
    """Steady-state lateral acceleration V^2 sin(beta) / l_r of the model."""
    return v * v * math.sin(slip_angle_beta(delta, params)) / params.l_r
