"""Nine degree-of-freedom vehicle plant.

Degrees of freedom: chassis (V_x, V_y, yaw rate), carbody roll and pitch, and
the spin of the four wheels. Tire forces come from a Magic Formula with
combined-slip weighting and respect the friction circle; normal loads include
suspension load transfer.

Wheel order is front-left, front-right, rear-left, rear-right. The vehicle
frame has x forward and y to the left, so left wheels sit at ``y = +l_w``.

The integrator works on a flat 14-element state vector laid out as
``STATE_FIELDS``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

STATE_FIELDS = (
    "vx", "vy", "psi", "psi_dot", "roll", "roll_rate", "pitch", "pitch_rate",
    "omega_fl", "omega_fr", "omega_rl", "omega_rr", "x", "y",
)
N_STATE = len(STATE_FIELDS)
EPS_V = 1e-3  # m/s, regularizes slip denominators at standstill


class PlantDivergenceError(RuntimeError):
    """Raised when the plant state stops being finite."""


@dataclass(frozen=True)
class TireCoefficients:
    b_x: float = 10.0
    c_x: float = 1.9
    e_x: float = 0.97
    b_y: float = 9.0
    c_y: float = 1.3
    e_y: float = 0.97


@dataclass(frozen=True)
class PlantParams:
    m: float = 1500.0
    i_x: float = 550.0
    i_y: float = 2400.0
    i_z: float = 2700.0
    i_r: float = 1.2
    l_f: float = 1.2
    l_r: float = 1.7
    l_w: float = 0.8
    h: float = 0.5
    r_eff: float = 0.31
    k_s: float = 30000.0
    d_s: float = 3000.0
    rho_air: float = 1.225
    c_x: float = 0.35
    area: float = 2.2
    mu: float = 1.0
    g: float = 9.81
    tire: TireCoefficients = field(default_factory=TireCoefficients)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "tire":
                continue
            if not getattr(self, f.name) > 0:
                raise ValueError(f"plant parameter {f.name} must be positive")
        if self.mu > 1.2:
            raise ValueError(f"mu must lie in (0, 1.2], got {self.mu}")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    def static_loads(self) -> tuple[float, float]:
        """Static normal load on one front wheel and one rear wheel."""
        w = self.m * self.g
        return w * self.l_r / (2.0 * self.wheelbase), w * self.l_f / (2.0 * self.wheelbase)


@dataclass(frozen=True)
class Dyn9State:
    vx: float = 0.0
    vy: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0
    roll: float = 0.0
    roll_rate: float = 0.0
    pitch: float = 0.0
    pitch_rate: float = 0.0
    omega: tuple = (0.0, 0.0, 0.0, 0.0)
    x: float = 0.0
    y: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([
            self.vx, self.vy, self.psi, self.psi_dot, self.roll, self.roll_rate,
            self.pitch, self.pitch_rate, *self.omega, self.x, self.y,
        ], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Dyn9State":
        a = [float(v) for v in a]
        return cls(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], tuple(a[8:12]), a[12], a[13])

    @classmethod
    def rolling(cls, vx: float, params: PlantParams, x: float = 0.0, y: float = 0.0,
                psi: float = 0.0) -> "Dyn9State":
        """Straight free rolling at ``vx`` with wheel speeds matched to the ground."""
        w = vx / params.r_eff
        return cls(vx=vx, psi=psi, omega=(w, w, w, w), x=x, y=y)


@dataclass(frozen=True)
class PlantInput:
    torques: tuple = (0.0, 0.0, 0.0, 0.0)
    delta: float = 0.0


@dataclass(frozen=True)
class TireForces:
    """Per-wheel forces, each a 4-tuple in wheel order."""

    fxp: tuple
    fyp: tuple
    fx: tuple
    fy: tuple
    fz: tuple
    wheel_lift: bool = False

    def utilization(self, mu: float) -> tuple:
        return tuple(
            math.hypot(a, b) / (mu * z) if z > 0 else 0.0
            for a, b, z in zip(self.fxp, self.fyp, self.fz)
        )


# --- tire quantities --------------------------------------------------------

def slip_ratio(omega: float, v_xp: float, r_eff: float, eps: float = EPS_V) -> float:
    rw = r_eff * omega
    if rw >= v_xp:
        return (rw - v_xp) / max(abs(rw), eps)
    return (rw - v_xp) / max(abs(v_xp), eps)


def _wheel_velocities(vx, vy, r, delta, p):
    """(v_x, v_y) of each wheel hub in the vehicle frame and the wheel steer angles."""
    return (
        (vx - p.l_w * r, vy + p.l_f * r, delta),
        (vx + p.l_w * r, vy + p.l_f * r, delta),
        (vx - p.l_w * r, vy - p.l_r * r, 0.0),
        (vx + p.l_w * r, vy - p.l_r * r, 0.0),
    )


def _slip_angle(wvx, wvy, steer):
    return steer - math.atan2(wvy, max(wvx, EPS_V))


def slip_angles(state: Dyn9State, delta: float, params: PlantParams) -> tuple:
    return tuple(
        _slip_angle(wvx, wvy, st)
        for wvx, wvy, st in _wheel_velocities(state.vx, state.vy, state.psi_dot, delta, params)
    )


def _raw_normal_forces(roll, roll_rate, pitch, pitch_rate, p):
    fs_f, fs_r = p.static_loads()
    sr, cr = math.sin(roll), math.cos(roll)
    sp, cp = math.sin(pitch), math.cos(pitch)
    lat, lat_d = p.l_w * sr, p.l_w * cr * roll_rate
    front, front_d = p.l_f * sp, p.l_f * cp * pitch_rate
    rear, rear_d = p.l_r * sp, p.l_r * cp * pitch_rate
    k, d = p.k_s, p.d_s
    # suspension travel: left corners rise with roll, the nose drops with pitch
    return (
        fs_f - k * (lat - front) - d * (lat_d - front_d),
        fs_f - k * (-lat - front) - d * (-lat_d - front_d),
        fs_r - k * (lat + rear) - d * (lat_d + rear_d),
        fs_r - k * (-lat + rear) - d * (-lat_d + rear_d),
    )


def normal_forces(roll: float, roll_rate: float, pitch: float, pitch_rate: float,
                  params: PlantParams) -> tuple:
    """Wheel loads, clamped at zero when a wheel lifts off."""
    return tuple(max(f, 0.0) for f in _raw_normal_forces(roll, roll_rate, pitch, pitch_rate, params))


def magic_formula(slip: float, b: float, c: float, d: float, e: float) -> float:
    bx = b * slip
    return d * math.sin(c * math.atan(bx - e * (bx - math.atan(bx))))


def tire_forces(tau: float, alpha: float, fz: float, mu: float,
                coeffs: TireCoefficients) -> tuple[float, float]:
    """Combined-slip tire forces (F_xp, F_yp) in the tire frame."""
    if fz <= 0.0:
        return 0.0, 0.0
    c = coeffs
    sigma = math.hypot(tau, alpha)
    if sigma < 1e-12:
        fx = c.b_x * c.c_x * mu * fz * tau
        fy = c.b_y * c.c_y * mu * fz * alpha
    else:
        fx = fz * tau / sigma * magic_formula(sigma, c.b_x, c.c_x, mu, c.e_x)
        fy = fz * alpha / sigma * magic_formula(sigma, c.b_y, c.c_y, mu, c.e_y)
    cap = mu * fz
    norm = math.hypot(fx, fy)
    if norm > cap:
        fx *= cap / norm
        fy *= cap / norm
    return fx, fy


def tire_to_vehicle_frame(fxp: float, fyp: float, fz: float, delta_i: float,
                          roll: float, pitch: float) -> tuple[float, float]:
    cd, sd = math.cos(delta_i), math.sin(delta_i)
    along = fxp * cd - fyp * sd
    across = fyp * cd + fxp * sd
    st, ct = math.sin(roll), math.cos(roll)
    sp, cp = math.sin(pitch), math.cos(pitch)
    fx = along * cp - fz * sp
    fy = along * st * sp + across * ct + fz * st * cp
    return fx, fy


# --- dynamics ---------------------------------------------------------------

def _evaluate(x, torques, delta, p):
    """Right-hand side plus tire diagnostics on a flat state sequence."""
    vx, vy, psi, r, roll, roll_rate, pitch, pitch_rate = x[:8]
    omega = x[8:12]
    raw = _raw_normal_forces(roll, roll_rate, pitch, pitch_rate, p)
    lift = raw[0] <= 0.0 or raw[1] <= 0.0 or raw[2] <= 0.0 or raw[3] <= 0.0
    fz = tuple(max(f, 0.0) for f in raw) if lift else raw

    fxp, fyp, fx, fy = [], [], [], []
    for i, (wvx, wvy, st) in enumerate(_wheel_velocities(vx, vy, r, delta, p)):
        alpha = _slip_angle(wvx, wvy, st)
        v_xp = wvx * math.cos(st) + wvy * math.sin(st)
        tau = slip_ratio(omega[i], v_xp, p.r_eff)
        a, b = tire_forces(tau, alpha, fz[i], p.mu, p.tire)
        fxp.append(a)
        fyp.append(b)
        c, d = tire_to_vehicle_frame(a, b, fz[i], st, roll, pitch)
        fx.append(c)
        fy.append(d)

    # Pairwise sums keep the left/right mirror image exact in floating point.
    sum_fx = (fx[0] + fx[1]) + (fx[2] + fx[3])
    sum_fy = (fy[0] + fy[1]) + (fy[2] + fy[3])
    f_aero = 0.5 * p.rho_air * p.c_x * p.area * vx * abs(vx)
    yaw_moment = (p.l_f * (fy[0] + fy[1]) - p.l_r * (fy[2] + fy[3])
                  + p.l_w * ((fx[1] - fx[0]) + (fx[3] - fx[2])))
    roll_moment = p.l_w * ((fz[0] - fz[1]) + (fz[2] - fz[3])) + p.h * sum_fy
    # Measured from the static loads, whose moments cancel exactly, so rest is an equilibrium.
    fs_f, fs_r = p.static_loads()
    pitch_moment = (p.l_r * ((fz[2] - fs_r) + (fz[3] - fs_r))
                    - p.l_f * ((fz[0] - fs_f) + (fz[1] - fs_f)) - p.h * sum_fx)
    cpsi, spsi = math.cos(psi), math.sin(psi)

    dx = (
        r * vy + (sum_fx - f_aero) / p.m,
        -r * vx + sum_fy / p.m,
        r,
        yaw_moment / p.i_z,
        roll_rate,
        roll_moment / p.i_x,
        pitch_rate,
        pitch_moment / p.i_y,
        (torques[0] - p.r_eff * fxp[0]) / p.i_r,
        (torques[1] - p.r_eff * fxp[1]) / p.i_r,
        (torques[2] - p.r_eff * fxp[2]) / p.i_r,
        (torques[3] - p.r_eff * fxp[3]) / p.i_r,
        vx * cpsi - vy * spsi,
        vx * spsi + vy * cpsi,
    )
    forces = TireForces(tuple(fxp), tuple(fyp), tuple(fx), tuple(fy), tuple(fz), lift)
    return dx, forces


def plant_derivative(state: Dyn9State, inp: PlantInput, params: PlantParams) -> np.ndarray:
    dx, _ = _evaluate(state.to_array().tolist(), inp.torques, inp.delta, params)
    return np.array(dx)


def plant_forces(state: Dyn9State, inp: PlantInput, params: PlantParams) -> TireForces:
    _, forces = _evaluate(state.to_array().tolist(), inp.torques, inp.delta, params)
    return forces


def rk4_plant(x, torques, delta, dt, p):
    """One RK4 step on a flat state list; returns (new_state, forces at step start)."""
    h2 = 0.5 * dt
    n = N_STATE
    k1, forces = _evaluate(x, torques, delta, p)
    k2, _ = _evaluate([x[i] + h2 * k1[i] for i in range(n)], torques, delta, p)
    k3, _ = _evaluate([x[i] + h2 * k2[i] for i in range(n)], torques, delta, p)
    k4, _ = _evaluate([x[i] + dt * k3[i] for i in range(n)], torques, delta, p)
    out = [x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(n)]
    if not all(math.isfinite(v) for v in out):
        dump = ", ".join(f"{name}={v!r}" for name, v in zip(STATE_FIELDS, x))
        raise PlantDivergenceError(
            f"non-finite plant state after step; previous state: {dump}; "
            f"torques={tuple(torques)!r}, delta={delta!r}"
        )
    return out, forces


def plant_step(state: Dyn9State, inp: PlantInput, dt: float, params: PlantParams) -> Dyn9State:
    if dt <= 0:
        raise ValueError("dt must be positive")
    out, _ = rk4_plant(state.to_array().tolist(), inp.torques, inp.delta, dt, params)
    return Dyn9State.from_array(out)


class VehicleSim:
    """Stateful stepper around :func:`rk4_plant` that keeps the last tire forces."""

    def __init__(self, params: PlantParams, state: Dyn9State, dt: float = 1e-3):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.params = params
        self.dt = dt
        self.x = state.to_array().tolist()
        self.last_forces: TireForces | None = None
        self.wheel_lift_seen = False

    @property
    def state(self) -> Dyn9State:
        return Dyn9State.from_array(self.x)

    def step(self, inp: PlantInput) -> TireForces:
        self.x, forces = rk4_plant(self.x, inp.torques, inp.delta, self.dt, self.params)
        self.last_forces = forces
        self.wheel_lift_seen |= forces.wheel_lift
        return forces

    def lateral_acceleration(self, inp: PlantInput) -> float:
        """a_y = V_x * yaw_rate + dV_y/dt at the current state."""
        dx, _ = _evaluate(self.x, inp.torques, inp.delta, self.params)
        return self.x[0] * self.x[3] + dx[1]
