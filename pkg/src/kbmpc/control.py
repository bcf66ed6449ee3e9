"""Low-level tracking of the planned trajectory at the controller rate.

Longitudinal: PID on the speed error producing a force demand, turned into
wheel torques (front-wheel drive, four-wheel braking). Lateral: the planner's
first steering rate integrated open loop, plus a PID on the yaw error
projected one planner stage ahead.

The yaw error compares measured and planned yaw, each projected ahead with its
own yaw rate, and the derivative term uses the yaw-rate error directly. Both
choices make the closed-loop part vanish when the plan is followed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import IDELTA, IPSI, IV, KbmParams, rk4_step, slip_angle_beta
from .mpc import U1, U2, PlannedTrajectory
from .path import wrap_angle


@dataclass(frozen=True)
class PidGains:
    k_p: float
    k_i: float
    k_d: float
    integrator_limit: float = 5.0
    derivative_tau: float = 0.05  # s

    def __post_init__(self):
        if min(self.k_p, self.k_i, self.k_d) < 0:
            raise ValueError("PID gains must be non-negative")
        if self.integrator_limit <= 0:
            raise ValueError("integrator_limit must be positive")
        if self.derivative_tau < 0:
            raise ValueError("derivative_tau must be non-negative")


LONGITUDINAL_GAINS = PidGains(k_p=2000.0, k_i=200.0, k_d=50.0)
LATERAL_GAINS = PidGains(k_p=0.8, k_i=0.05, k_d=0.1, integrator_limit=0.5)


@dataclass(frozen=True)
class ActuatorLimits:
    drive_torque: float = 800.0  # N m per front wheel
    brake_torque: float = 550.0  # N m per wheel
    delta_mech: float = 0.55  # rad
    steer_rate: float = 1.5  # rad/s, u2 bound times the configured scale


@dataclass(frozen=True)
class ActuatorCommand:
    torques: tuple
    delta: float


def interpolate_reference(traj: PlannedTrajectory, t: float) -> tuple[float, float, bool]:
    """Reference speed and yaw at ``t``; the flag is set when ``t`` is past the plan end."""
    times = traj.times
    stale = t > times[-1] + 1e-9
    psi = np.unwrap(traj.states[:, IPSI])
    v_r = float(np.interp(t, times, traj.states[:, IV]))
    psi_r = float(np.interp(t, times, psi))
    return v_r, psi_r, bool(stale)


class LongitudinalPid:
    """u = -K_P e - K_I int(e) - K_D dV/dt with e = V - V_r.

    The derivative acts on the measured speed through a first-order filter,
    so steps in V_r at planner refresh do not kick the output.
    """

    def __init__(self, gains: PidGains = LONGITUDINAL_GAINS):
        self.gains = gains
        self.integral = 0.0
        self.rate = 0.0
        self._last_v: float | None = None

    def reset(self):
        self.integral = 0.0
        self.rate = 0.0
        self._last_v = None

    def update(self, v: float, v_r: float, dt: float) -> float:
        if dt <= 0:
            raise ValueError("dt must be positive")
        g = self.gains
        e = v - v_r
        lim = g.integrator_limit
        self.integral = min(max(self.integral + e * dt, -lim), lim)
        if self._last_v is not None:
            raw = (v - self._last_v) / dt
            a = dt / (g.derivative_tau + dt)
            self.rate += a * (raw - self.rate)
        self._last_v = v
        return -g.k_p * e - g.k_i * self.integral - g.k_d * self.rate


def reference_state(traj: PlannedTrajectory, t: float, params: KbmParams) -> np.ndarray:
    """Planned state at ``t``, integrating the stage controls from the last knot."""
    if t >= traj.t_end:
        return traj.states[-1].copy()
    k = int(math.floor((t - traj.t0) / traj.dt + 1e-9))
    k = min(max(k, 0), len(traj.controls) - 1)
    tau = t - (traj.t0 + k * traj.dt)
    if tau <= 1e-12:
        return traj.states[k].copy()
    return np.array(rk4_step(traj.states[k], traj.controls[k, U1], traj.controls[k, U2], tau,
                             params))


def yaw_rate(x, params: KbmParams) -> float:
    return x[IV] * math.sin(slip_angle_beta(x[IDELTA], params)) / params.l_r


def reference_acceleration(traj: PlannedTrajectory, t: float) -> float:
    """Planned u1 of the stage containing ``t`` (held piecewise constant)."""
    k = int(math.floor((t - traj.t0) / traj.dt + 1e-9))
    k = min(max(k, 0), len(traj.controls) - 1)
    return float(traj.controls[k, U1])


def longitudinal_control(pid: LongitudinalPid, v: float, v_r: float, dt: float,
                         feedforward: float = 0.0) -> float:
    """PID force demand plus an optional feedforward force (mass times planned acceleration)."""
    return feedforward + pid.update(v, v_r, dt)


def dispatch_torques(force_demand: float, r_eff: float,
                     limits: ActuatorLimits | None = None) -> tuple:
    """Drive on the two front wheels, brake on all four."""
    total = force_demand * r_eff
    if total >= 0.0:
        each = total / 2.0
        if limits is not None:
            each = min(each, limits.drive_torque)
        return (each, each, 0.0, 0.0)
    each = total / 4.0
    if limits is not None:
        each = max(each, -limits.brake_torque)
    return (each, each, each, each)


class LateralController:
    """delta = delta_ol + delta_cl, clamped and rate limited."""

    def __init__(self, gains: PidGains = LATERAL_GAINS, limits: ActuatorLimits = ActuatorLimits(),
                 lookahead: float = 0.2, params: KbmParams = KbmParams()):
        self.gains = gains
        self.limits = limits
        self.lookahead = lookahead
        self.params = params
        self.delta_ol = 0.0
        self.delta_cl = 0.0
        self.delta = 0.0
        self.integral = 0.0
        self._u2 = 0.0

    def refresh(self, traj: PlannedTrajectory):
        """Re-anchor the open-loop part on a newly published plan."""
        self.delta_ol = float(traj.states[0, IDELTA])
        self._u2 = float(traj.controls[0, U2])

    def update(self, traj: PlannedTrajectory, psi: float, psi_dot: float, t: float,
               dt: float) -> float:
        if dt <= 0:
            raise ValueError("dt must be positive")
        g = self.gains
        lim = self.limits
        self.delta_ol += self._u2 * dt
        self.delta_ol = min(max(self.delta_ol, -lim.delta_mech), lim.delta_mech)

        ref = reference_state(traj, t, self.params)
        rate_r = yaw_rate(ref, self.params)
        la = self.lookahead
        e = float(wrap_angle(psi + psi_dot * la - (ref[IPSI] + rate_r * la)))
        self.integral = min(max(self.integral + e * dt, -g.integrator_limit), g.integrator_limit)
        # derivative from the measured yaw rate; differencing e would feed the
        # steering straight back through psi_dot
        de = psi_dot - rate_r
        self.delta_cl = -(g.k_p * e + g.k_i * self.integral + g.k_d * de)

        target = min(max(self.delta_ol + self.delta_cl, -lim.delta_mech), lim.delta_mech)
        step = lim.steer_rate * dt
        self.delta = min(max(target, self.delta - step), self.delta + step)
        return self.delta


def lateral_control(ctrl: LateralController, traj: PlannedTrajectory, psi: float,
                    psi_dot: float, t: float, dt: float) -> float:
    return ctrl.update(traj, psi, psi_dot, t, dt)
