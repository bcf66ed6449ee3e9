"""Closed-loop scenario runner.

One deterministic timeline drives three rates: the plant steps every
``plant_dt``, the low-level controllers run every ``control_dt`` and the
planner every ``planner_dt``. The planner's output is applied at the cycle
boundary where it was requested; its wall time is only recorded.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ScenarioConfig
from .control import (LateralController, LongitudinalPid, dispatch_torques,
                      interpolate_reference, longitudinal_control, reference_acceleration)
from .kinematics import IX, IY, KbmParams, delta_for_radius
from .mpc import (PlannedTrajectory, PlanningError, SolverError, build_problem,
                  initial_guess, predicted_arc_lengths, solve)
from .obstacles import fit_parabola, polygon_signed_distance, read_obstacles_csv
from .path import ReferencePath, build_path, project, read_track_csv
from .vehicle import (STATE_FIELDS, Dyn9State, PlantDivergenceError, PlantInput, PlantParams,
                      VehicleSim)
from .velocity import VelocityPlannerConfig, heuristic_speed, straight_line_vmax

log = logging.getLogger(__name__)

WHEELS = ("fl", "fr", "rl", "rr")
LOG_COLUMNS = (
    ("t",) + STATE_FIELDS
    + tuple(f"torque_{w}" for w in WHEELS)
    + ("delta", "delta_ol", "delta_cl", "v_ref", "psi_ref", "x_ref", "y_ref", "s", "lat_err")
    + tuple(f"fxp_{w}" for w in WHEELS)
    + tuple(f"fyp_{w}" for w in WHEELS)
    + tuple(f"fz_{w}" for w in WHEELS)
    + ("utilization", "clearance", "wheel_lift", "fallback")
)
PLANNER_COLUMNS = ("t", "s0", "v", "v_heur", "v_heur_max", "iterations", "kkt", "converged",
                   "cost", "wall_ms", "status", "failures")
ATTITUDE_LIMIT = 0.15  # rad, roll/pitch beyond this counts as divergence


@dataclass
class SimLog:
    columns: dict  # name -> 1-D array, one entry per plant step
    planner: list = field(default_factory=list)  # one dict per planner cycle
    trajectories: list = field(default_factory=list)  # PlannedTrajectory per published plan
    status: str = "completed"
    message: str = ""
    obstacles: list = field(default_factory=list)
    path: ReferencePath | None = None

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]


@dataclass
class Metrics:
    max_lateral_error: float
    max_lateral_acceleration: float
    mpc_wall_max_ms: float
    mpc_wall_mean_ms: float
    min_obstacle_clearance: float | None
    max_utilization: float
    completed: bool
    status: str = "completed"
    duration: float = 0.0
    planner_cycles: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def plant_to_kbm(x, path: ReferencePath, hint_s: float, delta: float):
    """KBM planning state from a flat plant state: V = |(V_x, V_y)|, s by projection."""
    proj = project(path, (x[12], x[13]), hint_s=hint_s, heading=x[2], window=30.0)
    v = math.hypot(x[0], x[1])
    return np.array([proj.s, x[12], x[13], v, x[2], delta]), proj


def _effective_velocity_config(cfg: ScenarioConfig) -> VelocityPlannerConfig:
    cap = straight_line_vmax(cfg.velocity, cfg.mpc.u1_min, cfg.mpc.horizon)
    v = cfg.velocity
    return VelocityPlannerConfig(v_max=min(v.v_max, cap), dv=v.dv, t_prev=v.t_prev,
                                 min_preview=v.min_preview, mu=v.mu, g=v.g)


def run_scenario(cfg: ScenarioConfig, duration: float | None = None,
                 use_obstacles: bool = True) -> tuple[SimLog, Metrics]:
    duration = cfg.duration if duration is None else duration
    path = build_path(read_track_csv(cfg.track), cfg.resample_spacing)
    obstacles = read_obstacles_csv(cfg.obstacles) if (use_obstacles and cfg.obstacles) else []
    regions = [fit_parabola(o, path) for o in obstacles]
    pp, kin, mcfg = cfg.plant, cfg.kinematics, cfg.mpc
    vcfg = _effective_velocity_config(cfg)
    limits = cfg.actuator_limits()

    x0, y0 = path.position(0.0)
    sim = VehicleSim(pp, Dyn9State.rolling(cfg.initial_speed, pp, float(x0), float(y0),
                                           float(path.heading_at(0.0))), cfg.plant_dt)
    lon = LongitudinalPid(cfg.longitudinal)
    lat = LateralController(cfg.lateral, limits, lookahead=mcfg.dt, params=cfg.kinematics)

    n_steps = int(round(duration / cfg.plant_dt))
    cols = {name: np.zeros(n_steps) for name in LOG_COLUMNS}
    planner, trajectories = [], []
    traj: PlannedTrajectory | None = None
    failures = 0
    fallback = False
    status, message = "completed", ""
    s_hint = 0.0
    s_track = 0.0
    torques, delta = (0.0, 0.0, 0.0, 0.0), 0.0
    v_r = psi_r = x_r = y_r = math.nan
    ce, pe = cfg.control_every, cfg.planner_every
    n = 0

    for i in range(n_steps):
        t = i * cfg.plant_dt
        x = sim.x
        if i % ce == 0:
            k = i // ce
            if k % pe == 0 and not fallback:
                x_kbm, proj = plant_to_kbm(x, path, s_hint, lat.delta_ol)
                s_hint = proj.s
                rec, traj_new, done, err = _plan_cycle(t, x_kbm, traj, path, regions, kin, mcfg,
                                                       vcfg)
                if done:
                    message = str(err)
                    break
                if traj_new is not None:
                    traj = traj_new
                    failures = 0
                    lat.refresh(traj)
                    trajectories.append(traj)
                else:
                    failures += 1
                    log.warning("planner failure at t=%.2f: %s", t, err)
                    if failures >= 2 or traj is None:
                        fallback = True
                        status, message = "aborted", f"planner failed twice: {err}"
                rec["failures"] = failures
                planner.append(rec)

            v = math.hypot(x[0], x[1])
            if fallback:
                if v < 0.5:
                    break
                torques = (-limits.brake_torque,) * 4
                step = limits.steer_rate * cfg.control_dt
                delta = min(max(0.0, delta - step), delta + step)
            else:
                v_r, psi_r, _ = interpolate_reference(traj, t)
                x_r = float(np.interp(t, traj.times, traj.states[:, IX]))
                y_r = float(np.interp(t, traj.times, traj.states[:, IY]))
                ff = pp.m * reference_acceleration(traj, t)
                force = longitudinal_control(lon, v, v_r, cfg.control_dt, ff)
                torques = dispatch_torques(force, pp.r_eff, limits)
                delta = lat.update(traj, x[2], x[3], t, cfg.control_dt)

        try:
            forces = sim.step(PlantInput(torques, delta))
        except PlantDivergenceError as exc:
            status, message = "diverged", str(exc)
            break

        proj = project(path, (x[12], x[13]), hint_s=s_track, window=10.0)
        s_track = proj.s
        row = cols
        row["t"][i] = t
        for j, name in enumerate(STATE_FIELDS):
            row[name][i] = x[j]
        for j, w in enumerate(WHEELS):
            row[f"torque_{w}"][i] = torques[j]
            row[f"fxp_{w}"][i] = forces.fxp[j]
            row[f"fyp_{w}"][i] = forces.fyp[j]
            row[f"fz_{w}"][i] = forces.fz[j]
        row["delta"][i] = delta
        row["delta_ol"][i] = lat.delta_ol
        row["delta_cl"][i] = lat.delta_cl
        row["v_ref"][i] = v_r
        row["psi_ref"][i] = psi_r
        row["x_ref"][i] = x_r
        row["y_ref"][i] = y_r
        row["s"][i] = proj.s
        row["lat_err"][i] = proj.lateral_offset
        row["utilization"][i] = max(forces.utilization(pp.mu))
        row["clearance"][i] = (min(polygon_signed_distance(o.vertices, (x[12], x[13]))
                                   for o in obstacles) if obstacles else math.inf)
        row["wheel_lift"][i] = float(forces.wheel_lift)
        row["fallback"][i] = float(fallback)
        n = i + 1

        if abs(sim.x[4]) > ATTITUDE_LIMIT or abs(sim.x[6]) > ATTITUDE_LIMIT:
            status, message = "diverged", f"roll/pitch beyond {ATTITUDE_LIMIT} rad at t={t:.3f}"
            break

    cols = {name: arr[:n].copy() for name, arr in cols.items()}
    simlog = SimLog(cols, planner, trajectories, status, message, obstacles, path)
    return simlog, compute_metrics(simlog)


def _plan_cycle(t, x_kbm, prev, path, regions, kin, mcfg, vcfg):
    """One planner cycle; returns (record, trajectory or None, reached_end, error)."""
    tic = time.perf_counter()
    W0 = initial_guess(mcfg.n_stages, prev, t)
    s_pred = predicted_arc_lengths(x_kbm, W0, kin, mcfg)
    v_meas = float(x_kbm[3])
    v_heur = np.array([heuristic_speed(v_meas, s, path, vcfg) for s in s_pred])
    rec = {"t": t, "s0": float(x_kbm[0]), "v": v_meas, "v_heur": float(v_heur[0]),
           "v_heur_max": float(v_heur.max()), "iterations": 0, "kkt": math.nan,
           "converged": False, "cost": math.nan, "wall_ms": math.nan, "status": "",
           "failures": 0}
    try:
        problem = build_problem(x_kbm, path, v_heur, regions, kin, mcfg)
    except PlanningError as exc:
        return rec, None, True, exc
    try:
        traj = solve(problem, W0, t0=t)
        if not (np.all(np.isfinite(traj.states)) and np.all(np.isfinite(traj.controls))):
            raise SolverError("non-finite trajectory")
    except (SolverError, ValueError, ArithmeticError) as exc:
        rec.update(status=f"failed: {exc}", wall_ms=1e3 * (time.perf_counter() - tic))
        return rec, None, False, exc
    d = traj.diagnostics
    rec.update(iterations=d.iterations, kkt=d.kkt, converged=d.converged, cost=traj.cost,
               status=d.status, wall_ms=1e3 * d.wall_time)
    rec["s_pred"] = s_pred
    return rec, traj, False, None


def lateral_acceleration_series(cols: dict) -> np.ndarray:
    """a_y = V_x * yaw_rate + dV_y/dt in the chassis frame."""
    t, vy = cols["t"], cols["vy"]
    if len(t) < 2:
        return np.zeros(len(t))
    return cols["vx"] * cols["psi_dot"] + np.gradient(vy, t)


def compute_metrics(simlog: SimLog) -> Metrics:
    cols = simlog.columns
    if len(cols["t"]) == 0:
        raise ValueError("empty log")
    a_y = lateral_acceleration_series(cols)
    walls = np.array([r["wall_ms"] for r in simlog.planner if np.isfinite(r["wall_ms"])])
    clearance = cols["clearance"]
    min_clear = float(clearance.min()) if np.isfinite(clearance).any() else None
    return Metrics(
        max_lateral_error=float(np.max(np.abs(cols["lat_err"]))),
        max_lateral_acceleration=float(np.max(np.abs(a_y))),
        mpc_wall_max_ms=float(walls.max()) if len(walls) else 0.0,
        mpc_wall_mean_ms=float(walls.mean()) if len(walls) else 0.0,
        min_obstacle_clearance=min_clear,
        max_utilization=float(cols["utilization"].max()),
        completed=simlog.status == "completed",
        status=simlog.status,
        duration=float(cols["t"][-1]),
        planner_cycles=len(simlog.planner),
    )


# --- constant-radius validity test ------------------------------------------

@dataclass(frozen=True)
class CircleResult:
    radius: float
    speed: float
    a_lat_target: float
    delta_applied: float  # mean steering over the averaging window
    delta_kinematic: float
    mismatch: float  # |delta_applied - delta_kinematic| / delta_kinematic
    radius_measured: float
    a_lat_measured: float


def steady_circle(radius: float, a_lat: float, plant: PlantParams = PlantParams(),
                  kin: KbmParams | None = None, duration: float = 20.0,
                  average: float = 3.0) -> CircleResult:
    """Drive the plant around a circle at the speed giving ``a_lat`` and record the steering.

    A speed PID holds V = sqrt(a_lat * R); steering is the kinematic angle plus a
    feedback on distance to the circle and course error, with integral action so
    the settled steering is whatever the plant needs to hold the radius.
    """
    kin = kin or KbmParams(l_f=plant.l_f, l_r=plant.l_r, mu=plant.mu, g=plant.g)
    v_target = math.sqrt(a_lat * radius)
    d_th = delta_for_radius(radius, kin)
    sim = VehicleSim(plant, Dyn9State.rolling(v_target, plant))
    pid = LongitudinalPid()
    cx, cy = 0.0, radius  # left turn from the origin heading +x
    ctrl_dt = 0.01
    every = int(round(ctrl_dt / sim.dt))
    n = int(round(duration / sim.dt))
    n_avg = int(round(average / ctrl_dt))
    integral = 0.0
    torques, delta = (0.0,) * 4, d_th
    rec = []
    for i in range(n):
        if i % every == 0:
            x = sim.x
            dist = math.hypot(x[12] - cx, x[13] - cy)
            e = dist - radius
            tangent = math.atan2(x[13] - cy, x[12] - cx) + math.pi / 2
            course_err = math.remainder(x[2] + math.atan2(x[1], x[0]) - tangent, 2 * math.pi)
            integral += e * ctrl_dt
            delta = d_th + 0.05 * e + 0.02 * integral - 0.8 * course_err
            delta = min(max(delta, -kin.delta_mech), kin.delta_mech)
            v = math.hypot(x[0], x[1])
            torques = dispatch_torques(pid.update(v, v_target, ctrl_dt), plant.r_eff)
            rec.append((delta, dist, v, x[0] * x[3]))
        sim.step(PlantInput(torques, delta))
    h = np.array(rec[-n_avg:])
    d_a = float(h[:, 0].mean())
    return CircleResult(radius=radius, speed=v_target, a_lat_target=a_lat, delta_applied=d_a,
                        delta_kinematic=d_th, mismatch=abs(d_a - d_th) / d_th,
                        radius_measured=float(h[:, 1].mean()),
                        a_lat_measured=float(h[:, 3].mean()))
