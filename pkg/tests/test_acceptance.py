"""End-to-end acceptance gates; each prints one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from kbmpc.config import load_scenario
from kbmpc.kinematics import (IDELTA, IV, KbmInput, KbmParams, integrate_step,
                              lateral_acceleration)
from kbmpc.mpc import DTOL, U1, U2, MpcConfig, build_problem, solve
from kbmpc.sim import LOG_COLUMNS, run_scenario, steady_circle
from kbmpc.track import load_track_spec
from kbmpc.vehicle import Dyn9State, PlantParams, VehicleSim, normal_forces

import test_kinematics
import test_mpc
import test_vehicle
from conftest import SCENARIOS

G = 9.81
MU = 1.0


@pytest.fixture
def report(capsys):
    def _report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return _report


def _timed_run(name):
    tic = time.perf_counter()
    simlog, metrics = run_scenario(load_scenario(SCENARIOS / name))
    return simlog, metrics, time.perf_counter() - tic


@pytest.fixture(scope="module")
def track_run():
    return _timed_run("curves_no_obstacles.toml")


@pytest.fixture(scope="module")
def obstacle_run():
    return _timed_run("curves_obstacles.toml")


def test_criterion_1_validity_bound(report):
    lines, ok = [], True
    for radius in (10.0, 20.0, 30.0, 50.0):
        tic = time.perf_counter()
        for frac in (0.3, 0.5):
            res = steady_circle(radius, frac * MU * G)
            ok &= res.mismatch <= 0.10
            lines.append(f"R={radius:g} {frac}g {100 * res.mismatch:.1f}%")
        if radius == 10.0:
            res = steady_circle(radius, 0.85 * MU * G)
            ok &= res.mismatch > 0.10
            lines.append(f"R=10 0.85g {100 * res.mismatch:.1f}% (needs >10%)")
        ok &= time.perf_counter() - tic < 60.0
    assert report(1, ok, "; ".join(lines))


def test_criterion_2_track_without_obstacles(track_run, report):
    simlog, m, wall = track_run
    ok = (m.completed and m.max_lateral_error <= 0.4
          and m.max_lateral_acceleration <= 0.55 * MU * G and wall <= 120.0)
    assert report(2, ok, f"status={m.status} max|e_lat|={m.max_lateral_error:.3f} m "
                         f"max a_y={m.max_lateral_acceleration:.2f} m/s^2 "
                         f"(bound {0.55 * MU * G:.3f}) runtime={wall:.0f} s")


def test_criterion_3_track_with_obstacles(obstacle_run, report):
    simlog, m, wall = obstacle_run
    n_obs = len(simlog.obstacles)
    ok = (m.completed and n_obs >= 3 and m.min_obstacle_clearance is not None
          and m.min_obstacle_clearance > 0.0 and m.max_lateral_error <= 0.4
          and m.max_lateral_acceleration <= 0.55 * MU * G and wall <= 120.0)
    assert report(3, ok, f"status={m.status} obstacles={n_obs} "
                         f"min clearance={m.min_obstacle_clearance:.3f} m "
                         f"max|e_lat|={m.max_lateral_error:.3f} m "
                         f"max a_y={m.max_lateral_acceleration:.2f} m/s^2 runtime={wall:.0f} s")


def test_criterion_4_real_time(track_run, obstacle_run, report):
    worst = max(track_run[1].mpc_wall_max_ms, obstacle_run[1].mpc_wall_max_ms)
    mean = max(track_run[1].mpc_wall_mean_ms, obstacle_run[1].mpc_wall_mean_ms)
    assert report(4, worst < 100.0, f"max MPC wall time {worst:.1f} ms, mean {mean:.1f} ms")


def _curve_entries():
    """Arc-length spans from the start to the midpoint of every R = 10 m arc."""
    segments, *_ = load_track_spec(SCENARIOS / "curves_track.toml")
    spans, s = [], 0.0
    for seg in segments:
        if seg.kind == "straight":
            s += seg.length
            continue
        length = seg.radius * math.radians(abs(seg.angle_deg))
        if seg.radius == 10.0:
            spans.append((s, s + 0.5 * length))
        s += length
    return spans


def test_criterion_5_velocity_heuristic(track_run, obstacle_run, report):
    bound = math.sqrt(0.5 * MU * G * 10.0) + 0.1
    worst_in_curve, rate_violations, checked = 0.0, 0, 0
    cfg = load_scenario(SCENARIOS / "curves_no_obstacles.toml")
    v_max = min(cfg.velocity.v_max, abs(cfg.mpc.u1_min) * cfg.mpc.horizon)
    for simlog, _, _ in (track_run, obstacle_run):
        arcs = _curve_entries()
        for rec in simlog.planner:
            cap = min(v_max, rec["v"] + cfg.velocity.dv)
            if rec["v_heur_max"] > cap + 1e-9:
                rate_violations += 1
            if any(a <= rec["s0"] <= b for a, b in arcs):
                checked += 1
                worst_in_curve = max(worst_in_curve, rec["v_heur"])
    ok = checked > 0 and worst_in_curve <= bound and rate_violations == 0
    assert report(5, ok, f"max V_heur entering R=10 curves {worst_in_curve:.3f} m/s (bound {bound:.3f}, "
                         f"{checked} cycles); rate/cap violations {rate_violations}")


def test_criterion_6_planner_feasibility(track_run, obstacle_run, report):
    kin = KbmParams()
    worst_dyn, worst_ay, n = 0.0, 0.0, 0
    for simlog, _, _ in (track_run, obstacle_run):
        for traj in simlog.trajectories:
            n += 1
            for k in range(len(traj.controls)):
                nxt = integrate_step(traj.state(k), KbmInput(traj.controls[k, U1],
                                                             traj.controls[k, U2]), traj.dt, kin)
                worst_dyn = max(worst_dyn, float(np.max(np.abs(nxt.to_array() - traj.states[k + 1]))))
                if traj.controls[k, DTOL] < 1e-4:
                    s = traj.states[k + 1]
                    worst_ay = max(worst_ay, abs(lateral_acceleration(s[IV], s[IDELTA], kin)))
    ok = n > 0 and worst_dyn < 1e-8 and worst_ay <= 0.5 * MU * G * 1.01
    assert report(6, ok, f"{n} trajectories: dynamics residual {worst_dyn:.2e}, "
                         f"max a_y where delta_tol<1e-4 {worst_ay:.3f} (bound {0.5 * MU * G * 1.01:.3f})")


def test_criterion_7_plant_physics(track_run, obstacle_run, report):
    p = PlantParams()
    util = max(r[0].columns["utilization"].max() for r in (track_run, obstacle_run))
    load_err = abs(sum(normal_forces(0.0, 0.0, 0.0, 0.0, p)) - p.m * p.g)

    s0 = Dyn9State(vx=12.0, vy=0.2, psi=0.1, psi_dot=0.05, roll=0.003,
                   omega=(39.0, 38.5, 38.9, 38.6), x=1.0, y=2.0)
    a = test_vehicle._maneuver(VehicleSim(p, s0), 10000)
    b = test_vehicle._maneuver(VehicleSim(p, Dyn9State.from_array(test_vehicle._mirror(s0.to_array()))),
                               10000, mirror=True)
    mirror = float(np.max(np.abs(test_vehicle._mirror(b) - a)))

    pa, pb, pc = (test_vehicle._plant_run(h) for h in (5e-4, 2.5e-4, 1.25e-4))
    plant_ratio = np.max(np.abs(pa - pb)) / np.max(np.abs(pb - pc))
    kbm_ratio = test_kinematics._rk4_global_error(0.04) / test_kinematics._rk4_global_error(0.02)

    ok = (util <= 1 + 1e-6 and load_err <= 1e-9 and mirror <= 1e-9
          and 12 < plant_ratio < 20 and 12 < kbm_ratio < 20)
    assert report(7, ok, f"max utilization {util:.6f}; static sum Fz error {load_err:.1e} N; "
                         f"mirror error {mirror:.1e}; step-halving ratios plant {plant_ratio:.1f}, "
                         f"KBM {kbm_ratio:.1f}")


def test_criterion_8_solver_correctness(straight_path, curve_path, report):
    kin = KbmParams()
    cfg = MpcConfig()
    rng = np.random.default_rng(2024)
    worst_grad = 0.0
    for path, s0 in ((straight_path, 10.0), (curve_path, 45.0), (curve_path, 5.0)):
        prob = build_problem(np.array([s0, s0, rng.uniform(-0.3, 0.3), rng.uniform(6, 14),
                                       rng.uniform(-0.05, 0.05), 0.0]),
                             path, rng.uniform(5, 15, cfg.n_stages), [], kin, cfg)
        W = test_mpc._random_w(rng, prob.N)
        g = prob.gradient(W)
        w = W.ravel()
        fd = np.empty_like(w)
        for i in range(len(w)):
            e = np.zeros_like(w)
            e[i] = 1e-6
            fd[i] = (prob.cost((w + e).reshape(W.shape)) - prob.cost((w - e).reshape(W.shape))) / 2e-6
        worst_grad = max(worst_grad, float(np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd)))))

    kkts = []
    for v0, vh in ((15.0, 15.0), (12.0, 14.0), (14.0, 12.0)):
        traj = solve(build_problem(np.array([10.0, 10.0, 0.0, v0, 0.0, 0.0]), straight_path, vh,
                                   [], kin, cfg))
        if traj.diagnostics.converged:
            kkts.append(traj.diagnostics.kkt)

    prob, _ = test_mpc._obstacle_problem(straight_path)
    mpc_cost = solve(prob).cost
    oracle = test_mpc._grid_oracle(prob)
    ok = (worst_grad <= 1e-5 and len(kkts) == 3 and max(kkts) < 1e-6
          and mpc_cost <= oracle + 1e-9)
    assert report(8, ok, f"gradient rel. error {worst_grad:.1e}; converged KKT "
                         f"{max(kkts) if kkts else float('nan'):.1e} ({len(kkts)}/3); "
                         f"obstacle cost {mpc_cost:.4f} vs grid oracle {oracle:.4f}")


def test_criterion_9_determinism(track_run, report):
    again, _, _ = _timed_run("curves_no_obstacles.toml")
    first = track_run[0]
    same = all(np.array_equal(first.columns[c], again.columns[c], equal_nan=True)
               for c in LOG_COLUMNS)
    planner_same = [
        {k: v for k, v in r.items() if k not in ("wall_ms", "s_pred")} for r in first.planner
    ] == [
        {k: v for k, v in r.items() if k not in ("wall_ms", "s_pred")} for r in again.planner
    ]
    assert report(9, same and planner_same,
                  f"{len(first.columns['t'])} plant steps, {len(first.planner)} planner cycles "
                  f"bit-identical: log={same} planner={planner_same}")
