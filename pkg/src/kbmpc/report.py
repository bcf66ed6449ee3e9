"""Run artifacts: CSV logs, JSON metrics and the four summary plots."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .obstacles import read_obstacles_csv, write_obstacles_csv
from .path import read_track_csv, write_track_csv
from .sim import LOG_COLUMNS, PLANNER_COLUMNS, Metrics, SimLog, compute_metrics
from .mpc import CONTROL_FIELDS
from .kinematics import STATE_FIELDS as KBM_FIELDS

LOG_FILE = "log.csv"
PLANNER_FILE = "planner.csv"
TRAJECTORY_FILE = "trajectories.jsonl"
METRICS_FILE = "metrics.json"
TRACK_FILE = "track.csv"
OBSTACLE_FILE = "obstacles.csv"
PLOTS = ("trajectory.png", "speed.png", "steering.png", "torques.png")


def write_log_csv(filename: str | Path, simlog: SimLog) -> None:
    data = np.column_stack([simlog.columns[c] for c in LOG_COLUMNS])
    with Path(filename).open("w", newline="") as f:
        f.write(",".join(LOG_COLUMNS) + "\n")
        np.savetxt(f, data, delimiter=",", fmt="%.17g")


def write_planner_csv(filename: str | Path, simlog: SimLog) -> None:
    with Path(filename).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(PLANNER_COLUMNS)
        for rec in simlog.planner:
            w.writerow([_fmt(rec[c]) for c in PLANNER_COLUMNS])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def read_log_csv(filename: str | Path) -> SimLog:
    """Load a log written by :func:`emit_report`; sibling planner/obstacle files are optional."""
    filename = Path(filename)
    try:
        with filename.open() as f:
            header = f.readline().strip().split(",")
            data = np.loadtxt(f, delimiter=",", ndmin=2)
    except OSError as exc:
        raise OSError(f"cannot read log {filename}: {exc}") from exc
    if header != list(LOG_COLUMNS):
        raise ValueError(f"{filename}: unexpected log header")
    cols = {name: data[:, j].copy() for j, name in enumerate(header)}
    planner = []
    pfile = filename.with_name(PLANNER_FILE)
    if pfile.is_file():
        with pfile.open(newline="") as f:
            for row in csv.DictReader(f):
                rec = {}
                for k, v in row.items():
                    try:
                        rec[k] = float(v)
                    except ValueError:
                        rec[k] = v
                planner.append(rec)
    status = "completed"
    mfile = filename.with_name(METRICS_FILE)
    if mfile.is_file():
        status = json.loads(mfile.read_text()).get("status", status)
    obstacles = []
    ofile = filename.with_name(OBSTACLE_FILE)
    if ofile.is_file():
        obstacles = read_obstacles_csv(ofile)
    return SimLog(cols, planner, [], status, "", obstacles, None)


def _trajectory_record(traj) -> dict:
    d = traj.diagnostics
    return {
        "t0": traj.t0,
        "dt": traj.dt,
        "state_fields": list(KBM_FIELDS),
        "states": traj.states.tolist(),
        "control_fields": list(CONTROL_FIELDS),
        "controls": traj.controls.tolist(),
        "v_heur": traj.v_heur.tolist(),
        "cost": traj.cost,
        "iterations": d.iterations,
        "kkt": d.kkt,
        "converged": d.converged,
        "status": d.status,
        "wall_ms": 1e3 * d.wall_time,
    }


def emit_report(simlog: SimLog, metrics: Metrics | None, out_dir: str | Path,
                plots: bool = True) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    metrics = metrics or compute_metrics(simlog)
    written = []
    try:
        write_log_csv(out / LOG_FILE, simlog)
        write_planner_csv(out / PLANNER_FILE, simlog)
        with (out / TRAJECTORY_FILE).open("w") as f:
            for traj in simlog.trajectories:
                f.write(json.dumps(_trajectory_record(traj)) + "\n")
        m = metrics.to_dict()
        m["message"] = simlog.message
        (out / METRICS_FILE).write_text(json.dumps(_json_safe(m), indent=2) + "\n")
        if simlog.path is not None:
            write_track_csv(out / TRACK_FILE, np.column_stack([simlog.path.x, simlog.path.y]))
        if simlog.obstacles:
            write_obstacles_csv(out / OBSTACLE_FILE, simlog.obstacles)
    except OSError as exc:
        raise OSError(f"writing report to {out}: {exc}") from exc
    written += [out / LOG_FILE, out / PLANNER_FILE, out / TRAJECTORY_FILE, out / METRICS_FILE]
    if plots:
        written += plot_log(simlog, out)
    return written


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def plot_log(simlog: SimLog, out_dir: str | Path, track_file: str | Path | None = None) -> list[Path]:
    """Trajectory overlay, speed tracking, steering split and wheel torques."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    c = simlog.columns
    t = c["t"]
    files = []

    fig, ax = plt.subplots(figsize=(7, 7))
    if simlog.path is not None:
        ax.plot(simlog.path.x, simlog.path.y, "k--", lw=0.8, label="reference path")
    elif track_file is not None and Path(track_file).is_file():
        pts = read_track_csv(track_file)
        ax.plot(pts[:, 0], pts[:, 1], "k--", lw=0.8, label="reference path")
    ax.plot(c["x"], c["y"], "C0", lw=1.2, label="vehicle")
    for ob in simlog.obstacles:
        v = np.asarray(ob.vertices + (ob.vertices[0],))
        ax.fill(v[:, 0], v[:, 1], color="C3", alpha=0.6)
    ax.set_aspect("equal")
    ax.set_xlabel("X [m]")
    ax.set_ylabel("Y [m]")
    ax.legend(loc="best")
    files.append(_save(fig, out / PLOTS[0]))

    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(t, np.hypot(c["vx"], c["vy"]), label="V")
    ax.plot(t, c["v_ref"], label="V_r")
    if simlog.planner:
        tp = [r["t"] for r in simlog.planner]
        ax.step(tp, [r["v_heur"] for r in simlog.planner], where="post", label="V_heur")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("speed [m/s]")
    ax.legend(loc="best")
    files.append(_save(fig, out / PLOTS[1]))

    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(t, c["delta"], label="delta")
    ax.plot(t, c["delta_ol"], label="delta_ol", lw=0.8)
    ax.plot(t, c["delta_cl"], label="delta_cl", lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("steering [rad]")
    ax.legend(loc="best")
    files.append(_save(fig, out / PLOTS[2]))

    fig, ax = plt.subplots(figsize=(9, 4))
    for w in ("fl", "fr", "rl", "rr"):
        ax.plot(t, c[f"torque_{w}"], label=w, lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("wheel torque [N m]")
    ax.legend(loc="best")
    files.append(_save(fig, out / PLOTS[3]))
    return files


def _save(fig, path: Path) -> Path:
    import matplotlib.pyplot as plt

    try:
        fig.tight_layout()
        fig.savefig(path, dpi=110)
    except OSError as exc:
        raise OSError(f"cannot write plot {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path
