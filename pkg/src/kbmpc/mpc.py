"""Kinematic-bicycle MPC planner.

The finite-horizon problem is transcribed by single shooting: the decision
variables are, per stage ``j``, ``[u1, u2, obs_tol, x_tol, y_tol, delta_tol]``
and the states follow from an RK4 rollout, so the dynamics hold exactly at
every iterate. It is solved by SQP with a Gauss-Newton Hessian and an l1
merit line search; each QP subproblem goes to ``quadprog``.

Stage ``j`` controls act on ``[t_j, t_j + dt)`` and its slacks relax the
constraints on the state reached at the end of the stage, ``xi_{j+1}``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import quadprog

from .kinematics import (IDELTA, IPSI, IS, IV, IX, IY, KbmParams, KbmState,
                         delta_max_and_slope, rk4_step, rk4_step_jacobian)
from .obstacles import ParabolaRegion
from .path import ReferencePath

U1, U2, OBS, XTOL, YTOL, DTOL = range(6)
CONTROL_FIELDS = ("u1", "u2", "obs_tol", "x_tol", "y_tol", "delta_tol")
NV = 6  # decision variables per stage


class PlanningError(RuntimeError):
    """The problem cannot be set up (for example the path is too short)."""


class SolverError(RuntimeError):
    """The SQP iteration produced a non-finite iterate."""


@dataclass(frozen=True)
class MpcConfig:
    horizon: float = 3.0  # s
    dt: float = 0.2  # s
    q_v: float = 4.0
    q_delta: float = 10.0
    q_delta_rate: float = 0.2
    q_x: float = 5.0
    q_y: float = 5.0
    q_obs: float = 100.0
    q_delta_tol: float = 100.0
    u1_min: float = -8.0
    u1_max: float = 6.0
    u2_min: float = -0.5
    u2_max: float = 0.5
    x_tol_max: float = 0.5  # m, longitudinal deviation allowed before x_tol is charged
    y_tol_max: float = 0.0  # m, lateral deviation allowed before y_tol is charged
    road_half_width: float = 3.0  # m, hard lateral bound
    max_iter: int = 10
    kkt_tol: float = 1e-6
    obstacle_window: float = 15.0  # m beyond the reachable arc-length span

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("horizon and dt must be positive")
        weights = (self.q_v, self.q_delta, self.q_delta_rate, self.q_x, self.q_y,
                   self.q_obs, self.q_delta_tol)
        if min(weights) < 0:
            raise ValueError("weights must be non-negative")
        if not (self.u1_min < 0 < self.u1_max and self.u2_min < 0 < self.u2_max):
            raise ValueError("input bounds must bracket zero")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @property
    def n_stages(self) -> int:
        """N_u = N_y = T_H / dt + 1."""
        return int(round(self.horizon / self.dt)) + 1


@dataclass
class SolveDiagnostics:
    iterations: int = 0
    kkt: float = math.inf
    converged: bool = False
    status: str = ""
    wall_time: float = 0.0
    merit_history: list = field(default_factory=list)
    hard_relaxed: bool = False


@dataclass
class PlannedTrajectory:
    t0: float
    dt: float
    states: np.ndarray  # (N + 1, 6)
    controls: np.ndarray  # (N, 6)
    v_heur: np.ndarray  # (N,), target for states 1..N
    cost: float
    diagnostics: SolveDiagnostics

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self.states) - 1)

    def state(self, k: int) -> KbmState:
        return KbmState.from_array(self.states[k])


def first_stage_controls(traj: PlannedTrajectory) -> tuple[float, float]:
    if len(traj.controls) == 0:
        raise ValueError("empty trajectory")
    return float(traj.controls[0, U1]), float(traj.controls[0, U2])


# --- problem ----------------------------------------------------------------

class MpcProblem:
    """NLP for one planning cycle, evaluated on a decision matrix ``W`` of shape (N, 6)."""

    def __init__(self, x0, path: ReferencePath, v_heur, obstacles, params: KbmParams,
                 cfg: MpcConfig):
        self.x0 = np.asarray(x0, dtype=float)
        self.path = path
        self.v_heur = np.asarray(v_heur, dtype=float)
        self.obstacles = list(obstacles)
        self.params = params
        self.cfg = cfg
        self.N = cfg.n_stages
        if self.v_heur.shape != (self.N,):
            raise ValueError(f"v_heur must have {self.N} entries")
        n = self.N
        self.lower = np.tile([cfg.u1_min, cfg.u2_min, 0.0, 0.0, 0.0, 0.0], n)
        self.upper = np.tile([cfg.u1_max, cfg.u2_max, np.inf, np.inf, np.inf, np.inf], n)
        self._sq = np.sqrt([cfg.q_v, cfg.q_delta, cfg.q_delta_rate, cfg.q_obs, cfg.q_x,
                            cfg.q_y, cfg.q_delta_tol])
        self.n_soft_per_stage = 6 + len(self.obstacles)
        self.n_hard_per_stage = 4

    # rollout --------------------------------------------------------------
    def rollout(self, W) -> np.ndarray:
        X = np.empty((self.N + 1, 6))
        X[0] = self.x0
        x = tuple(self.x0)
        for j in range(self.N):
            x = rk4_step(x, W[j, U1], W[j, U2], self.cfg.dt, self.params)
            X[j + 1] = x
        return X

    def rollout_sensitivities(self, W):
        """States and ``S[k] = d xi_k / d(u1_0, u2_0, ..., u1_{N-1}, u2_{N-1})``."""
        N = self.N
        X = np.empty((N + 1, 6))
        S = np.zeros((N + 1, 6, 2 * N))
        X[0] = self.x0
        for j in range(N):
            X[j + 1], A, B = rk4_step_jacobian(X[j], W[j, U1], W[j, U2], self.cfg.dt, self.params)
            S[j + 1, :, : 2 * j] = A @ S[j, :, : 2 * j]
            S[j + 1, :, 2 * j: 2 * j + 2] = B
        return X, S

    # cost -----------------------------------------------------------------
    def residuals(self, W, X) -> np.ndarray:
        sq = self._sq
        return np.concatenate([
            sq[0] * (X[1:, IV] - self.v_heur),
            sq[1] * X[1:, IDELTA],
            sq[2] * W[:, U2],
            sq[3] * W[:, OBS],
            sq[4] * W[:, XTOL],
            sq[5] * W[:, YTOL],
            sq[6] * W[:, DTOL],
        ])

    def cost(self, W, X=None) -> float:
        if X is None:
            X = self.rollout(W)
        r = self.residuals(W, X)
        return float(r @ r)

    def cost_terms(self, W, X=None) -> dict:
        if X is None:
            X = self.rollout(W)
        c = self.cfg
        return {
            "speed": c.q_v * float(np.sum((X[1:, IV] - self.v_heur) ** 2)),
            "steering": c.q_delta * float(np.sum(X[1:, IDELTA] ** 2)),
            "steering_rate": c.q_delta_rate * float(np.sum(W[:, U2] ** 2)),
            "x_tol": c.q_x * float(np.sum(W[:, XTOL] ** 2)),
            "y_tol": c.q_y * float(np.sum(W[:, YTOL] ** 2)),
            "obs_tol": c.q_obs * float(np.sum(W[:, OBS] ** 2)),
            "delta_tol": c.q_delta_tol * float(np.sum(W[:, DTOL] ** 2)),
        }

    def gradient(self, W) -> np.ndarray:
        """Exact gradient of the cost with respect to the flattened ``W``."""
        X, S = self.rollout_sensitivities(W)
        Jr = self._residual_jacobian(S)
        return 2.0 * Jr.T @ self.residuals(W, X)

    def _residual_jacobian(self, S) -> np.ndarray:
        N = self.N
        sq = self._sq
        Jr = np.zeros((7 * N, NV * N))
        ucols = _control_columns(N)
        Jr[0:N, ucols] = sq[0] * S[1:, IV, :]
        Jr[N:2 * N, ucols] = sq[1] * S[1:, IDELTA, :]
        rows = np.arange(N)
        for block, (col, w) in enumerate(((U2, sq[2]), (OBS, sq[3]), (XTOL, sq[4]),
                                          (YTOL, sq[5]), (DTOL, sq[6]))):
            Jr[(2 + block) * N + rows, NV * rows + col] = w
        return Jr

    # constraints ----------------------------------------------------------
    def frenet_errors(self, X):
        """Longitudinal and lateral deviation of states 1..N from the path point at their ``s``."""
        s = X[1:, IS]
        xr, yr = self.path.position(s)
        hr = self.path.heading_at(s)
        c, sn = np.cos(hr), np.sin(hr)
        dx, dy = X[1:, IX] - xr, X[1:, IY] - yr
        e_lon = c * dx + sn * dy
        e_lat = -sn * dx + c * dy
        return e_lon, e_lat, c, sn, self.path.curvature_at(s)

    def constraint_values(self, W, X, with_jacobian=False, S=None):
        """Soft constraints (stage-major) followed by hard constraints, all as ``h <= 0``."""
        N = self.N
        cfg = self.cfg
        e_lon, e_lat, c, sn, kappa = self.frenet_errors(X)
        V = X[1:, IV]
        D = X[1:, IDELTA]
        dmax = np.empty(N)
        dslope = np.empty(N)
        for k in range(N):
            dmax[k], dslope[k] = delta_max_and_slope(V[k], self.params)
        n_obs = len(self.obstacles)
        ns = self.n_soft_per_stage

        soft = np.empty((N, ns))
        soft[:, 0] = e_lon - cfg.x_tol_max - W[:, XTOL]
        soft[:, 1] = -e_lon - cfg.x_tol_max - W[:, XTOL]
        soft[:, 2] = e_lat - cfg.y_tol_max - W[:, YTOL]
        soft[:, 3] = -e_lat - cfg.y_tol_max - W[:, YTOL]
        soft[:, 4] = D - dmax - W[:, DTOL]
        soft[:, 5] = -D - dmax - W[:, DTOL]
        obs_grad = []
        for o, reg in enumerate(self.obstacles):
            val, gx, gy = reg.value_and_gradient(X[1:, IX], X[1:, IY])
            soft[:, 6 + o] = val - W[:, OBS]
            obs_grad.append((gx, gy))

        hard = np.empty((N, 4))
        hard[:, 0] = e_lat - cfg.road_half_width
        hard[:, 1] = -e_lat - cfg.road_half_width
        hard[:, 2] = D - self.params.delta_mech
        hard[:, 3] = -D - self.params.delta_mech
        h = np.concatenate([soft.ravel(), hard.ravel()])
        if not with_jacobian:
            return h

        # Gradients with respect to the state xi_{j+1} of each row.
        Gs = np.zeros((N, ns, 6))
        dlon = np.stack([-1.0 + kappa * e_lat, c, sn], axis=1)  # d/d(s, X, Y)
        dlat = np.stack([-kappa * e_lon, -sn, c], axis=1)
        Gs[:, 0, [IS, IX, IY]] = dlon
        Gs[:, 1, [IS, IX, IY]] = -dlon
        Gs[:, 2, [IS, IX, IY]] = dlat
        Gs[:, 3, [IS, IX, IY]] = -dlat
        Gs[:, 4, IDELTA] = 1.0
        Gs[:, 4, IV] = -dslope
        Gs[:, 5, IDELTA] = -1.0
        Gs[:, 5, IV] = -dslope
        for o, (gx, gy) in enumerate(obs_grad):
            Gs[:, 6 + o, IX] = gx
            Gs[:, 6 + o, IY] = gy
        Gh = np.zeros((N, 4, 6))
        Gh[:, 0, [IS, IX, IY]] = dlat
        Gh[:, 1, [IS, IX, IY]] = -dlat
        Gh[:, 2, IDELTA] = 1.0
        Gh[:, 3, IDELTA] = -1.0

        Sk = S[1:]  # (N, 6, 2N)
        Ju_soft = np.einsum("krs,ksc->krc", Gs, Sk).reshape(N * ns, 2 * N)
        Ju_hard = np.einsum("krs,ksc->krc", Gh, Sk).reshape(N * 4, 2 * N)
        ucols = _control_columns(N)
        Jh = np.zeros((len(h), NV * N))
        Jh[: N * ns, ucols] = Ju_soft
        Jh[N * ns:, ucols] = Ju_hard
        slack_col = np.array([XTOL, XTOL, YTOL, YTOL, DTOL, DTOL] + [OBS] * n_obs)
        rows = np.arange(N * ns)
        stage = rows // ns
        Jh[rows, NV * stage + slack_col[rows % ns]] = -1.0
        return h, Jh

    @property
    def n_soft(self) -> int:
        return self.N * self.n_soft_per_stage

    def required_slacks(self, X) -> np.ndarray:
        """Smallest slacks making every soft constraint hold for the states ``X``."""
        N = self.N
        cfg = self.cfg
        e_lon, e_lat, *_ = self.frenet_errors(X)
        out = np.zeros((N, 4))  # obs, x, y, delta in control-column order
        if self.obstacles:
            vals = np.stack([reg.value(X[1:, IX], X[1:, IY]) for reg in self.obstacles])
            out[:, 0] = np.maximum(vals.max(axis=0), 0.0)
        out[:, 1] = np.maximum(np.abs(e_lon) - cfg.x_tol_max, 0.0)
        out[:, 2] = np.maximum(np.abs(e_lat) - cfg.y_tol_max, 0.0)
        dmax = np.array([delta_max_and_slope(v, self.params)[0] for v in X[1:, IV]])
        out[:, 3] = np.maximum(np.abs(X[1:, IDELTA]) - dmax, 0.0)
        return out

    def with_required_slacks(self, W, X=None) -> np.ndarray:
        if X is None:
            X = self.rollout(W)
        W = np.array(W, dtype=float)
        W[:, OBS:] = self.required_slacks(X)
        return W


def _control_columns(N: int) -> np.ndarray:
    return (NV * np.arange(N)[:, None] + np.array([U1, U2])).ravel()


# --- construction ------------------------------------------------------------

def initial_guess(N: int, warm_start: PlannedTrajectory | None = None,
                  t0: float | None = None) -> np.ndarray:
    """Decision matrix from a previous plan, time-shifted to ``t0``; zeros when cold."""
    W = np.zeros((N, NV))
    if warm_start is None:
        return W
    prev = warm_start.controls
    elapsed = 0.0 if t0 is None else t0 - warm_start.t0
    for j in range(N):
        # sample the previous piecewise-constant controls at the new stage midpoints
        idx = int(math.floor((elapsed + (j + 0.5) * warm_start.dt) / warm_start.dt))
        W[j] = prev[min(max(idx, 0), len(prev) - 1)]
    return W


def predicted_arc_lengths(x0, W, params: KbmParams, cfg: MpcConfig) -> np.ndarray:
    """Arc length of states 1..N when the controls of ``W`` are applied from ``x0``."""
    x = tuple(np.asarray(x0, dtype=float))
    out = np.empty(len(W))
    for j in range(len(W)):
        x = rk4_step(x, W[j, U1], W[j, U2], cfg.dt, params)
        out[j] = x[IS]
    return out


def relevant_obstacles(regions, s0: float, reach: float, cfg: MpcConfig):
    lo = s0 - cfg.obstacle_window
    hi = s0 + reach + cfg.obstacle_window
    return [r for r in regions if lo <= r.s_anchor <= hi]


def build_problem(x0: KbmState, path: ReferencePath, v_heur_profile, obstacles,
                  params: KbmParams, cfg: MpcConfig) -> MpcProblem:
    x0a = x0.to_array() if isinstance(x0, KbmState) else np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0a)):
        raise PlanningError("initial state is not finite")
    v_heur = np.broadcast_to(np.asarray(v_heur_profile, dtype=float), (cfg.n_stages,)).copy()
    reach = max(x0a[IV], float(np.max(v_heur))) * cfg.n_stages * cfg.dt
    if x0a[IS] + reach > path.length:
        raise PlanningError(
            f"path ends at s={path.length:.1f} m but the horizon may reach "
            f"s={x0a[IS] + reach:.1f} m"
        )
    regions = relevant_obstacles(obstacles, x0a[IS], reach, cfg)
    return MpcProblem(x0a, path, v_heur, regions, params, cfg)


# --- solver ------------------------------------------------------------------

def _solve_qp(H, g, h, Jh, lower, upper, w, n_hard):
    """min 1/2 d'Hd + g'd  s.t.  h + Jh d <= 0,  lower <= w + d <= upper."""
    n = len(w)
    lo_idx = np.flatnonzero(np.isfinite(lower))
    hi_idx = np.flatnonzero(np.isfinite(upper))
    C = np.zeros((n, len(h) + len(lo_idx) + len(hi_idx)))
    C[:, : len(h)] = -Jh.T
    C[lo_idx, len(h) + np.arange(len(lo_idx))] = 1.0
    C[hi_idx, len(h) + len(lo_idx) + np.arange(len(hi_idx))] = -1.0
    b = np.concatenate([h, lower[lo_idx] - w[lo_idx], w[hi_idx] - upper[hi_idx]])
    relaxed = False
    try:
        d, _, _, _, lam, _ = quadprog.solve_qp(H, -g, C, b, 0)
    except ValueError:
        # Linearized hard bounds inconsistent: drop them for this iteration.
        keep = np.ones(C.shape[1], dtype=bool)
        keep[len(h) - n_hard: len(h)] = False
        d, _, _, _, lam_k, _ = quadprog.solve_qp(H, -g, C[:, keep], b[keep], 0)
        lam = np.zeros(C.shape[1])
        lam[keep] = lam_k
        relaxed = True
    m = len(h)
    lam_h = lam[:m]
    lam_lo = lam[m: m + len(lo_idx)]
    lam_hi = lam[m + len(lo_idx):]
    comp_b = 0.0
    if len(lo_idx):
        comp_b = max(comp_b, float(np.max(lam_lo * np.abs(w[lo_idx] - lower[lo_idx]))))
    if len(hi_idx):
        comp_b = max(comp_b, float(np.max(lam_hi * np.abs(upper[hi_idx] - w[hi_idx]))))
    return d, lam_h, comp_b, relaxed


def solve(problem: MpcProblem, warm_start=None, t0: float = 0.0,
          max_iter: int | None = None) -> PlannedTrajectory:
    """SQP with Gauss-Newton Hessian and l1-merit backtracking.

    ``warm_start`` is an initial decision matrix (N, 6) or ``None`` for zeros.
    Slacks of the initial guess are reset to the smallest feasible values.
    """
    tic = time.perf_counter()
    cfg = problem.cfg
    N = problem.N
    max_iter = cfg.max_iter if max_iter is None else max_iter
    W = np.zeros((N, NV)) if warm_start is None else np.array(warm_start, dtype=float)
    W[:, U1] = np.clip(W[:, U1], cfg.u1_min, cfg.u1_max)
    W[:, U2] = np.clip(W[:, U2], cfg.u2_min, cfg.u2_max)
    W = problem.with_required_slacks(W)
    n_hard = N * problem.n_hard_per_stage
    diag = SolveDiagnostics()
    rho = 10.0

    def merit(Wm, Xm, rho_m):
        hv = problem.constraint_values(Wm, Xm)
        return problem.cost(Wm, Xm) + rho_m * float(np.sum(np.maximum(hv, 0.0)))

    status = "max_iter"
    it = 0
    while True:
        it += 1
        X, S = problem.rollout_sensitivities(W)
        r = problem.residuals(W, X)
        Jr = problem._residual_jacobian(S)
        g = 2.0 * Jr.T @ r
        H = 2.0 * Jr.T @ Jr + 1e-9 * np.eye(NV * N)
        h, Jh = problem.constraint_values(W, X, with_jacobian=True, S=S)
        w = W.ravel()
        try:
            d, lam, comp_b, relaxed = _solve_qp(H, g, h, Jh, problem.lower, problem.upper, w, n_hard)
        except ValueError as exc:
            status = f"qp_failed: {exc}"
            break
        diag.hard_relaxed |= relaxed
        stat = float(np.max(np.abs(H @ d)))
        viol = float(max(np.max(h), 0.0))
        comp = max(float(np.max(lam * np.abs(h))) if len(h) else 0.0, comp_b)
        diag.kkt = max(stat, viol, comp)
        if not np.all(np.isfinite(d)):
            raise SolverError("non-finite QP step")
        if diag.kkt < cfg.kkt_tol:
            diag.converged = True
            status = "converged"
            break
        if it >= max_iter:
            break

        rho = max(rho, 2.0 * float(np.max(lam, initial=0.0)) + 1.0)
        phi0 = problem.cost(W, X) + rho * float(np.sum(np.maximum(h, 0.0)))
        slope = float(g @ d) - rho * float(np.sum(np.maximum(h, 0.0)))
        alpha = 1.0
        accepted = False
        for _ in range(12):
            Wt = (w + alpha * d).reshape(N, NV)
            # the QP meets the input box only to round-off
            Wt[:, U1] = np.clip(Wt[:, U1], cfg.u1_min, cfg.u1_max)
            Wt[:, U2] = np.clip(Wt[:, U2], cfg.u2_min, cfg.u2_max)
            Xt = problem.rollout(Wt)
            phi = merit(Wt, Xt, rho)
            if phi <= phi0 + 1e-4 * alpha * min(slope, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted or not np.isfinite(phi):
            status = "line_search_failed"
            break
        diag.merit_history.append((phi0, phi, rho, alpha))
        W = Wt
        if not np.all(np.isfinite(W)):
            raise SolverError("non-finite SQP iterate")

    diag.iterations = it
    diag.status = status
    X = problem.rollout(W)
    # Report the violation each stage actually has, not the optimizer's slack guess.
    W_out = problem.with_required_slacks(W, X)
    cost = problem.cost(W_out, X)
    diag.wall_time = time.perf_counter() - tic
    return PlannedTrajectory(t0=t0, dt=cfg.dt, states=X, controls=W_out,
                             v_heur=problem.v_heur.copy(), cost=cost, diagnostics=diag)
