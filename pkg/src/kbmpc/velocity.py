"""Heuristic target speed for the planner's speed cost."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .path import ReferencePath, max_curvature_ahead


@dataclass(frozen=True)
class VelocityPlannerConfig:
    v_max: float = 20.0  # m/s, straight-line cap
    dv: float = 1.0  # m/s per planner cycle
    t_prev: float = 4.0  # s, curvature preview window
    min_preview: float = 5.0  # m, preview floor at low speed
    mu: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        for name in ("v_max", "dv", "t_prev", "mu", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.min_preview < 0:
            raise ValueError("min_preview must be non-negative")


def heuristic_speed(v: float, s0: float, path: ReferencePath, cfg: VelocityPlannerConfig) -> float:
    """min(sqrt(0.5 mu g R_min), V_max, V + dV) with R_min previewed over V * T_prev."""
    v = max(v, 0.0)
    preview = max(v * cfg.t_prev, cfg.min_preview)
    k = max_curvature_ahead(path, s0, preview)
    target = min(cfg.v_max, v + cfg.dv)
    if k > 0.0:
        target = min(target, math.sqrt(0.5 * cfg.mu * cfg.g / k))
    return max(target, 0.0)


def straight_line_vmax(cfg: VelocityPlannerConfig, u1_min: float, horizon: float) -> float:
    """Speed from which full braking stops the car within the planning horizon."""
    if u1_min >= 0:
        raise ValueError("u1_min must be negative")
    return min(cfg.v_max, abs(u1_min) * max(horizon, 0.0))
