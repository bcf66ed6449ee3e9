"""Static obstacles and the parabolic forbidden regions built around them.

Each region is described in local coordinates around its vertex: ``a`` along
the axis (pointing away from the reference path) and ``b`` along the local
path tangent. A point is inside when ``a - b**2 / (2 p) + margin > 0``.

The directrix is parallel to the path tangent at the point closest to the
obstacle. Among parabolas that contain every obstacle vertex and whose
directrix does not cross the path, the one with the smallest focal parameter
``p`` is kept, then pushed outward until a vertex touches the boundary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .path import ReferencePath, project

P_MIN = 0.5  # m
SAFETY_MARGIN = 0.5  # m


class ObstacleError(ValueError):
    pass


@dataclass(frozen=True)
class Obstacle:
    vertices: tuple  # ((x, y), ...) in order

    def __post_init__(self):
        if len(self.vertices) < 1:
            raise ObstacleError("an obstacle needs at least one vertex")
        if len(self.vertices) >= 3 and not _is_convex(np.asarray(self.vertices, dtype=float)):
            raise ObstacleError(f"obstacle polygon is not convex: {self.vertices}")

    @property
    def centroid(self) -> tuple[float, float]:
        v = np.asarray(self.vertices, dtype=float)
        return float(v[:, 0].mean()), float(v[:, 1].mean())


def _is_convex(v: np.ndarray) -> bool:
    d1 = np.roll(v, -1, axis=0) - v
    d2 = np.roll(v, -2, axis=0) - np.roll(v, -1, axis=0)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    cross = cross[np.abs(cross) > 1e-12]
    return bool(np.all(cross > 0) or np.all(cross < 0))


@dataclass(frozen=True)
class ParabolaRegion:
    vertex: tuple  # (x, y)
    axis: tuple  # unit vector, opening direction
    p: float
    margin: float = SAFETY_MARGIN
    s_anchor: float = 0.0  # arc length of the path point the region is built on
    obstacle: Obstacle | None = None

    @property
    def tangent(self) -> tuple[float, float]:
        # axis rotated by -90 degrees
        return self.axis[1], -self.axis[0]

    def local(self, x, y):
        dx = np.asarray(x) - self.vertex[0]
        dy = np.asarray(y) - self.vertex[1]
        a = dx * self.axis[0] + dy * self.axis[1]
        tx, ty = self.tangent
        b = dx * tx + dy * ty
        return a, b

    def value(self, x, y):
        return interior_value(self, (x, y))

    def value_and_gradient(self, x, y):
        """Interior value and its gradient with respect to (x, y)."""
        a, b = self.local(x, y)
        val = a - b * b / (2.0 * self.p) + self.margin
        tx, ty = self.tangent
        gx = self.axis[0] - b / self.p * tx
        gy = self.axis[1] - b / self.p * ty
        return val, gx, gy


def interior_value(region: ParabolaRegion, point) -> float:
    """Positive inside the forbidden region (constraint violated), non-positive outside."""
    a, b = region.local(point[0], point[1])
    return a - b * b / (2.0 * region.p) + region.margin


def _directrix_offset(n: np.ndarray, b: np.ndarray, p: float) -> float:
    """Offset of the directrix from the path when the parabola is tight on the vertices."""
    return float(np.min(n - b * b / (2.0 * p)) - 0.5 * p)


def fit_parabola(obstacle: Obstacle, path: ReferencePath, margin: float = SAFETY_MARGIN,
                 p_min: float = P_MIN, hint_s: float | None = None) -> ParabolaRegion:
    cx, cy = obstacle.centroid
    proj = project(path, (cx, cy), hint_s=hint_s or 0.0, window=None if hint_s is None else 50.0)
    px, py = path.position(proj.s)
    h = float(path.heading_at(proj.s))
    tx, ty = math.cos(h), math.sin(h)
    nx, ny = -ty, tx  # left normal
    side = 1.0 if proj.lateral_offset >= 0.0 else -1.0
    ax, ay = side * nx, side * ny
    # tangent used for local b coordinates (axis rotated by -90 degrees)
    bx, by = ay, -ax

    v = np.asarray(obstacle.vertices, dtype=float)
    rel_x, rel_y = v[:, 0] - float(px), v[:, 1] - float(py)
    n = rel_x * ax + rel_y * ay
    b_all = rel_x * bx + rel_y * by
    b0 = float(cx - px) * bx + float(cy - py) * by  # axis passes through the centroid
    b = b_all - b0

    # Each vertex is inside iff p lies in [n - sqrt(n^2 - b^2), n + sqrt(n^2 - b^2)].
    disc = n * n - b * b
    p = None
    if np.all(disc >= 0.0) and np.all(n > 0.0):
        root = np.sqrt(disc)
        lo, hi = float(np.max(n - root)), float(np.min(n + root))
        if lo <= hi:
            p = lo
    if p is None:
        # Obstacle reaches across the path: keep the directrix as far out as possible.
        upper = max(float(np.max(np.abs(b))), float(np.max(np.abs(n))), 1.0) * 4.0
        res = minimize_scalar(lambda q: -_directrix_offset(n, b, q), bounds=(1e-6, upper),
                              method="bounded", options={"xatol": 1e-10})
        p = float(res.x)
    p = max(p, p_min)

    a0 = float(np.min(n - b * b / (2.0 * p)))  # vertex offset along the axis
    vx = float(px) + b0 * bx + a0 * ax
    vy = float(py) + b0 * by + a0 * ay
    return ParabolaRegion(vertex=(vx, vy), axis=(ax, ay), p=p, margin=margin,
                          s_anchor=proj.s, obstacle=obstacle)


def polygon_signed_distance(vertices: Sequence, point) -> float:
    """Euclidean distance from ``point`` to a convex polygon, negative inside."""
    v = np.asarray(vertices, dtype=float)
    px, py = float(point[0]), float(point[1])
    if len(v) == 1:
        return math.hypot(px - v[0, 0], py - v[0, 1])
    a = v
    bb = np.roll(v, -1, axis=0) if len(v) > 2 else v[1:2].repeat(len(v), axis=0)
    d = bb - a
    L2 = np.maximum((d**2).sum(axis=1), 1e-300)
    t = np.clip(((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / L2, 0.0, 1.0)
    qx = a[:, 0] + t * d[:, 0]
    qy = a[:, 1] + t * d[:, 1]
    dist = float(np.sqrt(((px - qx) ** 2 + (py - qy) ** 2).min()))
    if len(v) >= 3:
        cross = d[:, 0] * (py - a[:, 1]) - d[:, 1] * (px - a[:, 0])
        if np.all(cross >= 0) or np.all(cross <= 0):
            return -dist
    return dist


def read_obstacles_csv(filename: str | Path) -> list[Obstacle]:
    """Obstacles from a CSV with columns ``obstacle_id,x,y``, rows grouped by id."""
    filename = Path(filename)
    groups: dict[str, list] = {}
    order: list[str] = []
    with filename.open(newline="") as f:
        reader = csv.DictReader(f)
        cols = [c.strip() for c in (reader.fieldnames or [])]
        if cols != ["obstacle_id", "x", "y"]:
            raise ObstacleError(f"{filename}: expected header 'obstacle_id,x,y', got {reader.fieldnames}")
        last = None
        for row in reader:
            oid = row["obstacle_id"].strip()
            if oid != last and oid in groups:
                raise ObstacleError(f"{filename}: rows of obstacle {oid!r} are not contiguous")
            if oid not in groups:
                groups[oid] = []
                order.append(oid)
            groups[oid].append((float(row["x"]), float(row["y"])))
            last = oid
    return [Obstacle(tuple(groups[k])) for k in order]


def write_obstacles_csv(filename: str | Path, obstacles: Sequence[Obstacle]) -> None:
    with Path(filename).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["obstacle_id", "x", "y"])
        for i, ob in enumerate(obstacles):
            for x, y in ob.vertices:
                w.writerow([i, repr(float(x)), repr(float(y))])
