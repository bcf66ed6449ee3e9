"""Arc-length parameterized reference path.

The centerline is resampled at uniform arc-length spacing. Heading comes from
central differences and signed curvature from the circle through three
consecutive samples (left turns positive).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class PathError(ValueError):
    """Raised when a reference path cannot be built from the given points."""


@dataclass(frozen=True)
class PathProjection:
    s: float
    lateral_offset: float
    heading_error: float


def wrap_angle(a):
    """Wrap an angle (scalar or array) to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def _three_point_curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed curvature of the circumscribed circle at every interior sample."""
    ax, ay = x[1:-1] - x[:-2], y[1:-1] - y[:-2]
    bx, by = x[2:] - x[1:-1], y[2:] - y[1:-1]
    cx, cy = x[2:] - x[:-2], y[2:] - y[:-2]
    cross = ax * by - ay * bx
    denom = np.hypot(ax, ay) * np.hypot(bx, by) * np.hypot(cx, cy)
    k = np.zeros_like(cross)
    ok = denom > 0.0
    k[ok] = 2.0 * cross[ok] / denom[ok]
    return np.concatenate([[k[0]], k, [k[-1]]])


class ReferencePath:
    """Immutable resampled centerline.

    Attributes:
        s: cumulative arc length of each sample, ``s[0] == 0``.
        x, y: sample coordinates in the ground frame.
        heading: unwrapped tangent heading at each sample.
        curvature: signed curvature at each sample.
    """

    def __init__(self, s, x, y, heading, curvature):
        self.s = np.asarray(s, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.heading = np.asarray(heading, dtype=float)
        self.curvature = np.asarray(curvature, dtype=float)
        for arr in (self.s, self.x, self.y, self.heading, self.curvature):
            arr.setflags(write=False)
        self.spacing = float(self.s[1] - self.s[0])
        # Segment geometry cached for projection.
        self._dx = np.diff(self.x)
        self._dy = np.diff(self.y)
        self._seg_len2 = self._dx**2 + self._dy**2
        for arr in (self._dx, self._dy, self._seg_len2):
            arr.setflags(write=False)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def __len__(self) -> int:
        return len(self.s)

    def position(self, s):
        """Interpolated (x, y) at arc length ``s`` (clamped to the path)."""
        return np.interp(s, self.s, self.x), np.interp(s, self.s, self.y)

    def heading_at(self, s):
        return np.interp(s, self.s, self.heading)

    def curvature_at(self, s):
        return np.interp(s, self.s, self.curvature)

    def project(
        self,
        point: Sequence[float],
        hint_s: float = 0.0,
        heading: float | None = None,
        window: float | None = 50.0,
    ) -> PathProjection:
        return project(self, point, hint_s, heading=heading, window=window)

    def max_curvature_ahead(self, s0: float, lookahead: float) -> float:
        return max_curvature_ahead(self, s0, lookahead)


def build_path(points: Iterable[Sequence[float]], resample_spacing: float = 1.0) -> ReferencePath:
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise PathError("points must be a sequence of (x, y) pairs")
    if len(pts) < 3:
        raise PathError(f"need at least 3 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise PathError("points must be finite")
    if resample_spacing <= 0:
        raise PathError("resample_spacing must be positive")

    seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
    dup = np.flatnonzero(seg <= 1e-12)
    if dup.size:
        raise PathError(f"consecutive duplicate points at index {int(dup[0])}")

    s_in = np.concatenate([[0.0], np.cumsum(seg)])
    total = s_in[-1]
    n_seg = max(2, int(round(total / resample_spacing)))
    s = np.linspace(0.0, total, n_seg + 1)
    x = np.interp(s, s_in, pts[:, 0])
    y = np.interp(s, s_in, pts[:, 1])

    # The resampled polyline cuts corners slightly; re-measure so s matches it.
    s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))])

    heading = np.unwrap(np.arctan2(np.gradient(y), np.gradient(x)))
    curvature = _three_point_curvature(x, y)
    return ReferencePath(s, x, y, heading, curvature)


def project(
    path: ReferencePath,
    point: Sequence[float],
    hint_s: float = 0.0,
    heading: float | None = None,
    window: float | None = 50.0,
) -> PathProjection:
    """Closest point on the polyline, searched within ``window`` of ``hint_s``.

    Ties (up to 1e-9 m) resolve toward the smaller arc length. ``window=None``
    searches the whole path.
    """
    px, py = float(point[0]), float(point[1])
    n_seg = len(path.s) - 1
    hint_s = min(max(hint_s, 0.0), path.length)
    if window is None:
        lo, hi = 0, n_seg
    else:
        lo = max(0, int(np.searchsorted(path.s, hint_s - window)) - 1)
        hi = min(n_seg, int(np.searchsorted(path.s, hint_s + window)) + 1)
        hi = max(hi, lo + 1)

    x0 = path.x[lo:hi]
    y0 = path.y[lo:hi]
    dx = path._dx[lo:hi]
    dy = path._dy[lo:hi]
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / path._seg_len2[lo:hi], 0.0, 1.0)
    qx = x0 + t * dx
    qy = y0 + t * dy
    d2 = (px - qx) ** 2 + (py - qy) ** 2
    d2_min = d2.min()
    i = int(np.flatnonzero(d2 <= d2_min + 1e-9 * max(1.0, d2_min))[0])

    seg = lo + i
    s = float(path.s[seg] + t[i] * (path.s[seg + 1] - path.s[seg]))
    cross = dx[i] * (py - qy[i]) - dy[i] * (px - qx[i])
    dist = math.sqrt(float(d2[i]))
    offset = math.copysign(dist, cross) if dist > 0.0 else 0.0
    herr = 0.0
    if heading is not None:
        herr = float(wrap_angle(heading - path.heading_at(s)))
    return PathProjection(s=s, lateral_offset=offset, heading_error=herr)


def max_curvature_ahead(path: ReferencePath, s0: float, lookahead: float) -> float:
    s0 = min(max(s0, 0.0), path.length)
    s1 = min(s0 + max(lookahead, 0.0), path.length)
    inside = (path.s >= s0) & (path.s <= s1)
    k_end = np.abs(np.interp([s0, s1], path.s, path.curvature))
    if inside.any():
        return float(max(k_end.max(), np.abs(path.curvature[inside]).max()))
    return float(k_end.max())


def read_track_csv(filename: str | Path) -> np.ndarray:
    """Waypoints from a CSV with header ``x,y`` (meters), in file order."""
    filename = Path(filename)
    with filename.open(newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["x", "y"]:
            raise PathError(f"{filename}: expected header 'x,y', got {reader.fieldnames}")
        rows = [(float(r["x"]), float(r["y"])) for r in reader]
    return np.asarray(rows, dtype=float)


def write_track_csv(filename: str | Path, points) -> None:
    filename = Path(filename)
    with filename.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y"])
        for x, y in np.asarray(points, dtype=float):
            w.writerow([repr(float(x)), repr(float(y))])
