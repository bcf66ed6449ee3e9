"""Track generator: straights and constant-radius arcs joined without clothoids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import load_toml, reject_unknown


@dataclass(frozen=True)
class Segment:
    kind: str  # "straight" or "arc"
    length: float = 0.0  # m, straights
    radius: float = 0.0  # m, arcs
    angle_deg: float = 0.0  # arcs, positive turns left


def generate_track(segments, spacing: float = 0.5, start=(0.0, 0.0),
                   heading_deg: float = 0.0) -> np.ndarray:
    """Centerline points for a chain of segments, sampled about every ``spacing`` meters."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    x, y = float(start[0]), float(start[1])
    h = math.radians(heading_deg)
    pts = [(x, y)]
    for seg in segments:
        if seg.kind == "straight":
            if seg.length <= 0:
                raise ValueError("straight length must be positive")
            n = max(1, int(math.ceil(seg.length / spacing)))
            for i in range(1, n + 1):
                d = seg.length * i / n
                pts.append((x + d * math.cos(h), y + d * math.sin(h)))
            x, y = pts[-1]
        elif seg.kind == "arc":
            if seg.radius <= 0 or seg.angle_deg == 0:
                raise ValueError("arc needs a positive radius and a non-zero angle")
            turn = math.radians(seg.angle_deg)
            side = math.copysign(1.0, turn)
            cx = x - side * seg.radius * math.sin(h)
            cy = y + side * seg.radius * math.cos(h)
            n = max(2, int(math.ceil(abs(turn) * seg.radius / spacing)))
            for i in range(1, n + 1):
                hh = h + turn * i / n
                pts.append((cx + side * seg.radius * math.sin(hh),
                            cy - side * seg.radius * math.cos(hh)))
            h += turn
            x, y = pts[-1]
        else:
            raise ValueError(f"unknown segment type {seg.kind!r}")
    return np.asarray(pts)


def load_track_spec(filename: str | Path):
    """Parse a track spec file; returns (segments, spacing, start, heading_deg)."""
    data = load_toml(filename)
    reject_unknown(data, {"spacing", "start", "heading_deg", "segment"}, "track spec")
    segments = []
    for i, raw in enumerate(data.get("segment", [])):
        kind = raw.get("type")
        if kind == "straight":
            reject_unknown(raw, {"type", "length"}, f"segment {i}")
            segments.append(Segment("straight", length=float(raw["length"])))
        elif kind == "arc":
            reject_unknown(raw, {"type", "radius", "angle_deg"}, f"segment {i}")
            segments.append(Segment("arc", radius=float(raw["radius"]),
                                    angle_deg=float(raw["angle_deg"])))
        else:
            raise ValueError(f"segment {i}: unknown type {kind!r}")
    if not segments:
        raise ValueError("track spec has no segments")
    return (segments, float(data.get("spacing", 0.5)), tuple(data.get("start", (0.0, 0.0))),
            float(data.get("heading_deg", 0.0)))
