import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import circle_points
from kbmpc.path import (PathError, build_path, max_curvature_ahead, project, read_track_csv,
                        write_track_csv)


def test_straight_line_has_zero_curvature():
    x = np.linspace(0, 99, 100)
    path = build_path(np.column_stack([x, 2 * x]))
    assert np.allclose(path.curvature[1:-1], 0.0, atol=1e-12)


def test_circle_curvature_within_two_percent():
    path = build_path(circle_points(10.0, 360))
    assert np.all(np.abs(path.curvature[1:-1] - 0.1) <= 0.02 * 0.1)


def test_three_collinear_points():
    path = build_path([(0, 0), (1, 0), (2, 0)])
    assert path.length == pytest.approx(2.0)
    assert np.allclose(path.heading, 0.0)
    assert path.s[0] == 0.0 and np.all(np.diff(path.s) > 0)


@pytest.mark.parametrize("points", [[(0, 0), (1, 0)], [(0, 0), (1, 0), (1, 0), (2, 0)]])
def test_construction_errors(points):
    with pytest.raises(PathError):
        build_path(points)


def test_bad_spacing():
    with pytest.raises(PathError):
        build_path([(0, 0), (1, 0), (2, 0)], resample_spacing=0.0)


def test_resampling_preserves_length():
    pts = circle_points(25.0, 500)
    pts = np.vstack([pts, pts[:1]])
    poly = np.sum(np.hypot(*np.diff(pts, axis=0).T))
    path = build_path(pts, resample_spacing=1.0)
    assert abs(path.length - poly) <= 1e-3 * poly


def test_project_point_on_path(straight_path):
    proj = project(straight_path, (12.3, 0.0))
    assert proj.lateral_offset == 0.0
    assert proj.s == pytest.approx(12.3)


def test_project_left_of_straight(straight_path):
    proj = project(straight_path, (5.0, 1.0), hint_s=5.0, heading=0.0)
    assert proj.s == pytest.approx(5.0)
    assert proj.lateral_offset == pytest.approx(1.0)
    assert proj.heading_error == pytest.approx(0.0)


def test_project_circle_center():
    # clockwise circle: the center lies on the right, offset is negative
    path = build_path(circle_points(10.0, 360, clockwise=True))
    proj = project(path, (0.0, 0.0), window=None)
    assert proj.lateral_offset == pytest.approx(-10.0, abs=0.5)


def test_project_tie_breaks_toward_smaller_s():
    path = build_path([(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)], resample_spacing=0.05)
    proj = project(path, (0.0, 1.0), window=None)
    assert proj.s < path.length / 2


def test_project_hint_beyond_path_end(straight_path):
    proj = project(straight_path, (400.0, 1.0), hint_s=1e4)
    assert proj.s == pytest.approx(400.0)


@given(s=st.floats(5.0, 170.0), d=st.floats(-8.0, 8.0))
@settings(max_examples=60, deadline=None)
def test_projection_recovers_normal_offset(curve_path, s, d):
    x, y = curve_path.position(s)
    h = float(curve_path.heading_at(s))
    p = (float(x) - d * math.sin(h), float(y) + d * math.cos(h))
    proj = project(curve_path, p, hint_s=s)
    # discretization error at most half the waypoint spacing
    assert proj.lateral_offset == pytest.approx(d, abs=0.5)
    if abs(float(curve_path.curvature_at(s))) < 1e-9 and abs(d) < 5:
        assert proj.lateral_offset == pytest.approx(d, abs=1e-6)


def test_max_curvature_ahead(straight_path, curve_path):
    assert max_curvature_ahead(straight_path, 10.0, 50.0) == 0.0
    assert max_curvature_ahead(curve_path, 40.0, 60.0) == pytest.approx(0.1, rel=0.02)
    s0 = 65.0
    assert max_curvature_ahead(curve_path, s0, 0.0) == pytest.approx(abs(float(curve_path.curvature_at(s0))))


@given(s0=st.floats(0.0, 220.0), a=st.floats(0.0, 80.0), b=st.floats(0.0, 80.0))
@settings(max_examples=80, deadline=None)
def test_max_curvature_monotone_in_lookahead(curve_path, s0, a, b):
    lo, hi = sorted((a, b))
    assert max_curvature_ahead(curve_path, s0, lo) <= max_curvature_ahead(curve_path, s0, hi)


def test_track_csv_roundtrip(tmp_path):
    pts = circle_points(7.0, 50)
    f = tmp_path / "track.csv"
    write_track_csv(f, pts)
    assert np.array_equal(read_track_csv(f), pts)


def test_track_csv_bad_header(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("a,b\n0,0\n")
    with pytest.raises(PathError):
        read_track_csv(f)
