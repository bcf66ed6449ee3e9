from pathlib import Path

import numpy as np
import pytest

from kbmpc.kinematics import KbmParams
from kbmpc.path import build_path

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def kin():
    return KbmParams()


@pytest.fixture(scope="session")
def straight_path():
    x = np.linspace(0.0, 400.0, 401)
    return build_path(np.column_stack([x, np.zeros_like(x)]))


def circle_points(radius, n, clockwise=False):
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    if clockwise:
        th = -th
    return np.column_stack([radius * np.cos(th), radius * np.sin(th)])


@pytest.fixture(scope="session")
def curve_path():
    """60 m straight, 90 degree left arc of radius 10 m, 100 m straight."""
    from kbmpc.track import Segment, generate_track

    pts = generate_track([Segment("straight", length=60.0),
                          Segment("arc", radius=10.0, angle_deg=90.0),
                          Segment("straight", length=100.0)], spacing=0.5)
    return build_path(pts)
