"""Kinematic-bicycle MPC planning with PID tracking, validated on a 9-DoF vehicle plant."""

from .kinematics import KbmInput, KbmParams, KbmState
from .mpc import MpcConfig, PlannedTrajectory
from .path import ReferencePath, build_path
from .vehicle import Dyn9State, PlantInput, PlantParams

__all__ = [
    "Dyn9State", "KbmInput", "KbmParams", "KbmState", "MpcConfig", "PlannedTrajectory",
    "PlantInput", "PlantParams", "ReferencePath", "build_path",
]
__version__ = "0.1.0"
