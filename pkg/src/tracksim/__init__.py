"""Multi-agent track-driving simulator.

A UDP client-server simulation engine with simplified vehicle dynamics,
track-relative (Frenet) sensing, hierarchical PID control, composable
reward/done handlers, programmable traffic agents and configuration-driven
domain randomization.
"""

__version__ = "0.1.0"

from .track import Track, TrackSegment, FrenetPose, load_track, lap_fraction, builtin_track
from .dynamics import CarModel, VehicleState, torque_at, physics_tick, detect_collisions, builtin_car
from .errors import (
    TrackError,
    CarModelError,
    ConfigError,
    ProtocolError,
    SimulationFault,
    StartupError,
)

__all__ = [
    "Track",
    "TrackSegment",
    "FrenetPose",
    "load_track",
    "lap_fraction",
    "builtin_track",
    "CarModel",
    "VehicleState",
    "torque_at",
    "physics_tick",
    "detect_collisions",
    "builtin_car",
    "TrackError",
    "CarModelError",
    "ConfigError",
    "ProtocolError",
    "SimulationFault",
    "StartupError",
]
