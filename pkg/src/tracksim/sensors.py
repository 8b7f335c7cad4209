"""Egocentric sensor frames: rangefinders, opponent sectors, noise, normalization.

Sensor conventions follow the classic simulated-racing suite: 19 track
rangefinders spanning [-90, +90] degrees around the car axis, 36 opponent
sectors of 10 degrees counterclockwise starting directly behind the car,
distances capped at 200 m.  Wire speeds are km/h; internal state is SI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .constants import (
    KMH_PER_MS,
    N_BEAMS,
    N_OPPONENT_SECTORS,
    RANGE_MAX,
)
from .dynamics import VehicleState
from .track import Track, wrap_pi

DEFAULT_BEAM_ANGLES = tuple(math.radians(a) for a in range(-90, 91, 10))

OUT_OF_TRACK_SENTINEL = -1.0

# per-variable default normalization bounds
DEFAULT_OBS_BOUNDS: dict[str, tuple[float, float]] = {
    "angle": (-math.pi, math.pi),
    "track": (0.0, RANGE_MAX),
    "track_pos": (-1.0, 1.0),
    "speed_x": (-100.0, 300.0),
    "speed_y": (-100.0, 300.0),
    "speed_z": (-100.0, 300.0),
    "opponents": (0.0, RANGE_MAX),
}

# variable layout per observation mode, in vector order
OBSERVATION_MODES: dict[str, tuple[str, ...]] = {
    "basic": ("angle", "track", "track_pos", "speed_x", "speed_y", "speed_z"),
    "traffic": ("angle", "track", "track_pos", "speed_x", "speed_y", "speed_z",
                "opponents"),
    "comms": ("angle", "track", "track_pos", "speed_x", "speed_y", "speed_z",
              "opponents"),
}

_VAR_WIDTH = {
    "angle": 1, "track": N_BEAMS, "track_pos": 1,
    "speed_x": 1, "speed_y": 1, "speed_z": 1,
    "opponents": N_OPPONENT_SECTORS,
}


def mode_width(mode: str, comms_width: int = 0) -> int:
    """Observation vector length for a mode; comms adds its block on top."""
    if mode not in OBSERVATION_MODES:
        raise ValueError(f"unknown observation mode {mode!r}")
    base = sum(_VAR_WIDTH[v] for v in OBSERVATION_MODES[mode])
    if mode == "comms":
        base += comms_width
    return base


@dataclass
class SensorFrame:
    """One agent's egocentric observation for one control step."""

    angle: float = 0.0
    track: tuple[float, ...] = tuple([RANGE_MAX] * N_BEAMS)
    track_pos: float = 0.0
    speed_x: float = 0.0          # km/h, forward
    speed_y: float = 0.0          # km/h, lateral
    speed_z: float = 0.0          # km/h, always 0 in the flat world
    opponents: tuple[float, ...] = tuple([RANGE_MAX] * N_OPPONENT_SECTORS)
    rpm: float = 0.0
    gear: int = 1
    damage: float = 0.0
    dist_from_start: float = 0.0
    dist_raced: float = 0.0
    cur_lap_time: float = 0.0
    race_pos: int = 1
    reward: float = 0.0
    done: bool = False
    done_reason: str = "none"
    comms: tuple[float, ...] = ()

    def copy(self) -> "SensorFrame":
        return replace(self)


@dataclass(frozen=True)
class ObservationSpec:
    """Selects and scales the variables exposed to one agent."""

    mode: str = "basic"
    normalize: bool = True
    obs_min: dict = field(default_factory=dict)
    obs_max: dict = field(default_factory=dict)
    noisy: bool = False
    buff_size: int = 1

    def bounds(self, var: str) -> tuple[float, float]:
        lo, hi = DEFAULT_OBS_BOUNDS[var]
        lo = self.obs_min.get(var, lo)
        hi = self.obs_max.get(var, hi)
        if not lo < hi:
            raise ValueError(f"obs bounds for {var!r} must satisfy min < max")
        return lo, hi


def rangefinder_scan(track: Track, state: VehicleState,
                     beam_angles: Sequence[float] = DEFAULT_BEAM_ANGLES) -> tuple[float, ...]:
    """Distance to the track edge along each car-relative beam angle.

    Defined only in-track; off-track cars get the -1 sentinel on every beam.
    """
    if abs(state.track_pos) > 1.0:
        return tuple([OUT_OF_TRACK_SENTINEL] * len(beam_angles))
    world = np.asarray(beam_angles, dtype=float) + state.heading
    return tuple(track.raycast_edges(state.x, state.y, world))


def opponents_scan(ego: VehicleState, others: Sequence[VehicleState]) -> tuple[float, ...]:
    """Nearest other-car distance per 10-degree sector around the ego car.

    Sector 0 starts directly behind the car and the index grows
    counterclockwise, so the sector just left of dead ahead is index 18.
    """
    dists = [RANGE_MAX] * N_OPPONENT_SECTORS
    sector = 2.0 * math.pi / N_OPPONENT_SECTORS
    for other in others:
        dx = other.x - ego.x
        dy = other.y - ego.y
        d = math.hypot(dx, dy)
        if d >= RANGE_MAX:
            continue
        bearing = wrap_pi(math.atan2(dy, dx) - ego.heading)
        idx = int((bearing + math.pi) / sector)
        if idx == N_OPPONENT_SECTORS:   # bearing exactly +pi wraps to sector 0
            idx = 0
        if d < dists[idx]:
            dists[idx] = d
    return tuple(dists)


def build_sensor_frame(track: Track, states: Sequence[VehicleState],
                       agent: int, *,
                       beam_angles: Sequence[float] = DEFAULT_BEAM_ANGLES,
                       cur_lap_time: float = 0.0,
                       race_pos: int | None = None) -> SensorFrame:
    """Assemble the full frame for ``states[agent]`` from a world snapshot."""
    st = states[agent]
    others = [s for i, s in enumerate(states) if i != agent]
    if race_pos is None:
        race_pos = 1 + sum(1 for o in others if o.distance_raced > st.distance_raced)
    return SensorFrame(
        angle=st.angle,
        track=rangefinder_scan(track, st, beam_angles),
        track_pos=st.track_pos,
        speed_x=st.v_long * KMH_PER_MS,
        speed_y=st.v_lat * KMH_PER_MS,
        speed_z=0.0,
        opponents=opponents_scan(st, others),
        rpm=st.rpm,
        gear=st.gear,
        damage=st.damage,
        dist_from_start=st.s,
        dist_raced=st.distance_raced,
        cur_lap_time=cur_lap_time,
        race_pos=race_pos,
    )


def apply_observation_noise(frame: SensorFrame, enabled: bool, rng) -> SensorFrame:
    """Multiplicative Gaussian noise (std 10%) on range sensors; identity if off.

    Off-track sentinel frames pass through unchanged.
    """
    if not enabled:
        return frame
    out = frame.copy()
    if frame.track[0] != OUT_OF_TRACK_SENTINEL:
        eps = rng.normal(0.0, 0.1, size=len(frame.track))
        out.track = tuple(
            float(min(max(d * (1.0 + e), 0.0), RANGE_MAX))
            for d, e in zip(frame.track, eps)
        )
    eps = rng.normal(0.0, 0.1, size=len(frame.opponents))
    out.opponents = tuple(
        float(min(max(d * (1.0 + e), 0.0), RANGE_MAX))
        for d, e in zip(frame.opponents, eps)
    )
    return out


def _frame_values(frame: SensorFrame, var: str) -> tuple[float, ...]:
    if var == "track":
        return frame.track
    if var == "opponents":
        return frame.opponents
    return (getattr(frame, var),)


def normalize_observation(frame: SensorFrame, spec: ObservationSpec) -> np.ndarray:
    """Flatten the mode's variables; affinely map to [-1, 1] when normalizing.

    Values outside the configured bounds clip to the interval ends.  The
    comms block (peer variables) is appended unscaled in "comms" mode.
    """
    if spec.mode not in OBSERVATION_MODES:
        raise ValueError(f"unknown observation mode {spec.mode!r}")
    out: list[float] = []
    for var in OBSERVATION_MODES[spec.mode]:
        values = _frame_values(frame, var)
        if spec.normalize:
            lo, hi = spec.bounds(var)
            for v in values:
                z = 2.0 * (v - lo) / (hi - lo) - 1.0
                out.append(min(max(z, -1.0), 1.0))
        else:
            out.extend(values)
    if spec.mode == "comms":
        out.extend(frame.comms)
    return np.asarray(out, dtype=float)
