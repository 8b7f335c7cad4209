"""Programmable non-learning traffic agents.

Each behavior maps the agent's sensor frame to a track-position/speed desire;
the shared PID stack realizes the desire, so traffic and learning agents use
one low-level control path.  A collision-avoidance override can zero the
speed desire when the time-to-collision with the car ahead drops below the
configured window, and pulls the lane desire inward near the track edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .constants import KMH_PER_MS, N_OPPONENT_SECTORS, RANGE_MAX
from .control import DesireAction, PIDGains, DEFAULT_ACCEL_GAINS, DEFAULT_STEER_GAINS
from .errors import ConfigError
from .sensors import SensorFrame

# table of shipped behaviors; config names are bit-exact
BEHAVIOR_NAMES = (
    "ConstVelTrafficAgent",
    "SinusoidalSpeedAgent",
    "RandomLaneSwitchAgent",
    "DriveAndParkAgent",
    "ParkedAgent",
    "RandomStoppingAgent",
)

PARK_TOLERANCE = 2.0        # meters; arrival window around the parking distance
PARK_APPROACH_DECEL = 1.2   # m/s^2 assumed in the slow-down profile


@dataclass(frozen=True)
class TrafficConfig:
    """One traffic agent's behavior and spawn parameters."""

    behavior: str = "ConstVelTrafficAgent"
    target_speed: float = 50.0              # km/h
    target_lane_pos: float = 0.0
    parking: tuple[float, float] | None = None   # (distance from start, track_pos)
    initial_distance: tuple[float, float] = (10.0, 20.0)
    initial_trackpos: tuple[float, float] = (0.0, 0.0)
    collision_time_window: float = 2.0      # seconds
    accel_gains: PIDGains = DEFAULT_ACCEL_GAINS
    steer_gains: PIDGains = DEFAULT_STEER_GAINS
    accel_scale: float = 0.02
    steer_scale: float = 1.0
    sinusoid_period: int = 200              # control steps
    p_switch: float = 0.01                  # lane resample probability per step
    p_stop: float = 0.005                   # stop-entry probability per step
    stop_duration: int = 100                # control steps per stop

    def __post_init__(self):
        if self.behavior not in BEHAVIOR_NAMES:
            raise ConfigError(f"unknown traffic behavior {self.behavior!r}; "
                              f"known: {list(BEHAVIOR_NAMES)}")
        if self.target_speed < 0:
            raise ConfigError("traffic target_speed must be >= 0")
        if abs(self.target_lane_pos) > 1:
            raise ConfigError("traffic target_lane_pos must lie in [-1, 1]")
        if self.collision_time_window <= 0:
            raise ConfigError("traffic collision_time_window must be > 0")
        if self.behavior in ("DriveAndParkAgent", "ParkedAgent") and self.parking is None:
            raise ConfigError(f"{self.behavior} requires a parking (distance, track_pos)")


class TrafficBehavior:
    """Base policy: frame -> desire.  Subclasses own their episode state."""

    def __init__(self, cfg: TrafficConfig, rng):
        self.cfg = cfg
        self.rng = rng

    def reset(self) -> None:
        pass

    def desire(self, frame: SensorFrame, step: int) -> DesireAction:
        raise NotImplementedError


class ConstVelTrafficAgent(TrafficBehavior):
    """Drives at the configured speed at the configured lane position."""

    def desire(self, frame, step):
        return DesireAction.from_speed_kmh(self.cfg.target_lane_pos, self.cfg.target_speed)


class SinusoidalSpeedAgent(TrafficBehavior):
    """Oscillates the speed target around the configured speed, lane fixed."""

    def desire(self, frame, step):
        kmh = self.cfg.target_speed * (
            1.0 + 0.5 * math.sin(2.0 * math.pi * step / self.cfg.sinusoid_period))
        return DesireAction.from_speed_kmh(self.cfg.target_lane_pos, kmh)


class RandomLaneSwitchAgent(TrafficBehavior):
    """Resamples the lane target uniformly in [-0.8, 0.8] with p_switch per step."""

    def reset(self):
        self.lane = self.cfg.target_lane_pos

    def desire(self, frame, step):
        if self.rng.random() < self.cfg.p_switch:
            self.lane = float(self.rng.uniform(-0.8, 0.8))
        return DesireAction.from_speed_kmh(self.lane, self.cfg.target_speed)


class DriveAndParkAgent(TrafficBehavior):
    """Drives to the parking distance and track position, then holds still."""

    def reset(self):
        self.arrived = False

    def desire(self, frame, step):
        park_dist, park_pos = self.cfg.parking
        remaining = park_dist - frame.dist_from_start
        if self.arrived or remaining <= 0.3:
            self.arrived = True
            return DesireAction.from_speed_kmh(park_pos, 0.0)
        # slow-down profile toward the slot, floor keeps the car creeping in
        v_cap = math.sqrt(2.0 * PARK_APPROACH_DECEL * max(remaining - 0.3, 0.0))
        kmh = min(self.cfg.target_speed, max(v_cap * KMH_PER_MS, 2.0))
        return DesireAction.from_speed_kmh(park_pos, kmh)


class ParkedAgent(TrafficBehavior):
    """Remains parked at its spawn slot for the whole episode."""

    def desire(self, frame, step):
        park_pos = self.cfg.parking[1]
        return DesireAction.from_speed_kmh(park_pos, 0.0)


class RandomStoppingAgent(TrafficBehavior):
    """Halts for stop_duration steps with probability p_stop while driving."""

    def reset(self):
        self.stopped_until = -1

    def desire(self, frame, step):
        if step < self.stopped_until:
            return DesireAction.from_speed_kmh(self.cfg.target_lane_pos, 0.0)
        if self.rng.random() < self.cfg.p_stop:
            self.stopped_until = step + self.cfg.stop_duration
            return DesireAction.from_speed_kmh(self.cfg.target_lane_pos, 0.0)
        return DesireAction.from_speed_kmh(self.cfg.target_lane_pos, self.cfg.target_speed)


_BEHAVIOR_CLASSES = {
    "ConstVelTrafficAgent": ConstVelTrafficAgent,
    "SinusoidalSpeedAgent": SinusoidalSpeedAgent,
    "RandomLaneSwitchAgent": RandomLaneSwitchAgent,
    "DriveAndParkAgent": DriveAndParkAgent,
    "ParkedAgent": ParkedAgent,
    "RandomStoppingAgent": RandomStoppingAgent,
}


def make_behavior(cfg: TrafficConfig, rng) -> TrafficBehavior:
    behavior = _BEHAVIOR_CLASSES[cfg.behavior](cfg, rng)
    behavior.reset()
    return behavior


def traffic_policy_step(behavior: TrafficBehavior, frame: SensorFrame,
                        step: int) -> DesireAction:
    """One policy evaluation; output desires always respect the action bounds."""
    return behavior.desire(frame, step).clipped()


# front sectors: the two 10-degree cells straddling dead ahead
_FRONT_SECTORS = (N_OPPONENT_SECTORS // 2 - 1, N_OPPONENT_SECTORS // 2)

# opponent distances are center-to-center; subtract a car length of margin
# and hold a standoff so the follower cannot creep into contact
BUMPER_MARGIN = 5.0
STANDOFF = 3.0


def collision_avoidance_override(frame: SensorFrame, cfg: TrafficConfig,
                                 desire: DesireAction) -> DesireAction:
    """Zero the speed desire when the car ahead is inside the TTC window.

    Time to collision is the front-sector gap (margin-corrected) over the
    closing speed, approximated by the ego forward speed: exact for parked
    obstacles, conservative for same-direction movers.  Near the track edge
    (|track_pos| > 0.9) the lane desire recenters.
    """
    lane = desire.target_track_pos
    speed_norm = desire.target_speed_norm
    front = min(frame.opponents[i] for i in _FRONT_SECTORS)
    closing = max(frame.speed_x / KMH_PER_MS, 1e-6)
    if front < RANGE_MAX:
        gap = front - BUMPER_MARGIN
        if gap <= STANDOFF or gap / closing < cfg.collision_time_window:
            speed_norm = -1.0   # full stop request
    if abs(frame.track_pos) > 0.9:
        lane = 0.0
    return DesireAction(target_track_pos=lane, target_speed_norm=speed_norm)


def alternating_parking_slots(n: int, first_distance: float, rng, *,
                              spacing: float = 30.0,
                              side: float = 0.5,
                              along_jitter: float = 5.0,
                              across_jitter: float = 0.25,
                              track_half_width: float = 2.5) -> list[tuple[float, float]]:
    """Parking slots on alternating road sides with guaranteed longitudinal gaps.

    Slots sit spacing apart (so gaps stay >= 10 m after the +/-5 m jitter for
    any spacing >= 25 m plus car length), jittered along the track and across
    it.  Returns (distance from start, track_pos) pairs.
    """
    if spacing - 2.0 * along_jitter < 10.0:
        raise ConfigError("parking spacing leaves less than a 10 m gap after jitter")
    slots = []
    for i in range(n):
        dist = first_distance + i * spacing + float(rng.uniform(-along_jitter, along_jitter))
        pos = side * (1 if i % 2 == 0 else -1)
        pos += float(rng.uniform(-across_jitter, across_jitter)) / track_half_width
        slots.append((dist, min(max(pos, -0.9), 0.9)))
    return slots
