"""Scripted stand-in policies for trained agents.

These drive the closed loop in tests and batch runs: a centerline follower,
a weaving overtaker for parked-traffic scenarios, a full-throttle stressor
and an agent that deliberately leaves the track after a given step.
"""

from __future__ import annotations

from dataclasses import dataclass

from .control import DesireAction, PrimitiveAction
from .sensors import SensorFrame


@dataclass
class CenterFollowAgent:
    """Track-position/speed desires: hold the centerline at a fixed speed."""

    target_speed_kmh: float = 50.0
    track_pos: float = 0.0

    def __call__(self, frame: SensorFrame, step: int) -> DesireAction:
        return DesireAction.from_speed_kmh(self.track_pos, self.target_speed_kmh)


@dataclass
class WeaveAgent:
    """Passes a row of alternately parked cars by swapping lanes on schedule.

    The lane target follows a piecewise-linear profile over distance keyed to
    the nominal slot layout of the parking helper: hold the side opposite
    slot i through a window around it, ramp across to the next side in the
    gap between slots.  Ramping (rather than stepping) the target keeps the
    steering loop from overshooting on narrow tracks.
    """

    target_speed_kmh: float = 35.0
    first_slot: float = 150.0
    spacing: float = 35.0
    slot_side: float = 0.5        # side of the first parked car
    n_slots: int = 8
    hold_before: float = 12.0     # window start, meters before the slot center
    hold_after: float = 7.0       # window end, meters past the slot center
    ramp_in: float = 25.0         # approach ramp length before the first window
    lane_magnitude: float = 0.55

    def _knots(self) -> list[tuple[float, float]]:
        first_window = self.first_slot - self.hold_before
        knots = [(0.0, 0.0), (first_window - self.ramp_in, 0.0)]
        for i in range(self.n_slots):
            center = self.first_slot + i * self.spacing
            side = self.slot_side * (1 if i % 2 == 0 else -1)
            lane = -self.lane_magnitude if side > 0 else self.lane_magnitude
            # the gap to the next window is the crossover ramp
            knots.append((center - self.hold_before, lane))
            knots.append((center + self.hold_after, lane))
        last = self.first_slot + (self.n_slots - 1) * self.spacing
        knots.append((last + self.hold_after + self.ramp_in, 0.0))
        return knots

    def __call__(self, frame: SensorFrame, step: int) -> DesireAction:
        s = frame.dist_from_start
        knots = self._knots()
        lane = knots[-1][1]
        for (s0, l0), (s1, l1) in zip(knots, knots[1:]):
            if s <= s0:
                lane = l0
                break
            if s0 < s <= s1:
                f = (s - s0) / (s1 - s0) if s1 > s0 else 1.0
                lane = l0 + f * (l1 - l0)
                break
        return DesireAction.from_speed_kmh(lane, self.target_speed_kmh)


@dataclass
class FullThrottleAgent:
    """Primitive stressor: pedal down, hands off the wheel."""

    def __call__(self, frame: SensorFrame, step: int) -> PrimitiveAction:
        return PrimitiveAction(steer=0.0, accel=1.0, brake=0.0)


@dataclass
class OffTrackAgent:
    """Drives straight, then steers hard left until the track edge ends the episode."""

    steer_at_step: int = 70
    cruise_accel: float = 0.7

    def __call__(self, frame: SensorFrame, step: int) -> PrimitiveAction:
        if step >= self.steer_at_step:
            return PrimitiveAction(steer=1.0, accel=0.5, brake=0.0)
        return PrimitiveAction(steer=0.0, accel=self.cruise_accel, brake=0.0)


SCRIPTED_AGENTS = {
    "center_follow": CenterFollowAgent,
    "weave": WeaveAgent,
    "full_throttle": FullThrottleAgent,
    "off_track": OffTrackAgent,
}


def make_scripted(name: str, **params):
    if name not in SCRIPTED_AGENTS:
        raise ValueError(f"unknown scripted agent {name!r}; known: {sorted(SCRIPTED_AGENTS)}")
    return SCRIPTED_AGENTS[name](**params)
