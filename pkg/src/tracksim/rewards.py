"""Composable per-agent reward components and termination conditions.

A reward function is a weighted sum: positive components (progress, average
speed, overtakes, finishing first) minus weighted penalty components
(collisions, turning backward, angular acceleration).  Event components emit
magnitude 1 when the event fires and the weight carries the penalty size.
Done conditions are a configurable subset evaluated in a fixed priority
order; once an agent is done it stays done for the episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .errors import ConfigError

DEFAULT_ALPHA_REFERENCE = 2.0

TURN_BACKWARD_ANGLE = math.pi / 2.0


@dataclass
class RewardContext:
    """Everything one control step exposes to the reward components."""

    d: float = 0.0                  # meters advanced this control step (signed)
    s_target: float = 1.0           # target progress, meters per step
    s_target_speed: float = 1.0     # target speed, m/s
    angles: tuple[float, ...] = ()  # up to the last 3 recorded angles, oldest first
    damage_delta: float = 0.0
    lap_completed: bool = False
    s_avg: float = 0.0              # average speed over the completed lap, m/s
    rank_prev: int = 1
    rank_now: int = 1
    race_over: bool = False
    n_cars: int = 1
    turned_backward: bool = False
    alpha_reference: float = DEFAULT_ALPHA_REFERENCE


def progress_reward(d: float, s_target: float) -> float:
    """min(1, d/s_target); backward motion passes through as a negative value."""
    if s_target <= 0:
        raise ValueError("s_target must be > 0")
    return min(1.0, d / s_target)


def average_speed_reward(s_avg: float, s_target: float, lap_completed: bool) -> float:
    """s_avg/s_target once per completed lap; scaled but not capped."""
    if s_target <= 0:
        raise ValueError("s_target must be > 0")
    if not lap_completed:
        return 0.0
    return s_avg / s_target


def angular_acceleration_penalty(a_t: float, a_t1: float, a_t2: float,
                                 alpha_reference: float) -> float:
    """|a_t + a_{t-2} - 2*a_{t-1}| / alpha_reference (discrete second difference)."""
    if alpha_reference <= 0:
        raise ValueError("alpha_reference must be > 0")
    return abs(a_t + a_t2 - 2.0 * a_t1) / alpha_reference


def fixed_event_penalties(turned_backward: bool, damage_delta: float) -> tuple[float, float]:
    """Magnitude-1 event flags for (turn_backward, collision) this step."""
    return (1.0 if turned_backward else 0.0,
            1.0 if damage_delta > 0 else 0.0)


def overtake_and_rank_rewards(rank_prev: int, rank_now: int, race_over: bool,
                              n_cars: int) -> tuple[int, float]:
    """(positions gained this step, 1 iff the episode ends in first place)."""
    if not (1 <= rank_prev <= n_cars and 1 <= rank_now <= n_cars):
        raise ValueError("ranks must lie in [1, n_cars]")
    overtakes = max(0, rank_prev - rank_now)
    rank1 = 1.0 if (race_over and rank_now == 1) else 0.0
    return overtakes, rank1


def _c_progress(ctx: RewardContext, params: dict) -> float:
    return progress_reward(ctx.d, ctx.s_target)


def _c_average_speed(ctx: RewardContext, params: dict) -> float:
    return average_speed_reward(ctx.s_avg, ctx.s_target_speed, ctx.lap_completed)


def _c_angular_acc(ctx: RewardContext, params: dict) -> float:
    if len(ctx.angles) < 3:
        return 0.0
    alpha = params.get("alpha_reference", ctx.alpha_reference)
    a_t2, a_t1, a_t = ctx.angles[-3], ctx.angles[-2], ctx.angles[-1]
    return angular_acceleration_penalty(a_t, a_t1, a_t2, alpha)


def _c_turn_backward(ctx: RewardContext, params: dict) -> float:
    return fixed_event_penalties(ctx.turned_backward, 0.0)[0]


def _c_collision(ctx: RewardContext, params: dict) -> float:
    return fixed_event_penalties(False, ctx.damage_delta)[1]


def _c_overtake(ctx: RewardContext, params: dict) -> float:
    return float(overtake_and_rank_rewards(ctx.rank_prev, ctx.rank_now,
                                           ctx.race_over, ctx.n_cars)[0])


def _c_rank_1(ctx: RewardContext, params: dict) -> float:
    return overtake_and_rank_rewards(ctx.rank_prev, ctx.rank_now,
                                     ctx.race_over, ctx.n_cars)[1]


# name -> (is_penalty, evaluator); config keys are bit-exact these names
REWARD_COMPONENTS: dict[str, tuple[bool, Callable[[RewardContext, dict], float]]] = {
    "progress": (False, _c_progress),
    "average_speed": (False, _c_average_speed),
    "angular_acceleration_penalty": (True, _c_angular_acc),
    "turn_backward_penalty": (True, _c_turn_backward),
    "collision_penalty": (True, _c_collision),
    "overtake": (False, _c_overtake),
    "rank_1": (False, _c_rank_1),
}


@dataclass(frozen=True)
class RewardSpec:
    """Named weighted components; validated against the component registry."""

    components: tuple[tuple[str, float, dict], ...] = ()

    @staticmethod
    def from_dict(spec: dict, where: str = "rewards") -> "RewardSpec":
        comps = []
        seen = set()
        for name, params in spec.items():
            if name not in REWARD_COMPONENTS:
                raise ConfigError(
                    f"{where}.{name}: unknown reward component; "
                    f"known: {sorted(REWARD_COMPONENTS)}"
                )
            if name in seen:
                raise ConfigError(f"{where}.{name}: duplicate component")
            seen.add(name)
            params = dict(params or {})
            weight = float(params.pop("scale", 1.0))
            if not math.isfinite(weight) or weight < 0:
                raise ConfigError(f"{where}.{name}.scale: must be a finite nonnegative weight")
            comps.append((name, weight, params))
        return RewardSpec(components=tuple(comps))


def compose_reward(spec: RewardSpec, ctx: RewardContext) -> float:
    """Weighted rewards minus weighted penalties over the step context."""
    total = 0.0
    for name, weight, params in spec.components:
        is_penalty, fn = REWARD_COMPONENTS[name]
        value = weight * fn(ctx, params)
        total += -value if is_penalty else value
    return total


# -- done conditions ----------------------------------------------------------

TASK_KINDS = ("one_lap", "race_over", "rank_1")

# evaluation priority; the first firing condition names the reason
DONE_ORDER = ("task_complete", "timeout", "collision", "turn_backward", "out_of_track")


@dataclass(frozen=True)
class DoneSpec:
    conditions: tuple[str, ...] = ("timeout",)
    max_steps: int = 10000
    task_kind: str = "one_lap"
    track_limits: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.max_steps <= 0:
            raise ConfigError("dones: max_steps must be > 0")
        for cond in self.conditions:
            if cond not in DONE_ORDER:
                raise ConfigError(f"dones: unknown condition {cond!r}; known: {DONE_ORDER}")
        if self.task_kind not in TASK_KINDS:
            raise ConfigError(f"dones: unknown task kind {self.task_kind!r}")

    @staticmethod
    def from_names(names, max_steps: int,
                   track_limits: tuple[float, float] = (-1.0, 1.0)) -> "DoneSpec":
        """Build from config spellings; task kinds name the task_complete condition."""
        conds = []
        kind = "one_lap"
        for name in names:
            if name in TASK_KINDS:
                conds.append("task_complete")
                kind = name
            elif name in DONE_ORDER:
                conds.append(name)
            else:
                raise ConfigError(
                    f"dones: unknown condition {name!r}; "
                    f"known: {sorted(set(DONE_ORDER) | set(TASK_KINDS))}"
                )
        return DoneSpec(conditions=tuple(conds), max_steps=max_steps,
                        task_kind=kind, track_limits=track_limits)


@dataclass
class DoneContext:
    """Per-agent episode state consumed by evaluate_done."""

    step_count: int = 0
    angle: float = 0.0
    track_pos: float = 0.0
    damage_delta: float = 0.0
    laps_completed: int = 0
    rank: int = 1


def evaluate_done(spec: DoneSpec, state: DoneContext) -> tuple[bool, str]:
    """Disjunction of enabled conditions; reason is the first firing by priority."""
    enabled = set(spec.conditions)
    lo, hi = spec.track_limits
    for cond in DONE_ORDER:
        if cond not in enabled:
            continue
        if cond == "task_complete":
            if spec.task_kind == "one_lap" and state.laps_completed >= 1:
                return True, "task_complete"
            if spec.task_kind in ("race_over", "rank_1") and state.rank == 1 \
                    and state.step_count > 0:
                return True, "task_complete"
        elif cond == "timeout":
            if state.step_count >= spec.max_steps:
                return True, "timeout"
        elif cond == "collision":
            if state.damage_delta > 0:
                return True, "collision"
        elif cond == "turn_backward":
            if abs(state.angle) > TURN_BACKWARD_ANGLE:
                return True, "turn_backward"
        elif cond == "out_of_track":
            if not lo <= state.track_pos <= hi:
                return True, "out_of_track"
    return False, "none"
