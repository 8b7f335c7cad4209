"""Action spaces and the hierarchical track-position / speed controller.

Two action spaces exist: primitive steer-accel-brake commands, and high-level
"desires" (a target track position and a target speed) realized by a pair of
PID controllers.  A desire is held for ``pid_latency`` control steps before a
new one is accepted, decoupling the decision rate from the control rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .constants import KMH_PER_MS, SPEED_CAP_KMH

# anti-windup bound on the raw accumulated integral (error * seconds); a
# vanilla controller has none, but unbounded windup destabilizes restarts
INTEGRAL_CAP = 10.0

SPEED_CAP_MS = SPEED_CAP_KMH / KMH_PER_MS

# a zero-speed desire at crawl speed engages a firm hold instead of leaving
# the car to creep on the integral term accumulated while driving
STOP_HOLD_TARGET_MS = 0.05
STOP_HOLD_SPEED_MS = 2.0
STOP_HOLD_BRAKE = 0.5


@dataclass
class PrimitiveAction:
    """Low-level command; fields are clipped to their bounds on construction."""

    steer: float = 0.0    # [-1, 1], positive steers left
    accel: float = 0.0    # [0, 1]
    brake: float = 0.0    # [0, 1]
    gear: int | None = None   # None selects the automatic transmission

    def __post_init__(self):
        self.steer = min(max(self.steer, -1.0), 1.0)
        self.accel = min(max(self.accel, 0.0), 1.0)
        self.brake = min(max(self.brake, 0.0), 1.0)

    def copy(self) -> "PrimitiveAction":
        return replace(self)


@dataclass(frozen=True)
class DesireAction:
    """High-level command: target track position and normalized target speed."""

    target_track_pos: float = 0.0   # [-1, 1]
    target_speed_norm: float = -1.0  # [-1, 1], affine to [0, SPEED_CAP_MS] m/s

    def clipped(self) -> "DesireAction":
        return DesireAction(
            target_track_pos=min(max(self.target_track_pos, -1.0), 1.0),
            target_speed_norm=min(max(self.target_speed_norm, -1.0), 1.0),
        )

    @property
    def target_speed_ms(self) -> float:
        return (self.target_speed_norm + 1.0) / 2.0 * SPEED_CAP_MS

    @staticmethod
    def from_speed_kmh(track_pos: float, speed_kmh: float) -> "DesireAction":
        norm = 2.0 * (speed_kmh / SPEED_CAP_KMH) - 1.0
        return DesireAction(target_track_pos=track_pos,
                            target_speed_norm=norm).clipped()


@dataclass(frozen=True)
class PIDGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        if not (math.isfinite(self.kp) and math.isfinite(self.ki) and math.isfinite(self.kd)):
            raise ValueError("PID gains must be finite")
        if self.kp < 0:
            raise ValueError("kp must be >= 0")


# gains tuned for medium-low speeds and reused everywhere
DEFAULT_ACCEL_GAINS = PIDGains(10.5, 0.05, 2.8)
DEFAULT_STEER_GAINS = PIDGains(5.1, 0.001, 0.000001)


@dataclass
class PIDState:
    integral: float = 0.0
    prev_error: float = 0.0
    initialized: bool = False

    def reset(self) -> None:
        self.integral = 0.0
        self.prev_error = 0.0
        self.initialized = False


def pid_step(gains: PIDGains, state: PIDState, error: float, dt: float) -> tuple[float, PIDState]:
    """One discrete PID update: u = kp*e + ki*integral(e) + kd*de/dt.

    The derivative uses prev_error = 0 on the first call, so a large first
    error produces a strong first-step kick.  The integral accumulates
    error*dt and clamps at +/-INTEGRAL_CAP.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    st = replace(state)
    st.integral = min(max(st.integral + error * dt, -INTEGRAL_CAP), INTEGRAL_CAP)
    derivative = (error - st.prev_error) / dt
    u = gains.kp * error + gains.ki * st.integral + gains.kd * derivative
    st.prev_error = error
    st.initialized = True
    return u, st


def ts_error_track_pos(angle_prev: float, track_pos_prev: float,
                       target: float, scale: float) -> float:
    """Steering-channel error: angle term minus the scaled track-position term."""
    return angle_prev - (track_pos_prev - target) * scale


def ts_error_speed(v_prev: float, v_target: float, scale: float) -> float:
    """Speed-channel error; positive when over speed, which maps to braking."""
    return (v_prev - v_target) * scale


@dataclass
class TSControllerState:
    """Per-agent controller memory for the desire-realization stack."""

    steer_pid: PIDState = field(default_factory=PIDState)
    accel_pid: PIDState = field(default_factory=PIDState)
    held_desire: DesireAction = field(default_factory=DesireAction)
    hold_countdown: int = 0
    pid_latency: int = 5
    accel_scale: float = 0.02
    steer_scale: float = 1.0
    accel_gains: PIDGains = DEFAULT_ACCEL_GAINS
    steer_gains: PIDGains = DEFAULT_STEER_GAINS

    def reset(self) -> None:
        self.steer_pid.reset()
        self.accel_pid.reset()
        self.held_desire = DesireAction()
        self.hold_countdown = 0


def ts_to_primitive(desire: DesireAction, frame, ctrl: TSControllerState,
                    dt: float) -> tuple[PrimitiveAction, TSControllerState]:
    """Realize a desire as steering/accel/brake through the two PIDs.

    A freshly issued desire is latched for pid_latency steps; while the
    countdown runs, incoming desires are ignored.  The steering error feeds
    on the alignment angle measured from the car heading TO the track
    tangent, i.e. the negative of the frame's angle field, so positive
    steering (left) corrects a rightward drift.
    """
    if ctrl.hold_countdown > 0:
        ctrl.hold_countdown -= 1
    else:
        ctrl.held_desire = desire.clipped()
        ctrl.hold_countdown = ctrl.pid_latency - 1
    held = ctrl.held_desire

    e_steer = ts_error_track_pos(-frame.angle, frame.track_pos,
                                 held.target_track_pos, ctrl.steer_scale)
    u_steer, ctrl.steer_pid = pid_step(ctrl.steer_gains, ctrl.steer_pid, e_steer, dt)

    v_prev = frame.speed_x / KMH_PER_MS
    if held.target_speed_ms <= STOP_HOLD_TARGET_MS and abs(v_prev) < STOP_HOLD_SPEED_MS:
        # parking hold: brake firmly and drop stale integral action
        ctrl.accel_pid.reset()
        return PrimitiveAction(
            steer=min(max(u_steer, -1.0), 1.0),
            accel=0.0,
            brake=STOP_HOLD_BRAKE,
        ), ctrl
    e_speed = ts_error_speed(v_prev, held.target_speed_ms, ctrl.accel_scale)
    u_speed, ctrl.accel_pid = pid_step(ctrl.accel_gains, ctrl.accel_pid, e_speed, dt)

    action = PrimitiveAction(
        steer=min(max(u_steer, -1.0), 1.0),
        accel=min(max(-u_speed, 0.0), 1.0),
        brake=min(max(u_speed, 0.0), 1.0),
    )
    return action, ctrl


def sample_action_noise(std: float, rng, n: int = 3):
    """Raw pre-clip Gaussian draws used by add_action_noise, one per channel."""
    if std < 0:
        raise ValueError("noise std must be >= 0")
    return rng.normal(0.0, std, size=n)


def add_action_noise(action: PrimitiveAction, std: float, rng) -> PrimitiveAction:
    """Perturb each channel with zero-mean Gaussian noise, re-clipped to bounds."""
    if std == 0.0:
        return action
    eps = sample_action_noise(std, rng)
    return PrimitiveAction(
        steer=action.steer + eps[0],
        accel=action.accel + eps[1],
        brake=action.brake + eps[2],
        gear=action.gear,
    )
