"""Per-car vehicle dynamics: Euler-integrated bicycle model, collisions, damage.

The model keeps the behaviorally relevant axes of real cars -- mass, center
of gravity height, drive type, torque curve shape, dimensions -- on top of a
dynamic bicycle model with linear tires saturated by a friction circle.
Engine force comes from a tabulated torque curve through the gear train;
gears shift automatically unless the action commands one explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Sequence, Union

import yaml

from .constants import GRAVITY, OFF_TRACK_GRIP_FACTOR
from .errors import CarModelError, SimulationFault
from .track import Track, wrap_pi

_DATA_DIR = Path(__file__).parent / "data" / "cars"

# transmission shift thresholds, fractions of max rpm
SHIFT_UP_FRAC = 0.95
SHIFT_DOWN_FRAC = 0.40

# tire model: cornering stiffness per axle as a multiple of static axle load,
# and the weight of the lateral-load-transfer grip derate
CORNERING_STIFF_FACTOR = 14.0
LOAD_TRANSFER_COEFF = 0.8
# drive force saturates at this fraction of the driven-axle grip budget,
# which leaves sqrt(1 - f^2) of lateral capacity under full throttle
DRIVE_GRIP_FRACTION = 0.9


@dataclass(frozen=True)
class CarModel:
    """Static parameters of one car type."""

    name: str
    mass: float
    cg_height: float
    drive_type: str            # "RWD" | "4WD"
    length: float
    width: float
    torque_curve: tuple[tuple[float, float], ...]   # (rpm, N*m), rpm increasing
    gear_ratios: tuple[float, ...]
    final_drive: float
    wheel_radius: float
    max_steer_lock: float
    drag_coeff: float          # N per (m/s)^2
    rolling_resist: float      # N per (m/s)
    brake_force_max: float
    rpm_range: tuple[float, float]   # (idle, max)

    def __post_init__(self):
        if self.mass <= 0:
            raise CarModelError(f"{self.name}: mass must be > 0")
        if self.length <= 0 or self.width <= 0:
            raise CarModelError(f"{self.name}: length and width must be > 0")
        if self.drive_type not in ("RWD", "4WD"):
            raise CarModelError(f"{self.name}: drive_type must be RWD or 4WD")
        rpms = [p[0] for p in self.torque_curve]
        if len(rpms) < 2 or any(b <= a for a, b in zip(rpms, rpms[1:])):
            raise CarModelError(f"{self.name}: torque_curve rpm must be strictly increasing")
        if any(p[1] < 0 for p in self.torque_curve):
            raise CarModelError(f"{self.name}: torque must be >= 0 everywhere")
        if not self.rpm_range[0] < self.rpm_range[1]:
            raise CarModelError(f"{self.name}: idle rpm must be below max rpm")
        # engine rpm per m/s of forward speed, one factor per gear
        factors = tuple(
            60.0 * g * self.final_drive / (2.0 * math.pi * self.wheel_radius)
            for g in self.gear_ratios
        )
        object.__setattr__(self, "_rpm_per_ms", factors)

    @property
    def wheelbase(self) -> float:
        return 0.6 * self.length

    @property
    def idle_rpm(self) -> float:
        return self.rpm_range[0]

    @property
    def max_rpm(self) -> float:
        return self.rpm_range[1]


@dataclass
class VehicleState:
    """Dynamic state of one car; value semantics, one instance per car per tick."""

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    v_long: float = 0.0
    v_lat: float = 0.0
    yaw_rate: float = 0.0
    rpm: float = 0.0
    gear: int = 1
    damage: float = 0.0
    distance_raced: float = 0.0
    alive: bool = True
    # cached Frenet pose, refreshed every tick
    s: float = 0.0
    lateral: float = 0.0
    track_pos: float = 0.0
    angle: float = 0.0
    segment: int = 0
    # signed forward progress accumulator (may decrease when reversing)
    progress: float = 0.0

    def copy(self) -> "VehicleState":
        return replace(self)


def torque_at(model: CarModel, rpm: float) -> float:
    """Engine torque at ``rpm``: piecewise-linear over the curve, clamped outside."""
    if rpm < 0:
        raise ValueError("rpm must be >= 0")
    curve = model.torque_curve
    if rpm <= curve[0][0]:
        return curve[0][1]
    if rpm >= curve[-1][0]:
        return curve[-1][1]
    for (r0, t0), (r1, t1) in zip(curve, curve[1:]):
        if rpm <= r1:
            f = (rpm - r0) / (r1 - r0)
            return t0 + f * (t1 - t0)
    return curve[-1][1]


def _engine_rpm(model: CarModel, v_long: float, gear: int) -> float:
    rpm = abs(v_long) * model._rpm_per_ms[gear - 1]
    return min(max(rpm, model.rpm_range[0]), model.rpm_range[1] * 1.05)


def _auto_gear(model: CarModel, v_long: float, gear: int) -> int:
    rpm = _engine_rpm(model, v_long, gear)
    if rpm >= SHIFT_UP_FRAC * model.max_rpm and gear < len(model.gear_ratios):
        return gear + 1
    if rpm <= SHIFT_DOWN_FRAC * model.max_rpm and gear > 1:
        return gear - 1
    return gear


def physics_tick(state: VehicleState, model: CarModel, controls, track: Track,
                 dt: float) -> VehicleState:
    """One explicit-Euler update of the bicycle model; returns a new state.

    ``controls`` needs steer/accel/brake in normalized bounds and gear
    (int or None for automatic).  Raises SimulationFault on non-finite state.
    """
    v = state.v_long
    v_lat = state.v_lat
    yaw_rate = state.yaw_rate

    gear = controls.gear if controls.gear else _auto_gear(model, v, state.gear)
    gear = min(max(gear, 1), len(model.gear_ratios))
    rpm = _engine_rpm(model, v, gear)

    mu = track.friction_at(state.s)
    if abs(state.track_pos) > 1.0:
        mu *= OFF_TRACK_GRIP_FACTOR

    # linear tires saturated by a per-axle friction ellipse: longitudinal
    # force on a driven axle consumes lateral capacity, and lateral grip
    # derates with load transfer through the center-of-gravity height
    half_base = model.wheelbase / 2.0
    fz_axle = model.mass * GRAVITY * 0.5
    lat_acc = abs(v * yaw_rate)
    derate = 1.0 / (1.0 + LOAD_TRANSFER_COEFF * model.cg_height * lat_acc
                    / (GRAVITY * model.width / 2.0))
    budget = mu * fz_axle * derate

    ratio = model.gear_ratios[gear - 1] * model.final_drive
    f_engine = torque_at(model, rpm) * ratio / model.wheel_radius * controls.accel
    # traction: the driven axle(s) can transmit at most a fraction of their
    # grip budget; four-wheel drive splits demand across both axles
    n_driven = 2.0 if model.drive_type == "4WD" else 1.0
    f_engine = min(f_engine, DRIVE_GRIP_FRACTION * budget * n_driven)

    f_resist = model.drag_coeff * v * abs(v) + model.rolling_resist * v
    f_brake = controls.brake * model.brake_force_max * (
        1.0 if v > 0 else -1.0 if v < 0 else 0.0)
    f_long = f_engine - f_resist - f_brake

    delta = controls.steer * model.max_steer_lock
    v_eff = abs(v) if abs(v) > 1.0 else 1.0
    alpha_f = delta - (v_lat + half_base * yaw_rate) / v_eff
    alpha_r = -(v_lat - half_base * yaw_rate) / v_eff
    if model.drive_type == "4WD":
        fx_front, fx_rear = f_engine / 2.0, f_engine / 2.0
    else:
        fx_front, fx_rear = 0.0, f_engine
    fx_front += abs(f_brake) / 2.0
    fx_rear += abs(f_brake) / 2.0
    cap_f = math.sqrt(max(budget * budget - fx_front * fx_front, 0.0))
    cap_r = math.sqrt(max(budget * budget - fx_rear * fx_rear, 0.0))
    f_yf = CORNERING_STIFF_FACTOR * fz_axle * alpha_f
    f_yf = -cap_f if f_yf < -cap_f else cap_f if f_yf > cap_f else f_yf
    f_yr = CORNERING_STIFF_FACTOR * fz_axle * alpha_r
    f_yr = -cap_r if f_yr < -cap_r else cap_r if f_yr > cap_r else f_yr

    a_long = f_long / model.mass + v_lat * yaw_rate
    a_lat = (f_yf + f_yr) / model.mass - v * yaw_rate
    yaw_acc = (f_yf - f_yr) / (model.mass * half_base)

    v_new = v + a_long * dt
    # braking and resistance stop at zero instead of reversing the car
    if (v > 0 and v_new < 0 and controls.accel == 0.0) or (v < 0 and v_new > 0):
        v_new = 0.0
    v_lat += a_lat * dt
    yaw_rate += yaw_acc * dt
    if abs(v_new) < 0.5:
        # crawl-speed settling: tires do not slide under a near-parked car
        v_lat *= 1.0 - 10.0 * dt
        yaw_rate *= 1.0 - 10.0 * dt

    cos_h = math.cos(state.heading)
    sin_h = math.sin(state.heading)
    x = state.x + (v_new * cos_h - v_lat * sin_h) * dt
    y = state.y + (v_new * sin_h + v_lat * cos_h) * dt
    heading = wrap_pi(state.heading + yaw_rate * dt)

    pose = track.project(x, y, heading, hint=state.segment)
    ds = pose.s - state.s
    if track.closed:
        half = track.total_length / 2.0
        if ds > half:
            ds -= track.total_length
        elif ds < -half:
            ds += track.total_length

    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(v_new)
            and math.isfinite(v_lat) and math.isfinite(yaw_rate)
            and math.isfinite(heading)):
        raise SimulationFault(
            f"non-finite vehicle state after tick: x={x} y={y} "
            f"v_long={v_new} v_lat={v_lat} yaw_rate={yaw_rate}"
        )

    return VehicleState(
        x=x,
        y=y,
        heading=heading,
        v_long=v_new,
        v_lat=v_lat,
        yaw_rate=yaw_rate,
        rpm=_engine_rpm(model, v_new, gear),
        gear=gear,
        damage=state.damage,
        distance_raced=state.distance_raced + (ds if ds > 0 else 0.0),
        alive=state.alive,
        s=pose.s,
        lateral=pose.lateral,
        track_pos=pose.track_pos,
        angle=pose.angle,
        segment=pose.segment,
        progress=state.progress + ds,
    )


def _obb_corners(cx: float, cy: float, heading: float, length: float, width: float):
    ch, sh = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return [
        (cx + ch * hl - sh * hw, cy + sh * hl + ch * hw),
        (cx + ch * hl + sh * hw, cy + sh * hl - ch * hw),
        (cx - ch * hl + sh * hw, cy - sh * hl - ch * hw),
        (cx - ch * hl - sh * hw, cy - sh * hl + ch * hw),
    ]


def _obb_overlap(c1, c2) -> bool:
    """Separating-axis test between two convex quads given as corner lists."""
    for corners in (c1, c2):
        for i in range(4):
            x0, y0 = corners[i]
            x1, y1 = corners[(i + 1) % 4]
            ax, ay = y1 - y0, x0 - x1   # outward/inward normal of the edge
            min1 = min2 = math.inf
            max1 = max2 = -math.inf
            for px, py in c1:
                p = px * ax + py * ay
                min1 = min(min1, p)
                max1 = max(max1, p)
            for px, py in c2:
                p = px * ax + py * ay
                min2 = min(min2, p)
                max2 = max(max2, p)
            if max1 < min2 or max2 < min1:
                return False
    return True


def detect_collisions(states: Sequence[VehicleState],
                      models: Sequence[CarModel]) -> list[tuple[int, int]]:
    """All colliding index pairs (i < j) among oriented car rectangles."""
    corners = [
        _obb_corners(st.x, st.y, st.heading, m.length, m.width)
        for st, m in zip(states, models)
    ]
    pairs = []
    n = len(corners)
    for i in range(n):
        for j in range(i + 1, n):
            # cheap circle rejection before the axis test
            dx = states[i].x - states[j].x
            dy = states[i].y - states[j].y
            reach = (models[i].length + models[i].width
                     + models[j].length + models[j].width) / 2.0
            if dx * dx + dy * dy > reach * reach:
                continue
            if _obb_overlap(corners[i], corners[j]):
                pairs.append((i, j))
    return pairs


def apply_damage(state: VehicleState, collided: bool) -> VehicleState:
    """Accumulate one damage quantum per control step spent in contact."""
    if not collided:
        return state
    st = state.copy()
    st.damage += 1.0
    return st


# -- loading ------------------------------------------------------------------

_CAR_KEYS = {
    "name", "mass", "cg_height", "drive_type", "length", "width",
    "torque_curve", "gear_ratios", "final_drive", "wheel_radius",
    "max_steer_lock", "drag_coeff", "rolling_resist", "brake_force_max",
    "rpm_range",
}


def load_car_model(source: Union[bytes, str, IO]) -> CarModel:
    """Parse a car model document (YAML, one mapping with the CarModel fields)."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise CarModelError(f"malformed car document: {exc}") from exc
    if not isinstance(doc, dict):
        raise CarModelError("car document must be a mapping")
    unknown = set(doc) - _CAR_KEYS
    if unknown:
        raise CarModelError(f"unknown car keys: {sorted(unknown)}")
    missing = _CAR_KEYS - set(doc)
    if missing:
        raise CarModelError(f"missing car keys: {sorted(missing)}")
    try:
        return CarModel(
            name=str(doc["name"]),
            mass=float(doc["mass"]),
            cg_height=float(doc["cg_height"]),
            drive_type=str(doc["drive_type"]),
            length=float(doc["length"]),
            width=float(doc["width"]),
            torque_curve=tuple((float(r), float(t)) for r, t in doc["torque_curve"]),
            gear_ratios=tuple(float(g) for g in doc["gear_ratios"]),
            final_drive=float(doc["final_drive"]),
            wheel_radius=float(doc["wheel_radius"]),
            max_steer_lock=float(doc["max_steer_lock"]),
            drag_coeff=float(doc["drag_coeff"]),
            rolling_resist=float(doc["rolling_resist"]),
            brake_force_max=float(doc["brake_force_max"]),
            rpm_range=(float(doc["rpm_range"][0]), float(doc["rpm_range"][1])),
        )
    except (TypeError, ValueError, IndexError) as exc:
        raise CarModelError(f"bad car field: {exc}") from exc


def builtin_car_names() -> list[str]:
    return sorted(p.stem for p in _DATA_DIR.glob("*.yaml"))


def builtin_car(name: str) -> CarModel:
    path = _DATA_DIR / f"{name}.yaml"
    if not path.exists():
        raise CarModelError(f"unknown builtin car {name!r}; have {builtin_car_names()}")
    return load_car_model(path.read_text())
