"""ASCII wire codec for the UDP protocol.

All datagrams are ASCII text built from ``(key value...)`` groups.  Client to
server: an init line ``<id>(init a1 ... a19)`` with 19 beam angles in
degrees, then per-step actions, either primitive
``(accel F)(brake F)(steer F)(gear I)`` or high-level
``(trackpos F)(speed F)``; ``(meta 1)`` signals restart readiness.  Server to
client: ``***identified***``, sensor strings in the fixed field order below,
``***done*** (reason S)``, ``***restart***`` and ``***shutdown***``.

Sensor floats carry 6 significant digits; action floats 6 decimal places.
"""

from __future__ import annotations

import re

from .constants import N_BEAMS, N_OPPONENT_SECTORS
from .control import DesireAction, PrimitiveAction
from .errors import ProtocolError
from .sensors import SensorFrame

IDENTIFIED = "***identified***"
RESTART = "***restart***"
SHUTDOWN = "***shutdown***"
ERROR_PREFIX = "***error***"
DONE_PREFIX = "***done***"

# server->client sensor string field order; never reorder
SENSOR_FIELDS = (
    "angle", "curLapTime", "damage", "distFromStart", "distRaced", "gear",
    "racePos", "rpm", "speedX", "speedY", "speedZ", "track", "trackPos",
    "opponents", "reward", "done", "doneReason",
)

_GROUP_RE = re.compile(r"\(([^()]*)\)")


def fmt_sensor(x: float) -> str:
    """Sensor-side float formatting: 6 significant digits."""
    return f"{x:.6g}"


def fmt_action(x: float) -> str:
    """Action-side float formatting: 6 decimal places."""
    return f"{x:.6f}"


def parse_groups(message: str) -> dict[str, list[str]]:
    """Split '(key v...)(key v...)' into a key -> token-list mapping."""
    groups: dict[str, list[str]] = {}
    for body in _GROUP_RE.findall(message):
        parts = body.split()
        if not parts:
            raise ProtocolError(f"empty group in {message!r}")
        groups[parts[0]] = parts[1:]
    if not groups:
        raise ProtocolError(f"no groups found in {message!r}")
    return groups


def _floats(tokens: list[str], key: str) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ProtocolError(f"bad number in ({key} ...): {exc}") from exc


# -- client -> server ---------------------------------------------------------

def encode_init(client_id: str, beam_angles_deg) -> str:
    if len(beam_angles_deg) != N_BEAMS:
        raise ProtocolError(f"init needs {N_BEAMS} beam angles, got {len(beam_angles_deg)}")
    angles = " ".join(fmt_sensor(a) for a in beam_angles_deg)
    return f"{client_id}(init {angles})"


def parse_init(message: str) -> tuple[str, list[float]]:
    """Return (client id, beam angles in degrees) from an init datagram."""
    m = re.fullmatch(r"\s*([A-Za-z0-9_\-]+)\(init([^()]*)\)\s*", message)
    if not m:
        raise ProtocolError("not an init message")
    client_id = m.group(1)
    angles = _floats(m.group(2).split(), "init")
    if len(angles) != N_BEAMS:
        raise ProtocolError(f"init carries {len(angles)} angles, expected {N_BEAMS}")
    return client_id, angles


def encode_action_sab(action: PrimitiveAction) -> str:
    gear = action.gear if action.gear is not None else 0
    return (f"(accel {fmt_action(action.accel)})(brake {fmt_action(action.brake)})"
            f"(steer {fmt_action(action.steer)})(gear {gear})")


def encode_action_ts(desire: DesireAction) -> str:
    return (f"(trackpos {fmt_action(desire.target_track_pos)})"
            f"(speed {fmt_action(desire.target_speed_norm)})")


def encode_meta_restart() -> str:
    return "(meta 1)"


def decode_action(message: str):
    """Decode a client action datagram.

    Returns ("sab", PrimitiveAction), ("ts", DesireAction) or ("meta", None).
    """
    groups = parse_groups(message)
    if "meta" in groups:
        return "meta", None
    if "trackpos" in groups or "speed" in groups:
        for key in ("trackpos", "speed"):
            if key not in groups or len(groups[key]) != 1:
                raise ProtocolError(f"desire action needs one ({key} F) group")
        return "ts", DesireAction(
            target_track_pos=_floats(groups["trackpos"], "trackpos")[0],
            target_speed_norm=_floats(groups["speed"], "speed")[0],
        ).clipped()
    for key in ("accel", "brake", "steer"):
        if key not in groups or len(groups[key]) != 1:
            raise ProtocolError(f"primitive action needs one ({key} F) group")
    gear = None
    if "gear" in groups:
        try:
            g = int(groups["gear"][0])
        except ValueError as exc:
            raise ProtocolError(f"bad gear: {groups['gear']}") from exc
        gear = g if g > 0 else None
    return "sab", PrimitiveAction(
        steer=_floats(groups["steer"], "steer")[0],
        accel=_floats(groups["accel"], "accel")[0],
        brake=_floats(groups["brake"], "brake")[0],
        gear=gear,
    )


# -- server -> client ---------------------------------------------------------

def encode_sensor_frame(frame: SensorFrame) -> str:
    parts = [
        f"(angle {fmt_sensor(frame.angle)})",
        f"(curLapTime {fmt_sensor(frame.cur_lap_time)})",
        f"(damage {fmt_sensor(frame.damage)})",
        f"(distFromStart {fmt_sensor(frame.dist_from_start)})",
        f"(distRaced {fmt_sensor(frame.dist_raced)})",
        f"(gear {frame.gear})",
        f"(racePos {frame.race_pos})",
        f"(rpm {fmt_sensor(frame.rpm)})",
        f"(speedX {fmt_sensor(frame.speed_x)})",
        f"(speedY {fmt_sensor(frame.speed_y)})",
        f"(speedZ {fmt_sensor(frame.speed_z)})",
        "(track " + " ".join(fmt_sensor(d) for d in frame.track) + ")",
        f"(trackPos {fmt_sensor(frame.track_pos)})",
        "(opponents " + " ".join(fmt_sensor(d) for d in frame.opponents) + ")",
        f"(reward {fmt_sensor(frame.reward)})",
        f"(done {1 if frame.done else 0})",
        f"(doneReason {frame.done_reason})",
    ]
    if frame.comms:
        parts.append("(comms " + " ".join(fmt_sensor(v) for v in frame.comms) + ")")
    return "".join(parts)


def decode_sensor_frame(message: str) -> SensorFrame:
    groups = parse_groups(message)
    missing = [f for f in SENSOR_FIELDS if f not in groups]
    if missing:
        raise ProtocolError(f"sensor string missing fields: {missing}")
    track = _floats(groups["track"], "track")
    opponents = _floats(groups["opponents"], "opponents")
    if len(track) != N_BEAMS:
        raise ProtocolError(f"track carries {len(track)} values, expected {N_BEAMS}")
    if len(opponents) != N_OPPONENT_SECTORS:
        raise ProtocolError(
            f"opponents carries {len(opponents)} values, expected {N_OPPONENT_SECTORS}")
    comms = _floats(groups.get("comms", []), "comms")
    return SensorFrame(
        angle=_floats(groups["angle"], "angle")[0],
        track=tuple(track),
        track_pos=_floats(groups["trackPos"], "trackPos")[0],
        speed_x=_floats(groups["speedX"], "speedX")[0],
        speed_y=_floats(groups["speedY"], "speedY")[0],
        speed_z=_floats(groups["speedZ"], "speedZ")[0],
        opponents=tuple(opponents),
        rpm=_floats(groups["rpm"], "rpm")[0],
        gear=int(groups["gear"][0]),
        damage=_floats(groups["damage"], "damage")[0],
        dist_from_start=_floats(groups["distFromStart"], "distFromStart")[0],
        dist_raced=_floats(groups["distRaced"], "distRaced")[0],
        cur_lap_time=_floats(groups["curLapTime"], "curLapTime")[0],
        race_pos=int(groups["racePos"][0]),
        reward=_floats(groups["reward"], "reward")[0],
        done=groups["done"][0] == "1",
        done_reason=groups["doneReason"][0] if groups["doneReason"] else "none",
        comms=tuple(comms),
    )


def encode_done(reason: str) -> str:
    return f"{DONE_PREFIX} (reason {reason})"


def encode_error(reason: str) -> str:
    return f"{ERROR_PREFIX} {reason}"


def is_control_message(message: str) -> bool:
    return message.startswith("***")
