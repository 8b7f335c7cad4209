"""Configuration schema, per-episode randomization and curriculum schedules.

One YAML document with three sections (``server``, ``agents``, ``traffic``)
configures a whole simulation; a second optional document wires the
inter-vehicular communication buffer.  Every key is validated with a
path-qualified error message and unknown keys are rejected.  Episode setups
are sampled from the validated config: uniform track/car choices, a discrete
uniform traffic count and continuous uniform spawn positions.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Union

import yaml

from .constants import DEFAULT_BASE_PORT, PHYSICS_DT, STEP_PERIOD
from .control import PIDGains, DEFAULT_ACCEL_GAINS, DEFAULT_STEER_GAINS
from .errors import ConfigError
from .rewards import DoneSpec, RewardSpec
from .sensors import DEFAULT_OBS_BOUNDS, OBSERVATION_MODES, mode_width
from .traffic import BEHAVIOR_NAMES, TrafficConfig

COMM_SCALAR_VARS = ("angle", "trackPos", "speedX", "speedY", "distFromStart",
                    "distRaced", "damage")
COMM_VARS = COMM_SCALAR_VARS + ("peerActions",)


def _req(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    return value


def _as_range(value, path: str) -> tuple[float, float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        v = float(value)
        return (v, v)
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}: expected a number or [min, max] pair, got {value!r}")
    lo = _as_float(value[0], f"{path}[0]")
    hi = _as_float(value[1], f"{path}[1]")
    _req(lo <= hi, path, f"range min {lo} exceeds max {hi}")
    return (lo, hi)


def _check_keys(mapping: dict, allowed: set, path: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _pid_gains(raw, path: str, default: PIDGains) -> PIDGains:
    if raw is None:
        return default
    if not isinstance(raw, (list, tuple)) or len(raw) != 3:
        raise ConfigError(f"{path}: expected [kp, ki, kd]")
    try:
        return PIDGains(*(float(g) for g in raw))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- server section ----------------------------------------------------------

_SERVER_KEYS = {
    "base_port", "max_cars", "min_traffic_cars", "track_names", "track_limits",
    "distance_to_start", "traffic_car", "learning_car", "randomize_env",
    "add_noise_to_actions", "action_noise_std", "noisy_observations",
    "visualise", "no_of_visualisations", "max_steps", "action_timeout",
}


@dataclass(frozen=True)
class ServerSettings:
    base_port: int = DEFAULT_BASE_PORT
    max_cars: int = 10
    min_traffic_cars: int = 0
    track_names: tuple[str, ...] = ("oval",)
    track_limits: tuple[float, float] = (-1.0, 1.0)
    distance_to_start: float = 0.0
    traffic_car: str = "sedan"
    learning_car: tuple[str, ...] = ("sedan",)
    randomize_env: bool = False
    add_noise_to_actions: bool = False
    action_noise_std: float = 0.0
    noisy_observations: bool = False
    visualise: bool = False            # accepted for compatibility, ignored
    no_of_visualisations: int = 1      # accepted for compatibility, ignored
    max_steps: int = 10000
    action_timeout: float = 1.0
    step_period: float = STEP_PERIOD
    physics_dt: float = PHYSICS_DT


def _parse_server(raw: dict) -> ServerSettings:
    _check_keys(raw, _SERVER_KEYS, "server")
    d = ServerSettings()
    base_port = _as_int(raw.get("base_port", d.base_port), "server.base_port")
    _req(0 < base_port < 65536, "server.base_port", "must be a valid port")
    max_cars = _as_int(raw.get("max_cars", d.max_cars), "server.max_cars")
    _req(max_cars >= 1, "server.max_cars", "must be >= 1")
    min_traffic = _as_int(raw.get("min_traffic_cars", d.min_traffic_cars),
                          "server.min_traffic_cars")
    _req(min_traffic >= 0, "server.min_traffic_cars", "must be >= 0")
    tracks = raw.get("track_names", list(d.track_names))
    _req(isinstance(tracks, list) and tracks and all(isinstance(t, str) for t in tracks),
         "server.track_names", "must be a non-empty list of track names")
    limits = _as_range(raw.get("track_limits", list(d.track_limits)), "server.track_limits")
    _req(limits[0] < limits[1], "server.track_limits", "min must be below max")
    cars = raw.get("learning_car", list(d.learning_car))
    _req(isinstance(cars, list) and cars and all(isinstance(c, str) for c in cars),
         "server.learning_car", "must be a non-empty list of car names")
    noise_std = _as_float(raw.get("action_noise_std", d.action_noise_std),
                          "server.action_noise_std")
    _req(0.0 <= noise_std <= 1.0, "server.action_noise_std", "must lie in [0, 1]")
    max_steps = _as_int(raw.get("max_steps", d.max_steps), "server.max_steps")
    _req(max_steps > 0, "server.max_steps", "must be > 0")
    timeout = _as_float(raw.get("action_timeout", d.action_timeout), "server.action_timeout")
    _req(timeout > 0, "server.action_timeout", "must be > 0")
    return ServerSettings(
        base_port=base_port,
        max_cars=max_cars,
        min_traffic_cars=min_traffic,
        track_names=tuple(tracks),
        track_limits=limits,
        distance_to_start=_as_float(raw.get("distance_to_start", d.distance_to_start),
                                    "server.distance_to_start"),
        traffic_car=str(raw.get("traffic_car", d.traffic_car)),
        learning_car=tuple(cars),
        randomize_env=_as_bool(raw.get("randomize_env", d.randomize_env),
                               "server.randomize_env"),
        add_noise_to_actions=_as_bool(raw.get("add_noise_to_actions",
                                              d.add_noise_to_actions),
                                      "server.add_noise_to_actions"),
        action_noise_std=noise_std,
        noisy_observations=_as_bool(raw.get("noisy_observations", d.noisy_observations),
                                    "server.noisy_observations"),
        visualise=_as_bool(raw.get("visualise", d.visualise), "server.visualise"),
        no_of_visualisations=_as_int(raw.get("no_of_visualisations",
                                             d.no_of_visualisations),
                                     "server.no_of_visualisations"),
        max_steps=max_steps,
        action_timeout=timeout,
    )


# -- agents section ----------------------------------------------------------

_AGENT_KEYS = {
    "target_speed", "state_dim", "normalize_actions", "pid_assist",
    "pid_settings", "accel_scale", "steer_scale", "pid_latency",
    "observations", "obs_min", "obs_max", "rewards", "dones",
}
_OBSERVATION_KEYS = {"mode", "multi_flag", "buff_size", "normalize"}
_PID_SETTING_KEYS = {"accel_pid", "steer_pid"}


@dataclass(frozen=True)
class AgentSettings:
    target_speed: float = 50.0          # km/h
    state_dim: int | None = None
    normalize_actions: bool = True
    pid_assist: bool = True
    accel_gains: PIDGains = DEFAULT_ACCEL_GAINS
    steer_gains: PIDGains = DEFAULT_STEER_GAINS
    accel_scale: float = 0.02
    steer_scale: float = 1.0
    pid_latency: int = 5
    obs_mode: str = "basic"
    multi_flag: bool = False
    buff_size: int = 1
    obs_normalize: bool = True
    obs_min: dict = field(default_factory=dict)
    obs_max: dict = field(default_factory=dict)
    reward_spec: RewardSpec = field(
        default_factory=lambda: RewardSpec.from_dict({"progress": {"scale": 1.0}}))
    done_names: tuple[str, ...] = ("timeout",)


def _parse_agent(raw: dict, idx: int) -> AgentSettings:
    path = f"agents[{idx}]"
    _check_keys(raw, _AGENT_KEYS, path)
    d = AgentSettings()
    pid_raw = raw.get("pid_settings") or {}
    _check_keys(pid_raw, _PID_SETTING_KEYS, f"{path}.pid_settings")
    obs_raw = raw.get("observations") or {}
    _check_keys(obs_raw, _OBSERVATION_KEYS, f"{path}.observations")
    mode = obs_raw.get("mode", d.obs_mode)
    if mode not in OBSERVATION_MODES:
        raise ConfigError(f"{path}.observations.mode: unknown mode {mode!r}; "
                          f"known: {sorted(OBSERVATION_MODES)}")
    buff_size = _as_int(obs_raw.get("buff_size", d.buff_size),
                        f"{path}.observations.buff_size")
    _req(buff_size >= 1, f"{path}.observations.buff_size", "must be >= 1")
    latency = _as_int(raw.get("pid_latency", d.pid_latency), f"{path}.pid_latency")
    _req(latency >= 1, f"{path}.pid_latency", "must be >= 1")
    obs_min = raw.get("obs_min") or {}
    obs_max = raw.get("obs_max") or {}
    for bound_name, bounds in (("obs_min", obs_min), ("obs_max", obs_max)):
        _req(isinstance(bounds, dict), f"{path}.{bound_name}", "must be a mapping")
        for var in bounds:
            if var not in DEFAULT_OBS_BOUNDS:
                raise ConfigError(f"{path}.{bound_name}.{var}: unknown observation variable")
    for var in set(obs_min) | set(obs_max):
        lo = obs_min.get(var, DEFAULT_OBS_BOUNDS[var][0])
        hi = obs_max.get(var, DEFAULT_OBS_BOUNDS[var][1])
        _req(lo < hi, f"{path}.obs_min/obs_max.{var}", "min must be below max")
    rewards_raw = raw.get("rewards")
    if rewards_raw is None:
        reward_spec = d.reward_spec
    else:
        _req(isinstance(rewards_raw, dict), f"{path}.rewards", "must be a mapping")
        reward_spec = RewardSpec.from_dict(rewards_raw, where=f"{path}.rewards")
    dones_raw = raw.get("dones", list(d.done_names))
    _req(isinstance(dones_raw, list) and all(isinstance(n, str) for n in dones_raw),
         f"{path}.dones", "must be a list of condition names")
    try:
        DoneSpec.from_names(dones_raw, max_steps=1)
    except ConfigError as exc:
        raise ConfigError(f"{path}.{exc}") from exc
    state_dim = raw.get("state_dim")
    if state_dim is not None:
        state_dim = _as_int(state_dim, f"{path}.state_dim")
    target_speed = _as_float(raw.get("target_speed", d.target_speed),
                             f"{path}.target_speed")
    _req(target_speed > 0, f"{path}.target_speed", "must be > 0")
    return AgentSettings(
        target_speed=target_speed,
        state_dim=state_dim,
        normalize_actions=_as_bool(raw.get("normalize_actions", d.normalize_actions),
                                   f"{path}.normalize_actions"),
        pid_assist=_as_bool(raw.get("pid_assist", d.pid_assist), f"{path}.pid_assist"),
        accel_gains=_pid_gains(pid_raw.get("accel_pid"), f"{path}.pid_settings.accel_pid",
                               d.accel_gains),
        steer_gains=_pid_gains(pid_raw.get("steer_pid"), f"{path}.pid_settings.steer_pid",
                               d.steer_gains),
        accel_scale=_as_float(raw.get("accel_scale", d.accel_scale), f"{path}.accel_scale"),
        steer_scale=_as_float(raw.get("steer_scale", d.steer_scale), f"{path}.steer_scale"),
        pid_latency=latency,
        obs_mode=mode,
        multi_flag=_as_bool(obs_raw.get("multi_flag", d.multi_flag),
                            f"{path}.observations.multi_flag"),
        buff_size=buff_size,
        obs_normalize=_as_bool(obs_raw.get("normalize", d.obs_normalize),
                               f"{path}.observations.normalize"),
        obs_min=dict(obs_min),
        obs_max=dict(obs_max),
        reward_spec=reward_spec,
        done_names=tuple(dones_raw),
    )


# -- traffic section ---------------------------------------------------------

_TRAFFIC_KEYS = {
    "name", "target_speed", "target_lane_pos", "initial_distance",
    "initial_trackpos", "track_len", "pid_settings", "accel_scale",
    "steer_scale", "collision_time_window", "parking", "sinusoid_period",
    "p_switch", "p_stop", "stop_duration",
}
_PARKING_KEYS = {"distance", "track_pos"}


@dataclass(frozen=True)
class TrafficRecord:
    """One traffic entry as configured; spawn/parking fields may be ranges."""

    behavior: str = "ConstVelTrafficAgent"
    target_speed: float = 50.0
    target_lane_pos: float = 0.0
    initial_distance: tuple[float, float] = (10.0, 20.0)
    initial_trackpos: tuple[float, float] = (0.0, 0.0)
    parking_distance: tuple[float, float] | None = None
    parking_trackpos: tuple[float, float] | None = None
    collision_time_window: float = 2.0
    accel_gains: PIDGains = DEFAULT_ACCEL_GAINS
    steer_gains: PIDGains = DEFAULT_STEER_GAINS
    accel_scale: float = 0.02
    steer_scale: float = 1.0
    sinusoid_period: int = 200
    p_switch: float = 0.01
    p_stop: float = 0.005
    stop_duration: int = 100

    def resolve(self, rng, randomize: bool) -> tuple[TrafficConfig, float, float]:
        """Sample this record into (behavior config, spawn distance, spawn pos)."""
        def pick(lo_hi):
            lo, hi = lo_hi
            if not randomize or lo == hi:
                return (lo + hi) / 2.0
            return float(rng.uniform(lo, hi))

        parking = None
        if self.parking_distance is not None:
            parking = (pick(self.parking_distance),
                       pick(self.parking_trackpos or (0.0, 0.0)))
        cfg = TrafficConfig(
            behavior=self.behavior,
            target_speed=self.target_speed,
            target_lane_pos=self.target_lane_pos,
            parking=parking,
            initial_distance=self.initial_distance,
            initial_trackpos=self.initial_trackpos,
            collision_time_window=self.collision_time_window,
            accel_gains=self.accel_gains,
            steer_gains=self.steer_gains,
            accel_scale=self.accel_scale,
            steer_scale=self.steer_scale,
            sinusoid_period=self.sinusoid_period,
            p_switch=self.p_switch,
            p_stop=self.p_stop,
            stop_duration=self.stop_duration,
        )
        spawn_dist = float(rng.uniform(*self.initial_distance)) if randomize \
            else sum(self.initial_distance) / 2.0
        spawn_pos = float(rng.uniform(*self.initial_trackpos)) if randomize \
            else sum(self.initial_trackpos) / 2.0
        return cfg, spawn_dist, spawn_pos


def _parse_traffic(raw: dict, idx: int) -> TrafficRecord:
    path = f"traffic[{idx}]"
    _check_keys(raw, _TRAFFIC_KEYS, path)
    d = TrafficRecord()
    name = raw.get("name", d.behavior)
    if name not in BEHAVIOR_NAMES:
        raise ConfigError(f"{path}.name: unknown behavior {name!r}; "
                          f"known: {list(BEHAVIOR_NAMES)}")
    pid_raw = raw.get("pid_settings") or {}
    _check_keys(pid_raw, _PID_SETTING_KEYS, f"{path}.pid_settings")
    parking_raw = raw.get("parking")
    parking_distance = parking_trackpos = None
    if parking_raw is not None:
        _req(isinstance(parking_raw, dict), f"{path}.parking", "must be a mapping")
        _check_keys(parking_raw, _PARKING_KEYS, f"{path}.parking")
        _req("distance" in parking_raw, f"{path}.parking", "needs a distance")
        parking_distance = _as_range(parking_raw["distance"], f"{path}.parking.distance")
        parking_trackpos = _as_range(parking_raw.get("track_pos", 0.0),
                                     f"{path}.parking.track_pos")
    target_speed = _as_float(raw.get("target_speed", d.target_speed),
                             f"{path}.target_speed")
    _req(target_speed >= 0, f"{path}.target_speed", "must be >= 0")
    lane = _as_float(raw.get("target_lane_pos", d.target_lane_pos),
                     f"{path}.target_lane_pos")
    _req(abs(lane) <= 1, f"{path}.target_lane_pos", "must lie in [-1, 1]")
    window = _as_float(raw.get("collision_time_window", d.collision_time_window),
                       f"{path}.collision_time_window")
    _req(window > 0, f"{path}.collision_time_window", "must be > 0")
    try:
        return TrafficRecord(
            behavior=name,
            target_speed=target_speed,
            target_lane_pos=lane,
            initial_distance=_as_range(raw.get("initial_distance",
                                               list(d.initial_distance)),
                                       f"{path}.initial_distance"),
            initial_trackpos=_as_range(raw.get("initial_trackpos",
                                               list(d.initial_trackpos)),
                                       f"{path}.initial_trackpos"),
            parking_distance=parking_distance,
            parking_trackpos=parking_trackpos,
            collision_time_window=window,
            accel_gains=_pid_gains(pid_raw.get("accel_pid"),
                                   f"{path}.pid_settings.accel_pid", d.accel_gains),
            steer_gains=_pid_gains(pid_raw.get("steer_pid"),
                                   f"{path}.pid_settings.steer_pid", d.steer_gains),
            accel_scale=_as_float(raw.get("accel_scale", d.accel_scale),
                                  f"{path}.accel_scale"),
            steer_scale=_as_float(raw.get("steer_scale", d.steer_scale),
                                  f"{path}.steer_scale"),
            sinusoid_period=_as_int(raw.get("sinusoid_period", d.sinusoid_period),
                                    f"{path}.sinusoid_period"),
            p_switch=_as_float(raw.get("p_switch", d.p_switch), f"{path}.p_switch"),
            p_stop=_as_float(raw.get("p_stop", d.p_stop), f"{path}.p_stop"),
            stop_duration=_as_int(raw.get("stop_duration", d.stop_duration),
                                  f"{path}.stop_duration"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- communications spec -----------------------------------------------------

@dataclass(frozen=True)
class CommEntry:
    source: int
    vars: tuple[str, ...]
    buff_size: int


@dataclass(frozen=True)
class CommBufferSpec:
    """Per observing agent: which variables to mirror from which peers."""

    entries: tuple[tuple[int, tuple[CommEntry, ...]], ...] = ()

    def for_agent(self, agent: int) -> tuple[CommEntry, ...]:
        for idx, items in self.entries:
            if idx == agent:
                return items
        return ()

    def width_for(self, agent: int, action_widths: dict[int, int]) -> int:
        total = 0
        for entry in self.for_agent(agent):
            per_step = 0
            for var in entry.vars:
                per_step += action_widths[entry.source] if var == "peerActions" else 1
            total += per_step * entry.buff_size
        return total


def parse_comm_spec(source: Union[bytes, str, IO, dict, None],
                    n_agents: int) -> CommBufferSpec:
    """Parse the communications document against the configured agent count."""
    if source is None:
        return CommBufferSpec()
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        try:
            doc = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            raise ConfigError(f"communications: malformed document: {exc}") from exc
    else:
        doc = source
    if doc is None:
        return CommBufferSpec()
    _req(isinstance(doc, dict), "communications", "must be a mapping of agent ids")
    entries = []
    for key, body in doc.items():
        if not (isinstance(key, str) and key.startswith("agent_")):
            raise ConfigError(f"communications.{key}: agent ids look like agent_<index>")
        try:
            idx = int(key.split("_", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"communications.{key}: bad agent index") from exc
        _req(0 <= idx < n_agents, f"communications.{key}",
             f"agent index out of range [0, {n_agents})")
        _req(isinstance(body, dict), f"communications.{key}", "must be a mapping")
        _check_keys(body, {"comms", "vars", "buff_size"}, f"communications.{key}")
        sources = body.get("comms") or []
        _req(isinstance(sources, list), f"communications.{key}.comms",
             "must be a list of agent ids")
        vars_ = tuple(body.get("vars") or ())
        for var in vars_:
            if var not in COMM_VARS:
                raise ConfigError(f"communications.{key}.vars: unknown variable {var!r}; "
                                  f"known: {list(COMM_VARS)}")
        buff = _as_int(body.get("buff_size", 1), f"communications.{key}.buff_size")
        _req(buff >= 1, f"communications.{key}.buff_size", "must be >= 1")
        items = []
        for src in sources:
            _req(isinstance(src, str) and src.startswith("agent_"),
                 f"communications.{key}.comms", f"bad source id {src!r}")
            sidx = int(src.split("_", 1)[1])
            _req(0 <= sidx < n_agents, f"communications.{key}.comms",
                 f"source {src} out of range")
            _req(sidx != idx, f"communications.{key}.comms",
                 "an agent cannot observe itself through the buffer")
            items.append(CommEntry(source=sidx, vars=vars_, buff_size=buff))
        entries.append((idx, tuple(items)))
    return CommBufferSpec(entries=tuple(entries))


# -- whole config ------------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    server: ServerSettings
    agents: tuple[AgentSettings, ...]
    traffic: tuple[TrafficRecord, ...]
    comms: CommBufferSpec = CommBufferSpec()
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def n_learning(self) -> int:
        return len(self.agents)

    def done_spec_for(self, agent: int) -> DoneSpec:
        return DoneSpec.from_names(self.agents[agent].done_names,
                                   max_steps=self.server.max_steps,
                                   track_limits=self.server.track_limits)

    def action_width(self, agent: int) -> int:
        return 2 if self.agents[agent].pid_assist else 3

    def observation_width(self, agent: int) -> int:
        widths = {i: self.action_width(i) for i in range(self.n_learning)}
        comms = self.comms.width_for(agent, widths)
        return mode_width(self.agents[agent].obs_mode, comms)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


_TOP_KEYS = {"server", "agents", "traffic"}


def parse_config(source: Union[bytes, str, IO, dict],
                 comm_source: Union[bytes, str, IO, dict, None] = None) -> SimulationConfig:
    """Parse, default-fill and validate a whole simulation configuration."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        try:
            doc = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config document: {exc}") from exc
    else:
        doc = copy.deepcopy(source)
    _req(isinstance(doc, dict), "config", "document must be a mapping")
    _check_keys(doc, _TOP_KEYS, "config")
    server = _parse_server(doc.get("server") or {})
    agents_raw = doc.get("agents")
    _req(isinstance(agents_raw, list) and agents_raw,
         "agents", "must be a non-empty list of agent configurations")
    agents = tuple(_parse_agent(a or {}, i) for i, a in enumerate(agents_raw))
    traffic_raw = doc.get("traffic") or []
    _req(isinstance(traffic_raw, list), "traffic", "must be a list of traffic records")
    traffic = tuple(_parse_traffic(t or {}, i) for i, t in enumerate(traffic_raw))

    n_learning = len(agents)
    if n_learning + server.min_traffic_cars > server.max_cars:
        raise ConfigError(
            "server.max_cars: the configuration must satisfy "
            f"n_learning + min_traffic_cars <= max_cars "
            f"({n_learning} + {server.min_traffic_cars} > {server.max_cars})"
        )
    max_traffic = server.max_cars - n_learning
    if len(traffic) < max_traffic:
        raise ConfigError(
            f"traffic: {max_traffic} traffic slots may be sampled "
            f"(max_cars - n_learning) but only {len(traffic)} records are listed"
        )
    comms = parse_comm_spec(comm_source, n_learning)
    cfg = SimulationConfig(server=server, agents=agents, traffic=traffic,
                           comms=comms, raw={})
    # state_dim, when pinned, must match the advertised vector width
    for i, agent in enumerate(agents):
        if agent.obs_mode == "comms" and not comms.for_agent(i):
            raise ConfigError(
                f"agents[{i}].observations.mode: 'comms' needs a communications "
                f"entry for agent_{i}")
        if agent.state_dim is not None:
            width = cfg.observation_width(i)
            if agent.state_dim != width:
                raise ConfigError(
                    f"agents[{i}].state_dim: {agent.state_dim} does not match the "
                    f"{agent.obs_mode!r} vector width {width}")
    object.__setattr__(cfg, "raw", _normalize(cfg))
    return cfg


def parse_config_file(path: Union[str, Path],
                      comm_path: Union[str, Path, None] = None) -> SimulationConfig:
    comm_source = Path(comm_path).read_text() if comm_path else None
    return parse_config(Path(path).read_text(), comm_source)


def _normalize(cfg: SimulationConfig) -> dict:
    """Canonical plain-dict form; parse(to_yaml()) round trips exactly."""
    s = cfg.server
    server = {
        "base_port": s.base_port,
        "max_cars": s.max_cars,
        "min_traffic_cars": s.min_traffic_cars,
        "track_names": list(s.track_names),
        "track_limits": list(s.track_limits),
        "distance_to_start": s.distance_to_start,
        "traffic_car": s.traffic_car,
        "learning_car": list(s.learning_car),
        "randomize_env": s.randomize_env,
        "add_noise_to_actions": s.add_noise_to_actions,
        "action_noise_std": s.action_noise_std,
        "noisy_observations": s.noisy_observations,
        "visualise": s.visualise,
        "no_of_visualisations": s.no_of_visualisations,
        "max_steps": s.max_steps,
        "action_timeout": s.action_timeout,
    }
    agents = []
    for a in cfg.agents:
        agents.append({
            "target_speed": a.target_speed,
            "normalize_actions": a.normalize_actions,
            "pid_assist": a.pid_assist,
            "pid_settings": {
                "accel_pid": [a.accel_gains.kp, a.accel_gains.ki, a.accel_gains.kd],
                "steer_pid": [a.steer_gains.kp, a.steer_gains.ki, a.steer_gains.kd],
            },
            "accel_scale": a.accel_scale,
            "steer_scale": a.steer_scale,
            "pid_latency": a.pid_latency,
            "observations": {
                "mode": a.obs_mode,
                "multi_flag": a.multi_flag,
                "buff_size": a.buff_size,
                "normalize": a.obs_normalize,
            },
            "obs_min": dict(a.obs_min),
            "obs_max": dict(a.obs_max),
            "rewards": {name: {"scale": w, **params}
                        for name, w, params in a.reward_spec.components},
            "dones": list(a.done_names),
        })
    traffic = []
    for t in cfg.traffic:
        rec = {
            "name": t.behavior,
            "target_speed": t.target_speed,
            "target_lane_pos": t.target_lane_pos,
            "initial_distance": list(t.initial_distance),
            "initial_trackpos": list(t.initial_trackpos),
            "collision_time_window": t.collision_time_window,
            "pid_settings": {
                "accel_pid": [t.accel_gains.kp, t.accel_gains.ki, t.accel_gains.kd],
                "steer_pid": [t.steer_gains.kp, t.steer_gains.ki, t.steer_gains.kd],
            },
            "accel_scale": t.accel_scale,
            "steer_scale": t.steer_scale,
            "sinusoid_period": t.sinusoid_period,
            "p_switch": t.p_switch,
            "p_stop": t.p_stop,
            "stop_duration": t.stop_duration,
        }
        if t.parking_distance is not None:
            rec["parking"] = {"distance": list(t.parking_distance),
                              "track_pos": list(t.parking_trackpos or (0.0, 0.0))}
        traffic.append(rec)
    return {"server": server, "agents": agents, "traffic": traffic}


# -- episode sampling ---------------------------------------------------------

@dataclass(frozen=True)
class EpisodeSetup:
    """One sampled world configuration for a single episode."""

    track_name: str
    learning_cars: tuple[str, ...]
    learning_spawns: tuple[tuple[float, float], ...]   # (distance, track_pos)
    n_traffic: int
    traffic: tuple[tuple[TrafficConfig, float, float], ...]  # (cfg, distance, track_pos)
    noisy_observations: bool
    add_noise_to_actions: bool
    action_noise_std: float


def sample_episode_setup(config: SimulationConfig, rng) -> EpisodeSetup:
    """Sample one episode: uniform track/car choices, discrete-uniform traffic
    count, continuous-uniform spawn positions.

    With randomize_env off the setup is the deterministic first choice
    (first track and car, minimum traffic count, range midpoints).
    """
    server = config.server
    if not server.track_names:
        raise ConfigError("server.track_names: empty")
    if not server.learning_car:
        raise ConfigError("server.learning_car: empty")
    randomize = server.randomize_env
    n_low = server.min_traffic_cars
    n_high = server.max_cars - config.n_learning
    if randomize:
        track = str(rng.choice(list(server.track_names)))
        cars = tuple(str(rng.choice(list(server.learning_car)))
                     for _ in range(config.n_learning))
        n_traffic = int(rng.integers(n_low, n_high + 1))
    else:
        track = server.track_names[0]
        cars = tuple(server.learning_car[0] for _ in range(config.n_learning))
        n_traffic = n_low
    traffic = tuple(rec.resolve(rng, randomize) for rec in config.traffic[:n_traffic])
    spawns = tuple((server.distance_to_start, 0.0) for _ in range(config.n_learning))
    return EpisodeSetup(
        track_name=track,
        learning_cars=cars,
        learning_spawns=spawns,
        n_traffic=n_traffic,
        traffic=traffic,
        noisy_observations=server.noisy_observations,
        add_noise_to_actions=server.add_noise_to_actions,
        action_noise_std=server.action_noise_std,
    )


# -- curriculum ----------------------------------------------------------------

# the axes a schedule may override, plus spawn-range parameters
_CURRICULUM_SERVER_KEYS = {
    "track_names", "learning_car", "min_traffic_cars", "max_cars",
    "add_noise_to_actions", "action_noise_std", "noisy_observations",
    "distance_to_start",
}
_CURRICULUM_AGENT_KEYS = {"target_speed"}
_CURRICULUM_TRAFFIC_KEYS = {
    "name", "target_speed", "target_lane_pos", "initial_distance",
    "initial_trackpos", "parking", "p_switch", "p_stop", "stop_duration",
    "sinusoid_period", "collision_time_window",
}


@dataclass(frozen=True)
class CurriculumStage:
    until_episode: int
    overrides: dict


@dataclass(frozen=True)
class CurriculumSchedule:
    stages: tuple[CurriculumStage, ...] = ()

    def __post_init__(self):
        bounds = [st.until_episode for st in self.stages]
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ConfigError("curriculum: stage boundaries must strictly increase")
        for st in self.stages:
            if st.until_episode < 1:
                raise ConfigError("curriculum: until_episode must be >= 1")
            for key in st.overrides:
                _validate_curriculum_key(key)


def _validate_curriculum_key(key: str) -> None:
    parts = key.split(".")
    if parts[0] == "n_learning" and len(parts) == 1:
        return
    if parts[0] == "server" and len(parts) == 2 and parts[1] in _CURRICULUM_SERVER_KEYS:
        return
    if parts[0] == "agents" and len(parts) == 3 and parts[2] in _CURRICULUM_AGENT_KEYS:
        return
    if parts[0] == "traffic" and len(parts) == 3 and parts[2] in _CURRICULUM_TRAFFIC_KEYS:
        return
    raise ConfigError(
        f"curriculum: {key!r} is not a curriculum axis; overrides are limited to "
        "n_learning, the randomization/noise/speed keys and spawn-range parameters")


def load_curriculum(source: Union[bytes, str, IO, dict]) -> CurriculumSchedule:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        try:
            doc = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            raise ConfigError(f"curriculum: malformed document: {exc}") from exc
    else:
        doc = source
    _req(isinstance(doc, dict), "curriculum", "document must be a mapping")
    _check_keys(doc, {"stages"}, "curriculum")
    stages_raw = doc.get("stages") or []
    _req(isinstance(stages_raw, list), "curriculum.stages", "must be a list")
    stages = []
    for i, st in enumerate(stages_raw):
        _req(isinstance(st, dict), f"curriculum.stages[{i}]", "must be a mapping")
        _check_keys(st, {"until_episode", "overrides"}, f"curriculum.stages[{i}]")
        until = _as_int(st.get("until_episode"), f"curriculum.stages[{i}].until_episode")
        overrides = st.get("overrides") or {}
        _req(isinstance(overrides, dict), f"curriculum.stages[{i}].overrides",
             "must be a mapping")
        stages.append(CurriculumStage(until_episode=until, overrides=dict(overrides)))
    return CurriculumSchedule(stages=tuple(stages))


def apply_curriculum(schedule: CurriculumSchedule, episode_index: int,
                     base: SimulationConfig) -> SimulationConfig:
    """Effective config for a 1-based episode index; inclusive-until stages.

    Episodes beyond the last boundary keep the last stage's overrides.
    """
    if not schedule.stages:
        return base
    stage = schedule.stages[-1]
    for st in schedule.stages:
        if episode_index <= st.until_episode:
            stage = st
            break
    if not stage.overrides:
        return base
    doc = base.to_dict()
    for key, value in stage.overrides.items():
        _apply_override(doc, key, value)
    return parse_config(doc)


def _apply_override(doc: dict, key: str, value) -> None:
    _validate_curriculum_key(key)
    parts = key.split(".")
    if parts[0] == "n_learning":
        n = int(value)
        if not 1 <= n <= len(doc["agents"]):
            raise ConfigError(
                f"curriculum: n_learning {n} must lie in [1, {len(doc['agents'])}]")
        doc["agents"] = doc["agents"][:n]
        return
    if parts[0] == "server":
        doc["server"][parts[1]] = copy.deepcopy(value)
        return
    section, selector, field_name = parts
    records = doc[section]
    if selector == "*":
        targets = range(len(records))
    else:
        idx = int(selector)
        if not 0 <= idx < len(records):
            raise ConfigError(f"curriculum: {key!r} index out of range")
        targets = (idx,)
    for t in targets:
        records[t][field_name] = copy.deepcopy(value)
