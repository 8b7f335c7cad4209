"""Simulation engine: session management, the lockstep world loop, episodes.

One server owns one world.  Each car (traffic or learning) is an agent
session with a dedicated UDP port; sessions may instead run in-process with a
policy callable, which produces identical trajectories to the networked path
given the same seed.  Every control step the server polls one action per
running session, advances physics by exactly ten ticks, applies collisions
and damage, evaluates per-agent reward and termination, records shared
variables into the communication buffer and dispatches egocentric frames.

Per-agent episodes end independently; the world resets once, when the last
running learning agent is done.
"""

from __future__ import annotations

import math
import socket
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import EpisodeSetup, SimulationConfig, CurriculumSchedule, \
    apply_curriculum, sample_episode_setup
from .constants import (
    KMH_PER_MS,
    PHYSICS_DT,
    STEP_PERIOD,
    TICKS_PER_STEP,
)
from .control import (
    DesireAction,
    PrimitiveAction,
    TSControllerState,
    add_action_noise,
    sample_action_noise,
    ts_to_primitive,
)
from .dynamics import CarModel, VehicleState, apply_damage, builtin_car, \
    detect_collisions, physics_tick
from .errors import ProtocolError, StartupError
from . import protocol
from .rewards import DoneContext, RewardContext, compose_reward, evaluate_done
from .sensors import (
    DEFAULT_BEAM_ANGLES,
    ObservationSpec,
    SensorFrame,
    apply_observation_noise,
    build_sensor_frame,
)
from .track import Track, builtin_track, load_track
from .traffic import TrafficConfig, collision_avoidance_override, make_behavior, \
    traffic_policy_step

Policy = Callable[[SensorFrame, int], object]   # returns DesireAction or PrimitiveAction


def assign_ports(n_traffic: int, n_learning: int, base_port: int,
                 port_budget: int | None = None) -> list[int]:
    """Session ports in order: traffic first, then learning, contiguous from base.

    Raises StartupError when the range exceeds the budget or the port space.
    """
    total = n_traffic + n_learning
    if port_budget is not None and total > port_budget:
        raise StartupError(
            f"{total} sessions need ports {base_port}..{base_port + total - 1} "
            f"but the budget is {port_budget} ports")
    if base_port + total - 1 > 65535:
        raise StartupError(f"port {base_port + total - 1} exceeds the UDP port space")
    return [base_port + i for i in range(total)]


@dataclass
class CommRecord:
    """Shared variables of one learning agent after one control step."""

    action: tuple[float, ...] = ()
    values: dict = field(default_factory=dict)


class CommBuffer:
    """Ring of per-step records; frames at step t read records t-1 and older."""

    def __init__(self, depth: int):
        self.depth = max(depth, 1)
        self._records: dict[int, dict[int, CommRecord]] = {}

    def clear(self) -> None:
        self._records.clear()

    def push(self, step: int, per_agent: dict[int, CommRecord]) -> None:
        self._records[step] = per_agent
        stale = [k for k in self._records if k <= step - self.depth - 1]
        for k in stale:
            del self._records[k]

    def lookup(self, step: int, agent: int) -> Optional[CommRecord]:
        rec = self._records.get(step)
        return rec.get(agent) if rec else None


class UdpTransport:
    """One bound socket serving exactly one client."""

    def __init__(self, port: int, host: str = "127.0.0.1"):
        self.port = port
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise StartupError(f"cannot bind UDP port {port}: {exc}") from exc
        self.client_addr = None

    def send(self, text: str) -> None:
        if self.client_addr is not None:
            self.sock.sendto(text.encode("ascii"), self.client_addr)

    def recv(self, timeout: float) -> Optional[tuple[str, tuple]]:
        self.sock.settimeout(timeout)
        try:
            data, addr = self.sock.recvfrom(65536)
        except socket.timeout:
            return None
        return data.decode("ascii", errors="replace"), addr

    def close(self) -> None:
        self.sock.close()


class AgentSession:
    """One car's connection: identity, controller memory and episode status."""

    def __init__(self, index: int, port: int, kind: str, name: str):
        self.index = index          # car index in the world
        self.port = port
        self.kind = kind            # "traffic" | "learning"
        self.name = name
        self.agent_idx = -1         # learning-agent index, -1 for traffic
        self.client_id = ""
        self.identified = False
        self.episode_status = "running"   # running | done | disconnected
        self.done_reason = "none"
        self.beam_angles = tuple(DEFAULT_BEAM_ANGLES)
        self.controller: TSControllerState | None = None
        self.behavior = None
        self.traffic_cfg: TrafficConfig | None = None
        self.policy: Policy | None = None
        self.transport: UdpTransport | None = None
        self.last_frame: SensorFrame | None = None
        self.last_raw = None        # last DesireAction or PrimitiveAction received
        self.last_primitive = PrimitiveAction()
        self.reward = 0.0

    @property
    def running(self) -> bool:
        return self.episode_status == "running"

    def send(self, text: str) -> None:
        if self.transport is not None:
            self.transport.send(text)


@dataclass
class CarRuntime:
    """Server-side per-car episode bookkeeping."""

    state: VehicleState
    model: CarModel
    spawn_s: float = 0.0
    laps: int = 0
    lap_start_step: int = 0
    lap_completed: bool = False
    lap_avg_speed: float = 0.0
    damage_prev: float = 0.0
    progress_prev: float = 0.0
    rank: int = 1
    rank_prev: int = 1
    angles: deque = field(default_factory=lambda: deque(maxlen=3))


@dataclass
class StepEvent:
    """Per-agent outcome of one control step, surfaced to harness callbacks."""

    step: int
    agent: str
    x: float
    y: float
    heading: float
    speed_kmh: float
    track_pos: float
    dist_raced: float
    action: tuple[float, ...]
    reward: float
    done: bool
    done_reason: str


class SimServer:
    """Owns the world state; the step loop is the sole mutator."""

    def __init__(self, config: SimulationConfig, seed: int = 0,
                 schedule: CurriculumSchedule | None = None,
                 track_dir=None, host: str = "127.0.0.1"):
        self.base_config = config
        self.schedule = schedule or CurriculumSchedule()
        self.rng = np.random.default_rng(seed)
        self.host = host
        self.track_dir = track_dir
        self.episode_index = 0         # 1-based once the first episode starts
        self.step_count = 0
        self.physics_ticks = 0
        self.world_resets = 0
        self.realtime = False          # throttle stepping to the wall clock
        self.sessions: list[AgentSession] = []
        self.cars: list[CarRuntime] = []
        self.track: Track | None = None
        self.config = config           # effective config for the current episode
        self.setup: EpisodeSetup | None = None
        self.comm_buffer = CommBuffer(depth=max(
            [a.buff_size for a in config.agents], default=1))
        self._learning_policies: dict[int, Policy] = {}
        self._udp_agents: set[int] = set()
        self._track_cache: dict[str, Track] = {}
        self._frame_log: Callable[[str, int], None] | None = None

    # -- wiring ---------------------------------------------------------------

    def attach_policy(self, agent_idx: int, policy: Policy) -> None:
        """Drive learning agent ``agent_idx`` in-process with a policy callable."""
        self._learning_policies[agent_idx] = policy

    def serve_udp(self, agent_indices=None) -> None:
        """Expose the given learning agents (default all unattached) over UDP."""
        if agent_indices is None:
            agent_indices = [i for i in range(self.base_config.n_learning)
                             if i not in self._learning_policies]
        self._udp_agents = set(agent_indices)

    def _load_track(self, name: str) -> Track:
        if name not in self._track_cache:
            if self.track_dir is not None:
                from pathlib import Path

                path = Path(self.track_dir) / f"{name}.yaml"
                if path.exists():
                    self._track_cache[name] = load_track(path.read_text())
                    return self._track_cache[name]
            self._track_cache[name] = builtin_track(name)
        return self._track_cache[name]

    # -- episode lifecycle ----------------------------------------------------

    def start(self) -> None:
        """Sample the first episode, bind any UDP ports and await handshakes."""
        self._begin_episode(first=True)

    def _begin_episode(self, first: bool) -> None:
        self.episode_index += 1
        self.config = apply_curriculum(self.schedule, self.episode_index,
                                       self.base_config)
        self.setup = sample_episode_setup(self.config, self.rng)
        self.track = self._load_track(self.setup.track_name)
        n_traffic = self.setup.n_traffic
        n_learning = self.config.n_learning
        max_traffic = self.config.server.max_cars - n_learning
        # learning ports stay fixed across episodes by reserving the full
        # traffic range; traffic uses a prefix of it
        all_ports = assign_ports(max_traffic, n_learning,
                                 self.config.server.base_port)
        old_transports = {s.port: s.transport for s in self.sessions}
        old_clients = {s.port: (s.identified, s.client_id, s.beam_angles)
                       for s in self.sessions}
        self.sessions = []
        self.cars = []
        for t in range(n_traffic):
            cfg, dist, pos = self.setup.traffic[t]
            session = AgentSession(index=t, port=all_ports[t], kind="traffic",
                                   name=f"traffic_{t}")
            session.traffic_cfg = cfg
            session.behavior = make_behavior(cfg, self.rng)
            session.controller = TSControllerState(
                pid_latency=1,
                accel_scale=cfg.accel_scale, steer_scale=cfg.steer_scale,
                accel_gains=cfg.accel_gains, steer_gains=cfg.steer_gains)
            self.sessions.append(session)
            self.cars.append(self._spawn_car(self.config.server.traffic_car, dist, pos))
        for a in range(n_learning):
            agent_cfg = self.config.agents[a]
            session = AgentSession(index=n_traffic + a,
                                   port=all_ports[max_traffic + a],
                                   kind="learning", name=f"agent_{a}")
            session.agent_idx = a
            if agent_cfg.pid_assist:
                session.controller = TSControllerState(
                    pid_latency=agent_cfg.pid_latency,
                    accel_scale=agent_cfg.accel_scale,
                    steer_scale=agent_cfg.steer_scale,
                    accel_gains=agent_cfg.accel_gains,
                    steer_gains=agent_cfg.steer_gains)
            session.policy = self._learning_policies.get(a)
            dist, pos = self.setup.learning_spawns[a]
            self.sessions.append(session)
            self.cars.append(self._spawn_car(self.setup.learning_cars[a], dist, pos))
        # transports persist across episodes; identification survives restarts
        for session in self.sessions:
            if session.port in old_transports and old_transports[session.port]:
                session.transport = old_transports[session.port]
                ident, cid, beams = old_clients[session.port]
                session.identified = ident
                session.client_id = cid
                session.beam_angles = beams
        if first:
            for session in self.sessions:
                if session.kind == "learning" and session.agent_idx in self._udp_agents:
                    session.transport = UdpTransport(session.port, self.host)
        self.step_count = 0
        self.physics_ticks = 0
        self.comm_buffer = CommBuffer(depth=max(
            [a.buff_size for a in self.config.agents], default=1))
        self._rank_all()
        for car in self.cars:
            car.rank_prev = car.rank
            car.angles.append(car.state.angle)

    def _spawn_car(self, model_name: str, distance: float, track_pos: float) -> CarRuntime:
        model = builtin_car(model_name)
        lateral = track_pos * self.track.width_at(distance) / 2.0
        x, y, heading = self.track.frenet_to_world(distance % self.track.total_length,
                                                   lateral)
        state = VehicleState(x=x, y=y, heading=heading, rpm=model.idle_rpm)
        pose = self.track.project(x, y, heading)
        state.s = pose.s
        state.lateral = pose.lateral
        state.track_pos = pose.track_pos
        state.angle = pose.angle
        state.segment = pose.segment
        return CarRuntime(state=state, model=model, spawn_s=pose.s)

    def await_clients(self, timeout: float = 30.0) -> None:
        """Block until every UDP-backed session has completed the handshake."""
        deadline = time.monotonic() + timeout
        for session in self.sessions:
            if session.transport is None or session.identified:
                continue
            while not session.identified:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise StartupError(
                        f"session {session.name} on port {session.port} "
                        f"never identified")
                got = session.transport.recv(min(remaining, 0.2))
                if got is None:
                    continue
                message, addr = got
                self._handle_handshake(session, message, addr)

    def _handle_handshake(self, session: AgentSession, message: str, addr) -> None:
        try:
            client_id, angles_deg = protocol.parse_init(message)
        except ProtocolError as exc:
            session.transport.client_addr = addr
            session.send(protocol.encode_error(str(exc)))
            return
        session.transport.client_addr = addr
        session.client_id = client_id
        session.beam_angles = tuple(math.radians(a) for a in angles_deg)
        session.identified = True
        session.send(protocol.IDENTIFIED)

    def dispatch_initial_frames(self) -> None:
        """Send the first observation of the episode to every session."""
        self._rank_all()
        for session in self.sessions:
            frame = self._build_frame(session)
            session.last_frame = frame
            if session.transport is not None:
                session.send(protocol.encode_sensor_frame(frame))
            if self._frame_log is not None:
                self._frame_log(session.name, self.step_count)

    # -- the step loop --------------------------------------------------------

    def step_world(self) -> list[StepEvent]:
        """Advance the world one control step and dispatch frames."""
        server_cfg = self.config.server
        actions: dict[int, PrimitiveAction] = {}
        raw_actions: dict[int, tuple[float, ...]] = {}

        for session in self.sessions:
            if not session.running:
                if session.transport is not None:
                    self._drain_socket(session)
                continue
            raw = self._collect_raw(session)
            if session.kind == "learning" and server_cfg.add_noise_to_actions \
                    and server_cfg.action_noise_std > 0:
                raw = self._noise_raw(raw, server_cfg.action_noise_std)
            primitive = self._realize(session, raw)
            session.last_primitive = primitive
            actions[session.index] = primitive
            raw_actions[session.index] = self._action_vector(raw)

        for _ in range(TICKS_PER_STEP):
            self.physics_ticks += 1
            for session in self.sessions:
                car = self.cars[session.index]
                if not car.state.alive:
                    continue
                action = actions.get(session.index, session.last_primitive)
                car.state = physics_tick(car.state, car.model, action,
                                         self.track, PHYSICS_DT)

        self.step_count += 1

        states = [c.state for c in self.cars]
        models = [c.model for c in self.cars]
        colliding = set()
        for i, j in detect_collisions(states, models):
            colliding.add(i)
            colliding.add(j)
        for idx, car in enumerate(self.cars):
            car.state = apply_damage(car.state, idx in colliding)

        for car in self.cars:
            car.lap_completed = False
            total = self.track.total_length
            while car.state.distance_raced >= (car.laps + 1) * total:
                car.laps += 1
                lap_steps = max(self.step_count - car.lap_start_step, 1)
                car.lap_avg_speed = total / (lap_steps * STEP_PERIOD)
                car.lap_start_step = self.step_count
                car.lap_completed = True
            car.angles.append(car.state.angle)

        self._rank_all()

        events: list[StepEvent] = []
        done_now: dict[int, tuple[bool, str]] = {}
        for session in self.sessions:
            if session.kind != "learning" or not session.running:
                continue
            car = self.cars[session.index]
            agent_cfg = self.config.agents[session.agent_idx]
            damage_delta = car.state.damage - car.damage_prev
            done_spec = self.config.done_spec_for(session.agent_idx)
            done, reason = evaluate_done(done_spec, DoneContext(
                step_count=self.step_count,
                angle=car.state.angle,
                track_pos=car.state.track_pos,
                damage_delta=damage_delta,
                laps_completed=car.laps,
                rank=car.rank,
            ))
            s_target_step = agent_cfg.target_speed / KMH_PER_MS * STEP_PERIOD
            ctx = RewardContext(
                d=car.state.progress - car.progress_prev,
                s_target=s_target_step,
                s_target_speed=agent_cfg.target_speed / KMH_PER_MS,
                angles=tuple(car.angles),
                damage_delta=damage_delta,
                lap_completed=car.lap_completed,
                s_avg=car.lap_avg_speed,
                rank_prev=car.rank_prev,
                rank_now=car.rank,
                race_over=done,
                n_cars=len(self.cars),
                turned_backward=abs(car.state.angle) > math.pi / 2.0,
            )
            reward = compose_reward(agent_cfg.reward_spec, ctx)
            done_now[session.index] = (done, reason)
            # sessions served over the wire are recorded at wire precision, so
            # traces state exactly what the client was told
            if session.transport is not None:
                logged_reward = float(protocol.fmt_sensor(reward))
                logged_dist = float(protocol.fmt_sensor(car.state.distance_raced))
            else:
                logged_reward = reward
                logged_dist = car.state.distance_raced
            events.append(StepEvent(
                step=self.step_count,
                agent=session.name,
                x=car.state.x, y=car.state.y, heading=car.state.heading,
                speed_kmh=car.state.v_long * KMH_PER_MS,
                track_pos=car.state.track_pos,
                dist_raced=logged_dist,
                action=raw_actions.get(session.index, ()),
                reward=logged_reward,
                done=done,
                done_reason=reason if done else "none",
            ))
            session.reward = reward

        for car in self.cars:
            car.damage_prev = car.state.damage
            car.progress_prev = car.state.progress
            car.rank_prev = car.rank

        self._push_comm_records(raw_actions)

        for session in self.sessions:
            if not session.running:
                continue
            frame = self._build_frame(session)
            if session.kind == "learning" and session.index in done_now:
                done, reason = done_now[session.index]
                frame.reward = getattr(session, "reward", 0.0)
                frame.done = done
                frame.done_reason = reason if done else "none"
            session.last_frame = frame
            if session.transport is not None:
                session.send(protocol.encode_sensor_frame(frame))
            if self._frame_log is not None:
                self._frame_log(session.name, self.step_count)
            if session.kind == "learning":
                done, reason = done_now.get(session.index, (False, "none"))
                if done:
                    session.episode_status = "done"
                    session.done_reason = reason
                    session.send(protocol.encode_done(reason))

        return events

    def _collect_raw(self, session: AgentSession):
        if session.kind == "traffic":
            desire = traffic_policy_step(session.behavior, session.last_frame,
                                         self.step_count)
            return collision_avoidance_override(session.last_frame,
                                                session.traffic_cfg, desire)
        if session.policy is not None:
            return session.policy(session.last_frame, self.step_count)
        if session.transport is not None:
            return self._recv_action(session)
        return session.last_raw if session.last_raw is not None else PrimitiveAction()

    def _recv_action(self, session: AgentSession):
        deadline = time.monotonic() + self.config.server.action_timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            got = session.transport.recv(remaining)
            if got is None:
                break
            message, addr = got
            if not session.identified or "(init" in message:
                self._handle_handshake(session, message, addr)
                continue
            try:
                kind, value = protocol.decode_action(message)
            except ProtocolError as exc:
                session.send(protocol.encode_error(str(exc)))
                continue
            if kind == "meta":
                session.episode_status = "done"
                session.done_reason = "meta_restart"
                session.send(protocol.encode_done("meta_restart"))
                return session.last_raw if session.last_raw is not None \
                    else PrimitiveAction()
            session.last_raw = value
            return value
        return session.last_raw if session.last_raw is not None else PrimitiveAction()

    def _drain_socket(self, session: AgentSession) -> None:
        while True:
            got = session.transport.recv(0.0001)
            if got is None:
                return

    def _noise_raw(self, raw, std: float):
        if isinstance(raw, DesireAction):
            eps = sample_action_noise(std, self.rng, n=2)
            return DesireAction(
                target_track_pos=raw.target_track_pos + eps[0],
                target_speed_norm=raw.target_speed_norm + eps[1],
            ).clipped()
        return add_action_noise(raw, std, self.rng)

    def _realize(self, session: AgentSession, raw) -> PrimitiveAction:
        if isinstance(raw, DesireAction):
            frame = session.last_frame or SensorFrame()
            action, session.controller = ts_to_primitive(
                raw, frame, session.controller or TSControllerState(), STEP_PERIOD)
            return action
        return raw

    @staticmethod
    def _action_vector(raw) -> tuple[float, ...]:
        if isinstance(raw, DesireAction):
            return (raw.target_track_pos, raw.target_speed_norm)
        return (raw.steer, raw.accel, raw.brake)

    def _rank_all(self) -> None:
        # standings order: absolute on-track progress (spawn offset plus the
        # signed arc advance, so laps count), ties broken by distance raced;
        # distances quantize to a micrometer so float noise in the per-tick
        # arc-length accumulation cannot scramble the order
        keys = []
        for idx, car in enumerate(self.cars):
            keys.append((round(car.spawn_s + car.state.progress, 6),
                         round(car.state.distance_raced, 6), -idx))
        for idx, car in enumerate(self.cars):
            car.rank = 1 + sum(1 for j, k in enumerate(keys)
                               if j != idx and k > keys[idx])

    def _push_comm_records(self, raw_actions) -> None:
        records: dict[int, CommRecord] = {}
        for session in self.sessions:
            if session.kind != "learning":
                continue
            car = self.cars[session.index]
            records[session.agent_idx] = CommRecord(
                action=raw_actions.get(session.index, ()),
                values={
                    "angle": car.state.angle,
                    "trackPos": car.state.track_pos,
                    "speedX": car.state.v_long * KMH_PER_MS,
                    "speedY": car.state.v_lat * KMH_PER_MS,
                    "distFromStart": car.state.s,
                    "distRaced": car.state.distance_raced,
                    "damage": car.state.damage,
                },
            )
        self.comm_buffer.push(self.step_count, records)

    def _comms_block(self, agent_idx: int) -> tuple[float, ...]:
        entries = self.config.comms.for_agent(agent_idx)
        if not entries:
            return ()
        out: list[float] = []
        for entry in entries:
            for offset in range(1, entry.buff_size + 1):
                rec = self.comm_buffer.lookup(self.step_count - offset, entry.source)
                for var in entry.vars:
                    if var == "peerActions":
                        width = self.config.action_width(entry.source)
                        vals = rec.action if rec and rec.action else ()
                        vals = tuple(vals) + (0.0,) * (width - len(vals))
                        out.extend(vals[:width])
                    else:
                        out.append(rec.values[var] if rec else 0.0)
        return tuple(out)

    def _build_frame(self, session: AgentSession) -> SensorFrame:
        car = self.cars[session.index]
        states = [c.state for c in self.cars]
        frame = build_sensor_frame(
            self.track, states, session.index,
            beam_angles=session.beam_angles,
            cur_lap_time=(self.step_count - car.lap_start_step) * STEP_PERIOD,
            race_pos=car.rank,
        )
        if session.kind == "learning":
            if self.config.server.noisy_observations:
                frame = apply_observation_noise(frame, True, self.rng)
            frame.comms = self._comms_block(session.agent_idx)
        return frame

    # -- lifecycle -------------------------------------------------------------

    def learning_all_done(self) -> bool:
        return all(not s.running for s in self.sessions if s.kind == "learning")

    def end_episode_and_reset(self) -> None:
        """Reset the world exactly once after all learning agents are done."""
        self.world_resets += 1
        for session in self.sessions:
            session.send(protocol.RESTART)
        self._begin_episode(first=False)
        self.dispatch_initial_frames()

    def run_episode(self, max_steps: int | None = None,
                    on_event: Callable[[StepEvent], None] | None = None) -> list[StepEvent]:
        """Step until every learning agent is done; returns all step events."""
        all_events: list[StepEvent] = []
        limit = max_steps or (self.config.server.max_steps + 1)
        while not self.learning_all_done() and self.step_count < limit:
            t0 = time.monotonic()
            for event in self.step_world():
                all_events.append(event)
                if on_event is not None:
                    on_event(event)
            if self.realtime:
                lag = STEP_PERIOD - (time.monotonic() - t0)
                if lag > 0:
                    time.sleep(lag)
        return all_events

    def shutdown(self) -> None:
        for session in self.sessions:
            session.send(protocol.SHUTDOWN)
            if session.transport is not None:
                session.transport.close()
                session.transport = None
