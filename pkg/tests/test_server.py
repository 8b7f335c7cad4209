import math
import socket
import threading

import numpy as np
import pytest

from tracksim import protocol
from tracksim.config import parse_config
from tracksim.constants import TICKS_PER_STEP
from tracksim.control import DesireAction, PrimitiveAction
from tracksim.errors import StartupError
from tracksim.scripted import CenterFollowAgent, OffTrackAgent
from tracksim.server import AgentSession, SimServer, UdpTransport, assign_ports

SINGLE = """
server:
  max_cars: 1
  track_names: [oval]
  learning_car: [sedan]
  max_steps: {max_steps}
  base_port: {base_port}
agents:
- target_speed: 50.0
  rewards:
    progress: {{scale: 1.0}}
    collision_penalty: {{scale: 10.0}}
  dones: [{dones}]
traffic: []
"""


def single_config(max_steps=100, dones="timeout", base_port=3001):
    return parse_config(SINGLE.format(max_steps=max_steps, dones=dones,
                                      base_port=base_port))


def in_process_server(cfg, seed=0, policies=None):
    server = SimServer(cfg, seed=seed)
    for idx, policy in (policies or {0: CenterFollowAgent()}).items():
        server.attach_policy(idx, policy)
    server.start()
    server.dispatch_initial_frames()
    return server


class TestAssignPorts:
    def test_reference_layout(self):
        ports = assign_ports(2, 2, 3001)
        assert ports == [3001, 3002, 3003, 3004]

    def test_zero_traffic(self):
        assert assign_ports(0, 1, 3001) == [3001]

    def test_budget_exhaustion(self):
        with pytest.raises(StartupError, match="budget"):
            assign_ports(6, 5, 3001, port_budget=10)

    def test_port_space_bound(self):
        with pytest.raises(StartupError, match="port space"):
            assign_ports(10, 10, 65530)

    def test_grid_ordering_property(self):
        for n_traffic in range(9):
            for n_learning in range(1, 5):
                ports = assign_ports(n_traffic, n_learning, 3001)
                traffic, learning = ports[:n_traffic], ports[n_traffic:]
                assert ports == sorted(ports)
                assert ports == list(range(3001, 3001 + n_traffic + n_learning))
                if traffic and learning:
                    assert max(traffic) < min(learning)


class TestHandshake:
    def make_session(self):
        session = AgentSession(index=0, port=0, kind="learning", name="agent_0")

        class FakeTransport:
            def __init__(self):
                self.sent = []
                self.client_addr = None

            def send(self, text):
                self.sent.append(text)

        session.transport = FakeTransport()
        return session

    def test_valid_init_identifies(self):
        cfg = single_config()
        server = SimServer(cfg)
        session = self.make_session()
        msg = protocol.encode_init("SCR", list(range(-90, 91, 10)))
        server._handle_handshake(session, msg, ("127.0.0.1", 9999))
        assert session.identified
        assert session.client_id == "SCR"
        assert session.transport.sent[-1] == protocol.IDENTIFIED
        assert session.beam_angles[0] == pytest.approx(math.radians(-90))

    def test_wrong_arity_gets_error_reply(self):
        server = SimServer(single_config())
        session = self.make_session()
        msg = "SCR(init " + " ".join("0" for _ in range(18)) + ")"
        server._handle_handshake(session, msg, ("127.0.0.1", 9999))
        assert not session.identified
        assert session.transport.sent[-1].startswith(protocol.ERROR_PREFIX)

    def test_duplicate_init_idempotent(self):
        server = SimServer(single_config())
        session = self.make_session()
        msg = protocol.encode_init("SCR", list(range(-90, 91, 10)))
        server._handle_handshake(session, msg, ("127.0.0.1", 9999))
        server._handle_handshake(session, msg, ("127.0.0.1", 9999))
        assert session.identified
        assert session.transport.sent.count(protocol.IDENTIFIED) == 2


class TestStepWorld:
    def test_tick_ratio_exact(self):
        server = in_process_server(single_config(max_steps=50))
        server.run_episode()
        assert server.step_count == 50
        assert server.physics_ticks == TICKS_PER_STEP * server.step_count

    def test_idle_agent_single_step_counts(self):
        server = in_process_server(single_config(),
                                   policies={0: lambda f, s: PrimitiveAction()})
        server.step_world()
        assert server.step_count == 1
        assert server.physics_ticks == 10

    def test_done_agent_stops_receiving_frames(self):
        cfg = parse_config("""
server:
  max_cars: 2
  track_names: [oval]
  learning_car: [sedan]
  max_steps: 300
agents:
- {target_speed: 50.0, dones: [out_of_track, timeout]}
- {target_speed: 50.0, dones: [timeout]}
traffic: []
""")
        server = SimServer(cfg, seed=0)
        server.attach_policy(0, OffTrackAgent(steer_at_step=60))
        server.attach_policy(1, CenterFollowAgent(target_speed_kmh=50.0))
        frames = {"agent_0": [], "agent_1": []}
        server._frame_log = lambda name, step: frames[name].append(step)
        server.start()
        server.dispatch_initial_frames()
        events = server.run_episode()
        a_done = next(e.step for e in events if e.agent == "agent_0" and e.done)
        assert not any(step > a_done for step in frames["agent_0"])
        assert max(frames["agent_1"]) == 300

    def test_collision_step_updates_both(self):
        cfg = parse_config("""
server:
  max_cars: 2
  min_traffic_cars: 1
  track_names: [oval]
  learning_car: [sedan]
  distance_to_start: 0.0
  max_steps: 600
agents:
- target_speed: 50.0
  rewards:
    progress: {scale: 1.0}
    collision_penalty: {scale: 10.0}
  dones: [timeout]
traffic:
- name: ParkedAgent
  target_speed: 0.0
  initial_distance: [40.0, 40.0]
  initial_trackpos: [0.0, 0.0]
  parking: {distance: 40.0, track_pos: 0.0}
""")
        server = SimServer(cfg, seed=0)
        # no avoidance on the learning side: drives straight into the obstacle
        server.attach_policy(0, CenterFollowAgent(target_speed_kmh=50.0))
        server.start()
        server.dispatch_initial_frames()
        hit_events = []
        while server.step_count < 600 and not hit_events:
            for event in server.step_world():
                if event.reward < -5.0:
                    hit_events.append(event)
        assert hit_events, "expected a collision"
        assert server.cars[0].state.damage > 0
        assert server.cars[1].state.damage > 0
        learning_frame = server.sessions[1].last_frame
        assert learning_frame.damage > 0


class TestLifecycle:
    def lifecycle_run(self):
        cfg = parse_config("""
server:
  max_cars: 2
  track_names: [oval]
  learning_car: [sedan]
  max_steps: 300
agents:
- {target_speed: 60.0, dones: [out_of_track, timeout]}
- {target_speed: 50.0, dones: [timeout]}
traffic: []
""")
        server = SimServer(cfg, seed=3)
        server.attach_policy(0, OffTrackAgent(steer_at_step=60))
        server.attach_policy(1, CenterFollowAgent(target_speed_kmh=50.0))
        frames = {"agent_0": [], "agent_1": []}
        server._frame_log = lambda name, step: frames[name].append(step)
        server.start()
        server.dispatch_initial_frames()
        events = server.run_episode()
        return server, events, frames

    def test_one_reset_when_last_agent_finishes(self):
        server, events, frames = self.lifecycle_run()
        a_done = next(e.step for e in events if e.agent == "agent_0" and e.done)
        b_done = next(e.step for e in events if e.agent == "agent_1" and e.done)
        assert 40 <= a_done <= 200
        assert b_done == 300
        assert server.world_resets == 0
        server.end_episode_and_reset()
        assert server.world_resets == 1
        assert server.step_count == 0
        # A saw nothing between its done step and the reset
        assert [s for s in frames["agent_0"] if s > a_done] == []

    def test_frames_resume_after_reset(self):
        server, events, frames = self.lifecycle_run()
        server.end_episode_and_reset()
        assert frames["agent_0"][-1] == 0
        assert frames["agent_1"][-1] == 0
        assert all(s.running for s in server.sessions)

    def test_simultaneous_timeout_single_reset(self):
        cfg = parse_config("""
server:
  max_cars: 2
  track_names: [oval]
  learning_car: [sedan]
  max_steps: 40
agents:
- {target_speed: 50.0, dones: [timeout]}
- {target_speed: 50.0, dones: [timeout]}
traffic: []
""")
        server = SimServer(cfg, seed=0)
        server.attach_policy(0, CenterFollowAgent())
        server.attach_policy(1, CenterFollowAgent())
        server.start()
        server.dispatch_initial_frames()
        events = server.run_episode()
        reasons = {e.agent: e.done_reason for e in events if e.done}
        assert reasons == {"agent_0": "timeout", "agent_1": "timeout"}
        server.end_episode_and_reset()
        assert server.world_resets == 1


class TestCommBuffer:
    def comms_config(self, buff_size=1):
        cfg = parse_config("""
server:
  max_cars: 2
  track_names: [oval]
  learning_car: [sedan]
  max_steps: 50
agents:
- {target_speed: 50.0, dones: [timeout], observations: {mode: comms}}
- {target_speed: 50.0, dones: [timeout], observations: {mode: comms}}
traffic: []
""", comm_source=f"""
agent_0:
  comms: [agent_1]
  vars: [peerActions]
  buff_size: {buff_size}
agent_1:
  comms: [agent_0]
  vars: [peerActions]
  buff_size: {buff_size}
""")
        return cfg

    def test_first_frame_zero_filled(self):
        server = in_process_server(self.comms_config(), policies={
            0: CenterFollowAgent(), 1: CenterFollowAgent()})
        frame = server.sessions[0].last_frame
        assert frame.comms == (0.0, 0.0)

    def test_peer_action_from_previous_step(self):
        sent = {}

        def probe(idx):
            def policy(frame, step):
                desire = DesireAction(target_track_pos=0.01 * idx + 0.001 * step,
                                      target_speed_norm=-0.5)
                sent.setdefault(idx, []).append(
                    (step, desire.target_track_pos, desire.target_speed_norm))
                return desire
            return policy

        server = in_process_server(self.comms_config(), policies={
            0: probe(0), 1: probe(1)})
        server.step_world()   # step 1
        server.step_world()   # step 2
        # agent 0's frame after step 2 carries agent 1's action from step 2?
        # no: the buffer serves step-(t-1) records, so it carries step 1's
        frame = server.sessions[0].last_frame
        step1_action = sent[1][0]
        assert frame.comms == pytest.approx((step1_action[1], step1_action[2]))

    def test_buffer_depth_three_width(self):
        server = in_process_server(self.comms_config(buff_size=3), policies={
            0: CenterFollowAgent(), 1: CenterFollowAgent()})
        frame = server.sessions[0].last_frame
        assert len(frame.comms) == 6   # 2-wide desire action x 3 steps

    def test_causality_never_same_step(self):
        actions = {}

        def probe(idx):
            def policy(frame, step):
                value = math.sin(idx + step * 0.7)
                actions[(idx, step)] = value
                return DesireAction(target_track_pos=value * 0.01,
                                    target_speed_norm=-0.9)
            return policy

        server = in_process_server(self.comms_config(), policies={
            0: probe(0), 1: probe(1)})
        for _ in range(10):
            server.step_world()
            t = server.step_count
            frame = server.sessions[0].last_frame
            peer_tp = frame.comms[0]
            # records[t-1] holds the action collected during step t-1, which
            # the policy computed while looking at the frame of step t-2
            if t < 2:
                assert peer_tp == 0.0
            else:
                assert peer_tp == pytest.approx(actions[(1, t - 2)] * 0.01)
                # never this step's (or even the last-collected) action
                assert peer_tp != pytest.approx(actions[(1, t - 1)] * 0.01)


class TestDeterminism:
    def run_once(self, seed):
        cfg = parse_config("""
server:
  max_cars: 3
  min_traffic_cars: 2
  track_names: [oval]
  learning_car: [sedan]
  randomize_env: true
  add_noise_to_actions: true
  action_noise_std: 0.2
  noisy_observations: true
  max_steps: 60
agents:
- {target_speed: 50.0, dones: [timeout]}
traffic:
- name: ConstVelTrafficAgent
  initial_distance: [20.0, 40.0]
  initial_trackpos: [-0.3, 0.3]
- name: RandomLaneSwitchAgent
  initial_distance: [60.0, 80.0]
  p_switch: 0.1
""")
        server = SimServer(cfg, seed=seed)
        server.attach_policy(0, CenterFollowAgent())
        server.start()
        server.dispatch_initial_frames()
        events = server.run_episode()
        log = [(e.step, e.agent, e.x, e.y, e.reward) for e in events]
        states = [(c.state.x, c.state.y, c.state.v_long, c.state.damage)
                  for c in server.cars]
        return log, states

    def test_same_seed_bit_identical(self):
        a = self.run_once(42)
        b = self.run_once(42)
        assert a == b

    def test_different_seed_differs(self):
        a = self.run_once(1)
        b = self.run_once(2)
        assert a != b


class TestUdpIntegration:
    BASE = 43100

    def test_udp_episode_matches_lockstep(self):
        cfg = single_config(max_steps=80, base_port=self.BASE)
        server = SimServer(cfg, seed=5)
        server.serve_udp()
        server.start()
        client_out = {}

        def client():
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.settimeout(5.0)
            addr = ("127.0.0.1", self.BASE)
            sock.sendto(protocol.encode_init("SCR", list(range(-90, 91, 10))).encode(),
                        addr)
            data, _ = sock.recvfrom(65536)
            assert data.decode() == protocol.IDENTIFIED
            data, _ = sock.recvfrom(65536)   # initial frame
            rewards = []
            steps = 0
            while True:
                sock.sendto(protocol.encode_action_ts(
                    DesireAction.from_speed_kmh(0.0, 50.0)).encode(), addr)
                data, _ = sock.recvfrom(65536)
                msg = data.decode()
                if protocol.is_control_message(msg):
                    client_out["control"] = msg
                    break
                frame = protocol.decode_sensor_frame(msg)
                rewards.append(frame.reward)
                steps += 1
                if frame.done:
                    client_out["done_reason"] = frame.done_reason
                    break
            client_out["steps"] = steps
            client_out["reward_sum"] = sum(rewards)
            sock.close()

        worker = threading.Thread(target=client)
        worker.start()
        try:
            server.await_clients(timeout=5.0)
            server.dispatch_initial_frames()
            events = server.run_episode()
        finally:
            worker.join(timeout=10.0)
            server.shutdown()
        assert client_out["steps"] == 80
        assert client_out["done_reason"] == "timeout"
        # the trace logs wire-precision values, so the sums agree exactly
        assert client_out["reward_sum"] == pytest.approx(
            sum(e.reward for e in events), abs=1e-9)

    def test_in_process_path_matches_networked_path(self):
        # the same desire stream must produce bit-identical trajectories
        # whether it arrives over UDP or from an in-process policy
        wire_speed = float("-0.666667")   # 50 km/h desire at wire precision

        def run_in_process():
            cfg = parse_config("""
server:
  max_cars: 2
  min_traffic_cars: 1
  track_names: [oval]
  learning_car: [sedan]
  max_steps: 120
agents:
- {target_speed: 50.0, dones: [timeout]}
traffic:
- name: ConstVelTrafficAgent
  initial_distance: [40.0, 40.0]
  initial_trackpos: [0.0, 0.0]
""")
            server = SimServer(cfg, seed=21)
            server.attach_policy(0, lambda f, s: DesireAction(0.0, wire_speed))
            server.start()
            server.dispatch_initial_frames()
            server.run_episode()
            return [(c.state.x, c.state.y, c.state.v_long, c.state.heading)
                    for c in server.cars]

        def run_networked():
            cfg = parse_config(f"""
server:
  max_cars: 2
  min_traffic_cars: 1
  track_names: [oval]
  learning_car: [sedan]
  max_steps: 120
  base_port: {self.BASE + 80}
agents:
- {{target_speed: 50.0, dones: [timeout]}}
traffic:
- name: ConstVelTrafficAgent
  initial_distance: [40.0, 40.0]
  initial_trackpos: [0.0, 0.0]
""")
            server = SimServer(cfg, seed=21)
            server.serve_udp()
            server.start()

            def client():
                sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                sock.settimeout(5.0)
                addr = ("127.0.0.1", server.sessions[-1].port)
                sock.sendto(protocol.encode_init(
                    "SCR", list(range(-90, 91, 10))).encode(), addr)
                sock.recvfrom(65536)
                sock.recvfrom(65536)
                while True:
                    sock.sendto(b"(trackpos 0.000000)(speed -0.666667)", addr)
                    data, _ = sock.recvfrom(65536)
                    msg = data.decode()
                    if protocol.is_control_message(msg):
                        break
                    if protocol.decode_sensor_frame(msg).done:
                        break
                sock.close()

            worker = threading.Thread(target=client)
            worker.start()
            try:
                server.await_clients(timeout=5.0)
                server.dispatch_initial_frames()
                server.run_episode()
            finally:
                worker.join(timeout=10.0)
                server.shutdown()
            return [(c.state.x, c.state.y, c.state.v_long, c.state.heading)
                    for c in server.cars]

        assert run_in_process() == run_networked()

    def test_unbindable_port_is_startup_error(self):
        blocker = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        blocker.bind(("127.0.0.1", self.BASE + 50))
        try:
            with pytest.raises(StartupError, match=str(self.BASE + 50)):
                UdpTransport(self.BASE + 50)
        finally:
            blocker.close()

    def test_meta_requests_restart_readiness(self):
        cfg = single_config(max_steps=50, base_port=self.BASE + 60)
        server = SimServer(cfg, seed=5)
        server.serve_udp()
        server.start()
        out = {}

        def client():
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.settimeout(5.0)
            addr = ("127.0.0.1", self.BASE + 60)
            sock.sendto(protocol.encode_init("SCR", list(range(-90, 91, 10))).encode(),
                        addr)
            sock.recvfrom(65536)
            sock.recvfrom(65536)
            sock.sendto(protocol.encode_meta_restart().encode(), addr)
            data, _ = sock.recvfrom(65536)
            out["reply"] = data.decode()
            sock.close()

        worker = threading.Thread(target=client)
        worker.start()
        try:
            server.await_clients(timeout=5.0)
            server.dispatch_initial_frames()
            server.step_world()
        finally:
            worker.join(timeout=10.0)
            server.shutdown()
        assert out["reply"].startswith(protocol.DONE_PREFIX)
        assert server.learning_all_done()
