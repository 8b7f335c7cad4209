"""Parked-traffic overtaking scenario: four drive-and-park cars placed on
alternating road sides of the narrow track, passed by a weaving agent.
Prints the per-seed overtake counts.  Usage: python scripts/overtake_demo.py [runs]
"""

import sys

import numpy as np

from tracksim.config import parse_config
from tracksim.rewards import overtake_and_rank_rewards
from tracksim.scripted import WeaveAgent
from tracksim.server import SimServer
from tracksim.traffic import alternating_parking_slots


def build_config(slots):
    traffic = []
    for i, (dist, pos) in enumerate(slots):
        lo, hi = 30 + 15 * i, 38 + 15 * i
        traffic.append(f"""
- name: DriveAndParkAgent
  target_speed: 50.0
  initial_distance: [{lo}, {hi}]
  initial_trackpos: [0.0, 0.0]
  parking: {{distance: {dist}, track_pos: {pos}}}
""")
    return parse_config(f"""
server:
  max_cars: 5
  min_traffic_cars: 4
  track_names: [narrow]
  learning_car: [sedan]
  max_steps: 3000
agents:
- target_speed: 35.0
  rewards:
    progress: {{scale: 1.0}}
    overtake: {{scale: 5.0}}
    rank_1: {{scale: 100.0}}
    collision_penalty: {{scale: 10.0}}
  dones: [rank_1, timeout, collision, turn_backward, out_of_track]
traffic:{''.join(traffic)}
""")


def main():
    runs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    for seed in range(runs):
        rng = np.random.default_rng(seed)
        slots = alternating_parking_slots(4, 150.0, rng, spacing=35.0, side=0.5)
        server = SimServer(build_config(slots), seed=seed)
        server.attach_policy(0, WeaveAgent(target_speed_kmh=35.0, first_slot=150.0,
                                           spacing=35.0, slot_side=0.5, n_slots=4))
        server.start()
        server.dispatch_initial_frames()
        ego = server.sessions[-1].index
        overtakes = 0
        rank_prev = server.cars[ego].rank
        while not server.learning_all_done() and server.step_count < 3000:
            server.step_world()
            rank_now = server.cars[ego].rank
            overtakes += overtake_and_rank_rewards(rank_prev, rank_now, False, 5)[0]
            rank_prev = rank_now
        car = server.cars[ego]
        print(f"seed {seed}: {overtakes} overtakes, finished rank {car.rank} "
              f"({server.sessions[-1].done_reason}), damage {car.state.damage:.0f}, "
              f"slots {[(round(d, 1), round(p, 2)) for d, p in slots]}")


if __name__ == "__main__":
    main()
