"""Drive a centerline-following agent around each built-in track and print
the lap metrics.  Usage: python scripts/lap_demo.py [seed]
"""

import sys

from tracksim.config import parse_config
from tracksim.harness import run_batch

SPEEDS = {"oval": 50.0, "serpent": 50.0, "hairpin": 25.0, "narrow": 50.0}


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    for track, speed in SPEEDS.items():
        cfg = parse_config(f"""
server:
  max_cars: 1
  track_names: [{track}]
  learning_car: [sedan]
  max_steps: 8000
agents:
- target_speed: {speed}
  rewards:
    progress: {{scale: 1.0}}
    average_speed: {{scale: 1.0}}
  dones: [one_lap, timeout, out_of_track, collision]
traffic: []
""")
        summary = run_batch(cfg, episodes=1, seed=seed)
        rec = summary["records"][0]
        print(f"{track:8s} @{speed:5.1f} km/h: lap {rec.lap_fraction:5.2f} "
              f"in {rec.steps:5d} steps, avg {rec.avg_speed_kmh:5.1f} km/h, "
              f"reward {rec.reward_total:8.1f} ({rec.done_reason})")


if __name__ == "__main__":
    main()
