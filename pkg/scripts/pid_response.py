"""Record the closed-loop response of the track-position and speed PID
controllers to step targets; writes two CSVs for plotting.
Usage: python scripts/pid_response.py [out_dir]
"""

import sys
from pathlib import Path

from tracksim.constants import PHYSICS_DT, STEP_PERIOD, TICKS_PER_STEP
from tracksim.control import DesireAction, TSControllerState, ts_to_primitive
from tracksim.dynamics import VehicleState, builtin_car, physics_tick
from tracksim.sensors import build_sensor_frame
from tracksim.track import builtin_track


def simulate(desire_fn, steps=1200):
    track = builtin_track("narrow")
    model = builtin_car("sedan")
    x, y, h = track.frenet_to_world(0.0, 0.0)
    state = VehicleState(x=x, y=y, heading=h, rpm=model.idle_rpm)
    ctrl = TSControllerState()
    rows = []
    for step in range(steps):
        frame = build_sensor_frame(track, [state], 0)
        desire = desire_fn(step)
        action, ctrl = ts_to_primitive(desire, frame, ctrl, STEP_PERIOD)
        for _ in range(TICKS_PER_STEP):
            state = physics_tick(state, model, action, track, PHYSICS_DT)
        rows.append((step, desire.target_track_pos, state.track_pos,
                     desire.target_speed_ms * 3.6, state.v_long * 3.6))
    return rows


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("pid_response_out")
    out.mkdir(parents=True, exist_ok=True)

    # speed step: 0 then 50 km/h, lane held at center
    rows = simulate(lambda s: DesireAction.from_speed_kmh(0.0, 0.0 if s < 100 else 50.0))
    path = out / "speed_step.csv"
    path.write_text("step,target_kmh,speed_kmh\n" + "\n".join(
        f"{r[0]},{r[3]!r},{r[4]!r}" for r in rows) + "\n")
    print(f"wrote {path}")

    # lane step at cruise: center then +0.4 track_pos
    rows = simulate(lambda s: DesireAction.from_speed_kmh(
        0.0 if s < 600 else 0.4, 40.0))
    path = out / "trackpos_step.csv"
    path.write_text("step,target_track_pos,track_pos\n" + "\n".join(
        f"{r[0]},{r[1]!r},{r[2]!r}" for r in rows) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
