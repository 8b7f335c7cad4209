"""Simulation-wide constants shared across modules."""

PHYSICS_DT = 0.002    # physics integration step, seconds
STEP_PERIOD = 0.02    # control/polling period, seconds
TICKS_PER_STEP = 10   # STEP_PERIOD / PHYSICS_DT, must stay exact

GRAVITY = 9.81        # m/s^2

RANGE_MAX = 200.0     # rangefinder and opponent sensor ceiling, meters
N_BEAMS = 19
N_OPPONENT_SECTORS = 36
SECTOR_WIDTH_DEG = 10.0

SPEED_CAP_KMH = 300.0   # speed-desire ceiling; also the default speed obs bound
KMH_PER_MS = 3.6

OFF_TRACK_GRIP_FACTOR = 0.5

DEFAULT_BASE_PORT = 3001
BASE_PORT_ENV_VAR = "TRACKSIM_BASE_PORT"
