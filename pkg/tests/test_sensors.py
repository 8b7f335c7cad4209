import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracksim.constants import N_BEAMS, N_OPPONENT_SECTORS, RANGE_MAX
from tracksim.dynamics import VehicleState
from tracksim.sensors import (
    DEFAULT_BEAM_ANGLES,
    ObservationSpec,
    OUT_OF_TRACK_SENTINEL,
    SensorFrame,
    apply_observation_noise,
    build_sensor_frame,
    mode_width,
    normalize_observation,
    opponents_scan,
    rangefinder_scan,
)
from tracksim.track import Track, TrackSegment


def straight_track(length=400.0, width=10.0):
    return Track("strip", [TrackSegment(kind="straight", width=width,
                                        friction=1.0, length=length)], closed=False)


def car_at(track, s, track_pos=0.0, angle=0.0, v_long=0.0):
    lateral = track_pos * track.width_at(s) / 2.0
    x, y, tangent = track.frenet_to_world(s, lateral)
    st = VehicleState(x=x, y=y, heading=tangent + angle, v_long=v_long,
                      s=s, lateral=lateral, track_pos=track_pos, angle=angle)
    return st


class TestRangefinders:
    def test_side_beam_half_width(self):
        track = straight_track()
        state = car_at(track, 200.0)
        d = rangefinder_scan(track, state, [math.radians(90.0)])
        assert d[0] == pytest.approx(5.0, abs=1e-9)

    def test_forward_beam_clips_at_range_max(self):
        track = straight_track(length=500.0)
        state = car_at(track, 10.0)
        d = rangefinder_scan(track, state, [0.0])
        assert d[0] == RANGE_MAX

    def test_offset_asymmetry(self):
        track = straight_track()
        state = car_at(track, 200.0, track_pos=0.5)
        d = rangefinder_scan(track, state, [math.radians(90.0), math.radians(-90.0)])
        assert d[0] == pytest.approx(2.5, abs=1e-9)
        assert d[1] == pytest.approx(7.5, abs=1e-9)

    def test_symmetry_on_centerline(self):
        track = straight_track()
        state = car_at(track, 200.0)
        angles = [math.radians(a) for a in (-80, -45, -20, 20, 45, 80)]
        d = rangefinder_scan(track, state, angles)
        assert d[0] == pytest.approx(d[5], abs=1e-9)
        assert d[1] == pytest.approx(d[4], abs=1e-9)
        assert d[2] == pytest.approx(d[3], abs=1e-9)

    def test_out_of_track_sentinel(self):
        track = straight_track()
        state = car_at(track, 200.0)
        state.track_pos = 1.2
        d = rangefinder_scan(track, state)
        assert all(v == OUT_OF_TRACK_SENTINEL for v in d)
        assert len(d) == N_BEAMS


class TestOpponents:
    def test_empty_world(self):
        ego = VehicleState()
        assert all(v == RANGE_MAX for v in opponents_scan(ego, []))

    def test_dead_ahead_sector(self):
        ego = VehicleState()
        other = VehicleState(x=30.0, y=0.0)
        d = opponents_scan(ego, [other])
        assert d[18] == pytest.approx(30.0)
        assert sum(1 for v in d if v < RANGE_MAX) == 1

    def test_nearest_wins_in_shared_sector(self):
        ego = VehicleState()
        near = VehicleState(x=30.0, y=0.0)
        far = VehicleState(x=50.0, y=0.0)
        d = opponents_scan(ego, [near, far])
        assert d[18] == pytest.approx(30.0)

    def test_sector_rotates_with_heading(self):
        ego = VehicleState(heading=math.pi / 2.0)
        other = VehicleState(x=0.0, y=30.0)   # dead ahead given the heading
        d = opponents_scan(ego, [other])
        assert d[18] == pytest.approx(30.0)

    def test_beyond_range_invisible(self):
        ego = VehicleState()
        other = VehicleState(x=500.0, y=0.0)
        assert all(v == RANGE_MAX for v in opponents_scan(ego, [other]))

    def test_directly_behind_lands_in_first_sector(self):
        ego = VehicleState()
        other = VehicleState(x=-40.0, y=-0.001)
        d = opponents_scan(ego, [other])
        assert d[0] == pytest.approx(40.0, abs=1e-3)


class TestBuildFrame:
    def test_single_car_at_rest(self):
        track = straight_track()
        state = car_at(track, 10.0)
        frame = build_sensor_frame(track, [state], 0)
        assert frame.angle == 0.0
        assert frame.track_pos == 0.0
        assert frame.speed_x == 0.0 and frame.speed_y == 0.0 and frame.speed_z == 0.0
        assert frame.race_pos == 1

    def test_rank_from_distance_raced(self):
        track = straight_track()
        ahead = car_at(track, 50.0)
        ahead.distance_raced = 40.0
        behind = car_at(track, 10.0)
        behind.distance_raced = 0.0
        frame = build_sensor_frame(track, [behind, ahead], 0)
        assert frame.race_pos == 2
        frame = build_sensor_frame(track, [behind, ahead], 1)
        assert frame.race_pos == 1

    def test_speed_unit_conversion(self):
        track = straight_track()
        state = car_at(track, 10.0, v_long=13.89)
        frame = build_sensor_frame(track, [state], 0)
        assert frame.speed_x == pytest.approx(50.0, abs=5e-3)

    def test_default_beam_count(self):
        assert len(DEFAULT_BEAM_ANGLES) == N_BEAMS
        frame = build_sensor_frame(straight_track(), [car_at(straight_track(), 10.0)], 0)
        assert len(frame.track) == N_BEAMS
        assert len(frame.opponents) == N_OPPONENT_SECTORS


class TestObservationNoise:
    def test_disabled_is_identity(self):
        frame = SensorFrame(track=tuple([100.0] * N_BEAMS))
        rng = np.random.default_rng(0)
        assert apply_observation_noise(frame, False, rng) is frame

    def test_multiplicative_statistics(self):
        # oracle for the chosen model: d*(1+eps), eps ~ N(0, 0.1)
        rng = np.random.default_rng(123)
        frame = SensorFrame(track=tuple([100.0] * N_BEAMS))
        samples = []
        for _ in range(10_000 // N_BEAMS + 1):
            noisy = apply_observation_noise(frame, True, rng)
            samples.extend(noisy.track)
        samples = np.asarray(samples[:10_000])
        assert 98.0 <= samples.mean() <= 102.0
        assert 9.0 <= samples.std() <= 11.0

    def test_clipping_preserves_support(self):
        rng = np.random.default_rng(7)
        frame = SensorFrame(track=tuple([199.0] * N_BEAMS),
                            opponents=tuple([1.0] * N_OPPONENT_SECTORS))
        for _ in range(200):
            noisy = apply_observation_noise(frame, True, rng)
            assert all(0.0 <= v <= RANGE_MAX for v in noisy.track)
            assert all(0.0 <= v <= RANGE_MAX for v in noisy.opponents)

    def test_sentinel_frames_untouched(self):
        rng = np.random.default_rng(2)
        frame = SensorFrame(track=tuple([OUT_OF_TRACK_SENTINEL] * N_BEAMS))
        noisy = apply_observation_noise(frame, True, rng)
        assert noisy.track == frame.track


class TestNormalization:
    def test_endpoint_mapping(self):
        spec = ObservationSpec(mode="basic")
        lo = SensorFrame(angle=-math.pi, track=tuple([0.0] * N_BEAMS),
                         track_pos=-1.0, speed_x=-100.0, speed_y=-100.0,
                         speed_z=-100.0)
        hi = SensorFrame(angle=math.pi, track=tuple([200.0] * N_BEAMS),
                         track_pos=1.0, speed_x=300.0, speed_y=300.0, speed_z=300.0)
        assert np.allclose(normalize_observation(lo, spec), -1.0)
        assert np.allclose(normalize_observation(hi, spec), 1.0)

    def test_affine_interior_value(self):
        spec = ObservationSpec(mode="basic")
        frame = SensorFrame(speed_x=50.0)
        vec = normalize_observation(frame, spec)
        assert vec[21] == pytest.approx(-0.25)   # speed bounds [-100, 300]

    def test_basic_mode_width(self):
        assert mode_width("basic") == 24
        frame = SensorFrame()
        assert len(normalize_observation(frame, ObservationSpec(mode="basic"))) == 24

    def test_traffic_mode_width(self):
        assert mode_width("traffic") == 60

    def test_comms_block_appended(self):
        frame = SensorFrame(comms=(0.5, -0.5))
        vec = normalize_observation(frame, ObservationSpec(mode="comms"))
        assert len(vec) == 62
        assert vec[-2:] == pytest.approx([0.5, -0.5])

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown observation mode"):
            normalize_observation(SensorFrame(), ObservationSpec(mode="lidar"))

    def test_out_of_bounds_clip(self):
        spec = ObservationSpec(mode="basic")
        frame = SensorFrame(track_pos=3.0)
        vec = normalize_observation(frame, spec)
        assert vec[20] == 1.0

    def test_custom_bounds_override(self):
        spec = ObservationSpec(mode="basic", obs_min={"speed_x": 0.0},
                               obs_max={"speed_x": 100.0})
        vec = normalize_observation(SensorFrame(speed_x=50.0), spec)
        assert vec[21] == pytest.approx(0.0)

    def test_normalize_off_passes_raw(self):
        spec = ObservationSpec(mode="basic", normalize=False)
        vec = normalize_observation(SensorFrame(speed_x=50.0), spec)
        assert vec[21] == 50.0


@settings(max_examples=80, deadline=None)
@given(a=st.floats(-100, 300), b=st.floats(-100, 300))
def test_normalization_monotone(a, b):
    spec = ObservationSpec(mode="basic")
    va = normalize_observation(SensorFrame(speed_x=a), spec)[21]
    vb = normalize_observation(SensorFrame(speed_x=b), spec)[21]
    if a <= b:
        assert va <= vb
    else:
        assert va >= vb


def test_build_then_normalize_deterministic_without_noise():
    track = straight_track()
    state = car_at(track, 33.0, track_pos=0.25, v_long=8.0)
    spec = ObservationSpec(mode="traffic")
    frames = [build_sensor_frame(track, [state], 0) for _ in range(3)]
    vecs = [normalize_observation(f, spec) for f in frames]
    assert np.array_equal(vecs[0], vecs[1])
    assert np.array_equal(vecs[1], vecs[2])
