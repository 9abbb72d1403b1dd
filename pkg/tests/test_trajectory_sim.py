import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusiontrack.features import FeatureStream
from fusiontrack.trajectory_sim import (SHAPES, TANGENTIAL_SHARE, MotionProfile, WaypointPath,
                                        export_training_set, generate_shape, read_training_set,
                                        read_trajectory, sample_trajectory, write_trajectory)


def test_square_corners():
    path = generate_shape("square", (0, 0), 2.0, 1)
    assert sorted(path.waypoints) == sorted([(-1, -1), (1, -1), (1, 1), (-1, 1)])
    assert path.closed


def test_line_endpoints_open():
    path = generate_shape("line", (0, 0), 2.0)
    assert set(path.waypoints) == {(-1.0, 0.0), (1.0, 0.0)}
    assert not path.closed


def test_circle_waypoints_on_radius():
    path = generate_shape("circle", (1.0, -2.0), 2.0)
    r = [math.dist(p, (1.0, -2.0)) for p in path.waypoints]
    assert np.allclose(r, 1.0, atol=1e-9)


def test_unknown_shape_and_bad_arguments():
    with pytest.raises(ValueError):
        generate_shape("hexagon")
    with pytest.raises(ValueError):
        generate_shape("square", size=0.0)
    with pytest.raises(ValueError):
        generate_shape("square", laps=0)


def test_degenerate_path_rejected():
    with pytest.raises(ValueError):
        WaypointPath(((0, 0), (0, 0)), closed=False)
    with pytest.raises(ValueError):
        WaypointPath(((0, 0),))


def test_profile_validation():
    with pytest.raises(ValueError):
        MotionProfile(cruise_speed=0.0)
    with pytest.raises(ValueError):
        MotionProfile(max_accel=-1.0)
    with pytest.raises(ValueError):
        MotionProfile(corner_slowdown=0.0)


def test_straight_segment_trapezoid():
    # out and back along 10 m; each leg is a trapezoid with ramps at the
    # tangential acceleration budget
    prof = MotionProfile(1.0, 1.5)
    traj = sample_trajectory(WaypointPath(((0, 0), (10, 0)), closed=False), prof, 100.0)
    a_t = TANGENTIAL_SHARE * prof.max_accel
    leg = 10.0 / prof.cruise_speed + prof.cruise_speed / a_t
    assert abs(len(traj) - (2 * leg * 100 + 1)) <= 2
    speed = np.hypot(*traj.velocities.T)
    cruising = speed > 1 - 1e-6
    assert cruising.sum() > 1500
    assert np.all(np.abs(speed[cruising] - 1.0) <= 1e-6)


def test_square_four_laps_boundaries(square_four_laps):
    b = square_four_laps.lap_boundaries
    assert len(b) == 4
    assert all(x < y for x, y in zip(b, b[1:]))
    assert b[-1] == len(square_four_laps) - 1


def test_circle_samples_on_radius():
    traj = sample_trajectory(generate_shape("circle", (2.5, 2.5), 3.0, 2))
    r = np.hypot(*(traj.positions - 2.5).T)
    assert np.max(np.abs(r - 1.5)) <= 1e-3 * 1.5
    assert len(traj.lap_boundaries) == 2


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(SHAPES), st.floats(0.5, 4.0), st.integers(1, 2),
       st.floats(0.3, 1.5), st.floats(0.5, 3.0))
def test_motion_invariants(shape, size, laps, cruise, accel):
    prof = MotionProfile(cruise, accel)
    traj = sample_trajectory(generate_shape(shape, (0, 0), size, laps), prof, 100.0)
    dt = traj.dt
    speed = np.hypot(*traj.velocities.T)
    assert speed.max() <= cruise + 1e-9
    acc = np.hypot(*np.diff(traj.velocities, axis=0).T) / dt
    assert acc.max() <= accel * (1 + 1e-6)
    step = traj.positions[1:] - traj.positions[:-1] - traj.velocities[:-1] * dt
    assert np.abs(step).max() <= accel * dt * dt
    rebuilt = traj.positions[0] + np.vstack([[0, 0], np.cumsum(traj.velocities[:-1] * dt, 0)])
    assert np.abs(rebuilt - traj.positions).max() <= accel * dt * dt * len(traj)
    if shape != "line":
        assert len(traj.lap_boundaries) == laps


def test_lap_index_and_slice(square_four_laps):
    idx = square_four_laps.lap_index()
    assert idx[0] == 0 and idx[-1] == 3
    assert np.all(np.diff(idx) >= 0)
    part = square_four_laps.slice(100, 2000)
    assert len(part) == 1900
    assert part.lap_boundaries == (square_four_laps.lap_boundaries[0] - 100,)


def _features(traj, n_links=2):
    n = len(traj)
    rng = np.random.default_rng(3)
    tdof = np.full(n, np.nan)
    tdof[::10] = rng.normal(0, 1e-3, len(tdof[::10]))
    conf = np.where(np.isnan(tdof), 0.0, 0.7)
    return FeatureStream(traj.timestamps, rng.normal(size=(n, n_links)), tdof,
                         conf * 2000, conf)


def test_training_set_round_trip(tmp_path):
    traj = sample_trajectory(generate_shape("triangle", (0, 0), 2.0)).slice(0, 100)
    feats = _features(traj)
    dest = tmp_path / "corpus.csv"
    assert export_training_set([traj], [feats], dest) == 100
    n_links, records = read_training_set(dest)
    assert n_links == 2 and len(records) == 100
    got = np.array([[r["x"], r["y"]] for r in records])
    assert np.abs(got - traj.positions).max() <= 1e-9
    plcr = np.array([r["plcr"] for r in records])
    assert np.abs(plcr - feats.plcr).max() <= 1e-9
    tdof = np.array([r["tdof"] for r in records])
    assert np.array_equal(np.isnan(tdof), np.isnan(feats.tdof))


def test_training_set_empty(tmp_path):
    dest = tmp_path / "empty.csv"
    assert export_training_set([], [], dest) == 0
    lines = dest.read_text().splitlines()
    assert lines[0] == "#links=0" and len(lines) == 2


def test_training_set_io_error_names_destination(tmp_path):
    traj = sample_trajectory(generate_shape("square", (0, 0), 2.0)).slice(0, 5)
    bad = tmp_path / "missing_dir" / "x.csv"
    with pytest.raises(OSError, match="missing_dir"):
        export_training_set([traj], [_features(traj)], bad)


def test_trajectory_csv_round_trip(tmp_path, square_one_lap):
    path = tmp_path / "truth.csv"
    with path.open("w", newline="") as fh:
        write_trajectory(square_one_lap, fh)
    back = read_trajectory(path)
    assert np.array_equal(back.positions, square_one_lap.positions)
    assert np.array_equal(back.timestamps, square_one_lap.timestamps)
    assert back.lap_boundaries == square_one_lap.lap_boundaries
