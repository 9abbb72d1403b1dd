import io
import math

import numpy as np
import pytest

from fusiontrack.acoustic_sim import AcousticConfig
from fusiontrack.features import FeatureStream
from fusiontrack.fusion_solver import weights_from_noise
from fusiontrack.geometry import Arena
from fusiontrack.initial_search import (CandidateGrid, NoFeasibleStartError, _argmin_first,
                                        _margin, batch_losses, reconstruct_loss,
                                        search_initial, search_window,
                                        segment_by_confidence)
from fusiontrack.scenario import synthesize_features
from fusiontrack.wifi_features import WifiConfig

W = weights_from_noise(0.035, 1e-6)


@pytest.fixture(scope="module")
def noiseless(request):
    from fusiontrack.scenario import DeviceLayout, generate_shape, sample_trajectory
    lay = DeviceLayout()
    links = lay.links("los", 2)
    traj = sample_trajectory(generate_shape("square", (2.5, 2.5), 4.0, 1))
    feats = synthesize_features(traj, links, lay.pair, WifiConfig(),
                                AcousticConfig(noise_sigma_d=0.0))
    return lay, links, traj, feats


def _stream(conf, dt=0.1):
    n = len(conf)
    return FeatureStream(np.arange(n) * dt, np.zeros((n, 2)), np.zeros(n), np.zeros(n),
                         np.asarray(conf, dtype=float), "los")


def test_grid_covering_layout():
    g = CandidateGrid.covering(Arena(0, 1, 0, 0.5), 0.25)
    assert len(g) == 5 * 3
    assert g.candidates[0] == (0.0, 0.0) and g.candidates[1] == (0.25, 0.0)
    assert g.candidates[-1] == (1.0, 0.5)
    with pytest.raises(ValueError):
        CandidateGrid.covering(Arena(0, 1, 0, 1), 0.0)


def test_loss_at_truth_is_zero(noiseless):
    lay, links, traj, feats = noiseless
    win = search_window(feats, 10.0)
    assert reconstruct_loss(traj.positions[0], win, links, W, lay.arena, lay.pair) <= 1e-6


def test_loss_grows_away_from_truth(noiseless):
    lay, links, traj, feats = noiseless
    win = search_window(feats, 10.0)
    p0 = traj.positions[0]
    at = reconstruct_loss(p0, win, links, W, lay.arena, lay.pair)
    far = reconstruct_loss(p0 + [2.0, 0.0], win, links, W, lay.arena, lay.pair)
    assert far > at


def test_outside_candidate_is_infeasible(noiseless):
    lay, links, _, feats = noiseless
    assert batch_losses(np.array([[9.0, 9.0]]), feats.slice(0, 20), links, W, lay.arena,
                        lay.pair)[0] == math.inf


def test_search_finds_start(noiseless):
    lay, links, traj, feats = noiseless
    grid = CandidateGrid.covering(lay.arena, 0.25)
    res = search_initial(feats, links, grid, W, lay.arena, lay.pair)
    assert math.dist(res.best, traj.positions[0]) <= 0.25
    assert 0.0 < res.runner_up_margin <= 1.0
    assert res.loss_surface.shape == (len(grid),)
    buf = io.StringIO()
    res.write_surface(buf)
    rows = buf.getvalue().strip().splitlines()
    assert rows[0] == "cand_x,cand_y,loss" and len(rows) == len(grid) + 1


def test_single_candidate_margin_zero(noiseless):
    lay, links, traj, feats = noiseless
    grid = CandidateGrid(0.25, ((1.0, 1.0),))
    res = search_initial(feats, links, grid, W, lay.arena, lay.pair)
    assert res.best == (1.0, 1.0) and res.runner_up_margin == 0.0


def test_ties_go_to_first_candidate():
    assert _argmin_first(np.array([2.0, 1.0, 1.0, 3.0])) == 1
    assert _margin(np.array([1.0, 1.0]), 0) == 0.0
    assert _margin(np.array([1.0, 2.0]), 0) == pytest.approx(0.5)


def test_all_infeasible_raises(noiseless):
    lay, links, _, feats = noiseless
    small = Arena(0, 5, 0, 5)
    grid = CandidateGrid(1.0, ((7.0, 7.0), (8.0, 8.0)))
    with pytest.raises(NoFeasibleStartError):
        search_initial(feats, links, grid, W, small, lay.pair)


def test_search_window_extends_to_first_confident_period():
    conf = np.zeros(300)
    conf[200:230] = 1.0
    win = search_window(_stream(conf), 5.0)
    assert len(win) == 230
    assert len(search_window(_stream(np.ones(300)), 5.0)) == 51


def test_segmentation_examples():
    conf = np.zeros(1000)
    conf[100:150] = 1.0
    conf[600:650] = 1.0
    seg = segment_by_confidence(_stream(conf), min_high_conf=10)
    assert len(seg) == 2 and not seg.warning
    assert seg.starts == [0, (149 + 600 + 1) // 2]
    assert sum(len(c) for c in seg) == 1000

    whole = segment_by_confidence(_stream(np.zeros(100)))
    assert len(whole) == 1 and whole.warning

    merged = segment_by_confidence(_stream(conf), min_high_conf=80)
    assert len(merged) == 1 and not merged.warning


def test_segmentation_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        conf = (rng.random(800) < 0.05).astype(float)
        s = _stream(conf)
        seg = segment_by_confidence(s, int(rng.integers(1, 10)), max_gap=int(rng.integers(1, 60)))
        joined = np.concatenate([c.timestamps for c in seg])
        assert np.array_equal(joined, s.timestamps)
        assert np.array_equal(np.concatenate([c.confidence for c in seg]), s.confidence)


def test_segmentation_validation():
    with pytest.raises(ValueError):
        segment_by_confidence(_stream(np.ones(5)), 0)
    with pytest.raises(ValueError):
        segment_by_confidence(_stream(np.ones(5)), conf_threshold=0.0)
