import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import hilbert

from fusiontrack.acoustic_sim import (AcousticConfig, ChirpConfig, Waveform, attenuation,
                                      confidence_score, extract_tdof, mix_and_estimate_delay,
                                      oracle_measurement, propagate, simulate_reception,
                                      synth_chirp, synthesize_acoustic, tdof_oracle,
                                      write_waveform)
from fusiontrack.geometry import SpeakerPair, path_difference

PAIR = SpeakerPair((2.0, 0.0), (3.0, 0.0))
CFG = AcousticConfig()


def _inst_freq(w: Waveform) -> np.ndarray:
    phase = np.unwrap(np.angle(hilbert(w.samples)))
    return np.diff(phase) * w.sample_rate / (2 * np.pi)


def test_chirp_config_validation():
    with pytest.raises(ValueError):
        ChirpConfig(sample_rate=30_000.0)
    with pytest.raises(ValueError):
        ChirpConfig(sweep_time=0.10001)
    with pytest.raises(ValueError):
        ChirpConfig(direction="sideways")


def test_up_chirp_starts_at_one_and_sweeps_up():
    cfg = ChirpConfig()
    w = synth_chirp(cfg)
    assert w.samples[0] == 1.0
    f = _inst_freq(w)
    mid = cfg.n_samples // 2
    assert f[mid - 50:mid + 50].mean() == pytest.approx(cfg.f_min + cfg.bandwidth / 2, abs=1.0)


def test_down_chirp_starts_high():
    cfg = ChirpConfig(direction="down")
    w = synth_chirp(cfg)
    f0 = (cfg.phase(1e-6) - cfg.phase(0.0)) / (2 * np.pi * 1e-6)
    assert f0 == pytest.approx(cfg.f_min + cfg.bandwidth, abs=1.0)
    f = _inst_freq(w)
    mid = cfg.n_samples // 2
    assert f[mid - 50:mid + 50].mean() == pytest.approx(cfg.f_min + cfg.bandwidth / 2, abs=1.0)


def test_propagate_integer_delay_is_shift():
    w = synth_chirp(ChirpConfig())
    k = 37
    d = CFG.speed_of_sound * k / w.sample_rate
    out = propagate(w, d, CFG)
    scale = attenuation(d, CFG)
    assert np.allclose(out.samples[k:k + len(w.samples)] / scale, w.samples, atol=1e-9)
    assert np.allclose(out.samples[:k], 0.0, atol=1e-9)


def test_attenuation_law():
    assert attenuation(1.0, CFG) == CFG.ref_amplitude_at_1m
    assert attenuation(2.0, CFG) == pytest.approx(0.5 * attenuation(1.0, CFG))
    assert attenuation(0.01, CFG) == attenuation(0.1, CFG)
    with pytest.raises(ValueError):
        propagate(synth_chirp(ChirpConfig()), 0.0, CFG)


def _delayed_pair(delay_s: float, cfg: ChirpConfig):
    ref = synth_chirp(cfg)
    rec = propagate(ref, delay_s * CFG.speed_of_sound, CFG)
    return ref, rec


def test_mix_zero_delay():
    cfg = ChirpConfig()
    ref = synth_chirp(cfg)
    assert abs(mix_and_estimate_delay(ref, ref, cfg)) <= CFG.delay_bin(cfg)


@pytest.mark.parametrize("direction", ["up", "down"])
def test_mix_two_ms(direction):
    cfg = ChirpConfig(direction=direction)
    # beat frequency B t_d / T for the default 4 kHz / 0.1 s chirp
    assert cfg.slope * 2e-3 == pytest.approx(80.0)
    ref, rec = _delayed_pair(2e-3, cfg)
    assert mix_and_estimate_delay(ref, rec, cfg) == pytest.approx(2e-3, abs=CFG.delay_bin(cfg))


def test_mix_delay_beyond_sweep_not_detected():
    cfg = ChirpConfig()
    ref, rec = _delayed_pair(0.12, cfg)
    assert mix_and_estimate_delay(ref, rec, cfg) is None


def test_mix_rejects_mismatched_rates():
    cfg = ChirpConfig()
    ref = synth_chirp(cfg)
    with pytest.raises(ValueError):
        mix_and_estimate_delay(ref, Waveform(ref.samples, 44_100.0), cfg)


def test_confidence_score_examples():
    assert confidence_score(2000.0) == 1.0
    assert confidence_score(0.0) == 0.0
    assert confidence_score(1000.0) == 0.5
    assert confidence_score(1e6) == 1.0
    with pytest.raises(ValueError):
        confidence_score(-1.0)


@given(st.floats(0, 1e5), st.floats(0, 1e5))
def test_confidence_monotone(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= confidence_score(lo) <= confidence_score(hi) <= 1.0


def test_tdof_oracle_examples():
    assert tdof_oracle((2.5, 3.0), PAIR, CFG) == 0.0
    assert tdof_oracle((4.0, 0.0), PAIR, CFG) == pytest.approx(PAIR.baseline / CFG.speed_of_sound)


def test_tdof_oracle_noise_is_seeded():
    cfg = AcousticConfig(noise_sigma_d=1e-4)
    a = [tdof_oracle((1, 1), PAIR, cfg, np.random.default_rng(5)) for _ in range(2)]
    assert a[0] == a[1] != tdof_oracle((1, 1), PAIR, cfg)


@pytest.mark.parametrize("offset", [0.0, 0.137, 0.999])
def test_extract_on_bisector(offset):
    rec = simulate_reception((2.5, 1.5), PAIR, CFG, offset)
    m = extract_tdof(rec, CFG, offset)
    assert abs(m.tdof) <= CFG.delay_bin()
    assert m.confidence > 0


def test_extract_matches_oracle_and_is_offset_invariant():
    rng = np.random.default_rng(21)
    for _ in range(12):
        p = rng.uniform(0, 5, 2)
        if min(math.dist(p, PAIR.s1), math.dist(p, PAIR.s2)) > 3:
            continue
        base = extract_tdof(simulate_reception(p, PAIR, CFG, 0.0), CFG, 0.0)
        o = float(rng.uniform(0, 1))
        shifted = extract_tdof(simulate_reception(p, PAIR, CFG, o), CFG, o)
        truth = path_difference(p, PAIR) / CFG.speed_of_sound
        assert abs(base.tdof - truth) <= CFG.delay_bin()
        assert abs(shifted.tdof - base.tdof) <= CFG.delay_bin()


def test_noise_only_not_detected():
    noise = np.random.default_rng(1).normal(0, 1, CFG.up.n_samples * 2)
    m = extract_tdof(Waveform(noise, CFG.up.sample_rate), CFG)
    assert m.confidence == 0.0 and math.isnan(m.tdof)


def test_amplitude_decreases_with_distance():
    amps = [oracle_measurement((2.0, y), PAIR, CFG).amplitude for y in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(amps, amps[1:]))
    assert oracle_measurement((2.0, 1.0), PAIR, CFG).confidence == 1.0


def test_detection_floor_limits_coverage():
    cfg = AcousticConfig().with_coverage(1.5)
    assert cfg.detection_range == pytest.approx(1.5)
    assert oracle_measurement((2.0, 1.0), PAIR, cfg).detected
    assert not oracle_measurement((2.0, 3.0), PAIR, cfg).detected


def test_synthesize_acoustic_frame_layout(square_one_lap):
    traj = square_one_lap.slice(0, 95)
    tdof, amp, conf = synthesize_acoustic(traj.positions, traj.timestamps, PAIR,
                                          AcousticConfig(noise_sigma_d=0.0))
    frames = np.arange(0, 95, 10)
    assert np.all(np.isfinite(tdof[frames]))
    others = np.setdiff1d(np.arange(95), frames)
    assert np.all(np.isnan(tdof[others])) and np.all(conf[others] == 0)
    assert np.allclose(tdof[frames], path_difference(traj.positions[frames], PAIR) / 343.0)
    with pytest.raises(ValueError):
        synthesize_acoustic(traj.positions, traj.timestamps, PAIR, CFG, generator="sonar")


def test_waveform_generator_agrees_with_oracle(square_one_lap):
    traj = square_one_lap.slice(0, 200)
    rng = np.random.default_rng(8)
    tdof, _, conf = synthesize_acoustic(traj.positions, traj.timestamps, PAIR,
                                        CFG, 10, "waveform", rng)
    ok = conf > 0
    truth = path_difference(traj.positions[ok], PAIR) / CFG.speed_of_sound
    assert ok.sum() == 20
    assert np.abs(tdof[ok] - truth).max() <= CFG.delay_bin()


def test_write_waveform(tmp_path):
    w = synth_chirp(ChirpConfig())
    path = tmp_path / "chirp.f32"
    write_waveform(w, path)
    back = np.fromfile(path, dtype="<f4")
    assert np.allclose(back, w.samples, atol=1e-7)
    assert "sample_rate=48000.0" in (tmp_path / "chirp.f32.txt").read_text()
