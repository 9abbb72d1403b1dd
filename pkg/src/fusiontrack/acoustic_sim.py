"""Waveform-level simulation of the two-speaker cross-chirp scheme.

Speaker ``s1`` emits an up chirp and ``s2`` a down chirp at the same
instant. The receiver does not know the emission time (its clock is
offset), so it estimates each chirp's arrival in its own time base and
reports the difference, in which the offset cancels.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft

from .geometry import Point2D, SpeakerPair, path_difference

CONFIDENCE_AMPLITUDE = 2000.0
MIN_DISTANCE = 0.1
# Peak-to-median ratios for a detection. The dechirp stage runs only after
# the matched filter has found the chirp, and the other speaker's
# cross-term raises its floor, so it gets the lower bar.
DETECTION_RATIO = 8.0
FINE_DETECTION_RATIO = 2.0
FFT_SIZE = 32768
_GUARD = 0.005


@dataclass(frozen=True)
class ChirpConfig:
    f_min: float = 18_000.0
    bandwidth: float = 4_000.0
    sweep_time: float = 0.1
    sample_rate: float = 48_000.0
    direction: str = "up"

    def __post_init__(self):
        if not (self.f_min > 0 and self.bandwidth > 0 and self.sweep_time > 0):
            raise ValueError("f_min, bandwidth and sweep_time must be positive")
        if self.sample_rate < 2 * (self.f_min + self.bandwidth):
            raise ValueError("sample_rate violates the Nyquist bound")
        n = self.sweep_time * self.sample_rate
        if abs(n - round(n)) > 1e-9:
            raise ValueError("sweep_time * sample_rate must be an integer")
        if self.direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")

    @property
    def n_samples(self) -> int:
        return int(round(self.sweep_time * self.sample_rate))

    @property
    def slope(self) -> float:
        return self.bandwidth / self.sweep_time

    def phase(self, t):
        """Instantaneous phase (radians) at local time ``t`` from chirp start."""
        t = np.asarray(t, dtype=float)
        if self.direction == "up":
            return 2 * np.pi * self.f_min * t + np.pi * self.slope * t * t
        return 2 * np.pi * (self.f_min + self.bandwidth) * t - np.pi * self.slope * t * t


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: float
    start_offset: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ValueError("waveform samples must be finite and non-empty")
        object.__setattr__(self, "samples", arr)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def times(self) -> np.ndarray:
        return self.start_offset + np.arange(len(self.samples)) / self.sample_rate


@dataclass(frozen=True)
class AcousticMeasurement:
    tdof: float
    amplitude: float
    confidence: float
    timestamp: float = 0.0

    @property
    def detected(self) -> bool:
        return not math.isnan(self.tdof) and self.confidence > 0


@dataclass(frozen=True)
class AcousticConfig:
    speed_of_sound: float = 343.0
    ref_amplitude_at_1m: float = 2000.0
    up: ChirpConfig = field(default_factory=lambda: ChirpConfig(direction="up"))
    down: ChirpConfig = field(default_factory=lambda: ChirpConfig(direction="down"))
    noise_sigma_d: float = 1e-4
    # Amplitudes below this floor are not detected (limits acoustic coverage).
    detection_floor: float = 0.0
    receiver_noise: float = 0.0

    def __post_init__(self):
        if not self.speed_of_sound > 0:
            raise ValueError("speed_of_sound must be positive")
        if not self.ref_amplitude_at_1m > 0:
            raise ValueError("ref_amplitude_at_1m must be positive")
        if self.up.direction != "up" or self.down.direction != "down":
            raise ValueError("chirp pair must be one up and one down chirp")
        if self.up.sample_rate != self.down.sample_rate:
            raise ValueError("chirps must share a sample rate")
        if self.noise_sigma_d < 0 or self.receiver_noise < 0 or self.detection_floor < 0:
            raise ValueError("noise levels and detection floor must be >= 0")

    @property
    def effective_range(self) -> float:
        """Distance at which the received amplitude falls to the confidence threshold."""
        return self.ref_amplitude_at_1m / CONFIDENCE_AMPLITUDE

    @property
    def detection_range(self) -> float:
        if self.detection_floor <= 0:
            return math.inf
        return self.ref_amplitude_at_1m / self.detection_floor

    def delay_bin(self, chirp: ChirpConfig | None = None) -> float:
        """Delay spanned by one bin of the dechirp spectrum, in seconds."""
        chirp = chirp or self.up
        return chirp.sample_rate * chirp.sweep_time / (chirp.bandwidth * FFT_SIZE)

    def with_coverage(self, detection_range: float) -> "AcousticConfig":
        return replace(self, detection_floor=self.ref_amplitude_at_1m / detection_range)


def synth_chirp(cfg: ChirpConfig) -> Waveform:
    t = np.arange(cfg.n_samples) / cfg.sample_rate
    return Waveform(np.cos(cfg.phase(t)), cfg.sample_rate, 0.0)


def attenuation(distance: float, cfg: AcousticConfig) -> float:
    return cfg.ref_amplitude_at_1m / max(distance, MIN_DISTANCE)


def _delayed(samples: np.ndarray, delay_samples: float, length: int) -> np.ndarray:
    """Band-limited fractional delay by a frequency-domain phase ramp."""
    nfft = sfft.next_fast_len(2 * max(length, len(samples) + int(math.ceil(delay_samples)) + 1))
    spec = sfft.rfft(samples, nfft)
    freqs = np.arange(spec.size) / nfft
    shifted = sfft.irfft(spec * np.exp(-2j * np.pi * freqs * delay_samples), nfft)
    return shifted[:length]


def propagate(w: Waveform, distance: float, cfg: AcousticConfig) -> Waveform:
    """Delay ``w`` by ``distance / c_s`` and apply 1/d attenuation."""
    if not distance > 0:
        raise ValueError("distance must be positive")
    delay = distance / cfg.speed_of_sound * w.sample_rate
    length = len(w.samples) + int(math.ceil(delay)) + 1
    out = attenuation(distance, cfg) * _delayed(w.samples, delay, length)
    return Waveform(out, w.sample_rate, w.start_offset)


@lru_cache(maxsize=16)
def _analytic_template(cfg: ChirpConfig, n: int) -> np.ndarray:
    t = np.arange(n) / cfg.sample_rate
    tmpl = np.exp(1j * cfg.phase(t))
    tmpl[t >= cfg.sweep_time] = 0.0
    tmpl.flags.writeable = False
    return tmpl


@lru_cache(maxsize=16)
def _dechirp_kernel(cfg: ChirpConfig) -> np.ndarray:
    kernel = np.conj(_analytic_template(cfg, cfg.n_samples)) * np.hanning(cfg.n_samples)
    kernel.flags.writeable = False
    return kernel


@lru_cache(maxsize=64)
def _template_spectrum(cfg: ChirpConfig, nfft: int) -> np.ndarray:
    spec = np.conj(sfft.fft(_analytic_template(cfg, cfg.n_samples), nfft))
    spec.flags.writeable = False
    return spec


def mix_and_estimate_delay(reference: Waveform, received: Waveform,
                           cfg: ChirpConfig) -> float | None:
    """Delay of the chirp in ``received`` relative to ``reference``.

    The received samples covering the reference span are multiplied by the
    conjugate analytic chirp (rebuilt from ``cfg``), and the beat
    frequency is read off a zero-padded spectrum with log-parabolic peak
    interpolation. Returns None when no beat tone stands above the floor.
    """
    if reference.sample_rate != received.sample_rate:
        raise ValueError("waveforms must share a sample rate")
    fs = reference.sample_rate
    n = cfg.n_samples
    offset = (reference.start_offset - received.start_offset) * fs
    start = int(round(offset))
    if abs(offset - start) > 1e-6:
        raise ValueError("reference and received sample grids are not aligned")
    seg = np.zeros(n)
    lo, hi = max(start, 0), min(start + n, len(received.samples))
    if hi - lo < n // 2:
        return None
    seg[lo - start:hi - start] = received.samples[lo:hi]
    # interpolation residue only: the chirp has not arrived within the span
    if not np.max(np.abs(seg)) > 1e-6 * np.max(np.abs(received.samples)):
        return None
    beat = seg * _dechirp_kernel(cfg)
    spec = np.abs(sfft.fft(beat, FFT_SIZE))
    freqs = sfft.fftfreq(FFT_SIZE, 1.0 / fs)
    band = np.abs(freqs) <= cfg.bandwidth / 2
    idx = np.flatnonzero(band)
    k = idx[np.argmax(spec[idx])]
    floor = np.median(spec[idx])
    if not spec[k] > FINE_DETECTION_RATIO * floor:
        return None
    a, b, c = (np.log(max(spec[(k + j) % FFT_SIZE], 1e-300)) for j in (-1, 0, 1))
    denom = a - 2 * b + c
    frac = 0.5 * (a - c) / denom if denom < 0 else 0.0
    f_beat = (freqs[k] + frac * fs / FFT_SIZE)
    sign = -1.0 if cfg.direction == "up" else 1.0
    return sign * f_beat / cfg.slope


def _matched_filter(x: np.ndarray, cfg: ChirpConfig):
    """Coarse arrival index and amplitude of ``cfg``'s chirp in ``x``."""
    n = cfg.n_samples
    nfft = sfft.next_fast_len(len(x) + n)
    corr = sfft.ifft(sfft.fft(x, nfft) * _template_spectrum(cfg, nfft))
    valid = np.abs(corr[:max(len(x) - n // 2, 1)])
    k = int(np.argmax(valid))
    detected = valid[k] > DETECTION_RATIO * np.median(valid)
    return k, 2.0 * valid[k] / n, detected


def confidence_score(amplitude: float, cfg: AcousticConfig | None = None) -> float:
    """Linear confidence ramp ``amplitude / 2000`` clipped to [0, 1]."""
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    return float(min(1.0, amplitude / CONFIDENCE_AMPLITUDE))


def extract_tdof(received: Waveform, cfg: AcousticConfig,
                 rx_clock_offset: float = 0.0) -> AcousticMeasurement:
    """TDoF (up-chirp arrival minus down-chirp arrival) from one recording.

    ``rx_clock_offset`` moves the receiver's time base; both arrivals shift
    with it, so only the measurement timestamp changes.
    """
    x = received.samples
    fs = received.sample_rate
    base = received.start_offset + rx_clock_offset
    arrivals, amps = [], []
    for chirp in (cfg.up, cfg.down):
        k, amp, ok = _matched_filter(x, chirp)
        if not ok:
            return AcousticMeasurement(math.nan, 0.0, 0.0, base)
        ref = Waveform(synth_chirp(chirp).samples, fs, received.start_offset + k / fs)
        delay = mix_and_estimate_delay(ref, received, chirp)
        if delay is None:
            return AcousticMeasurement(math.nan, 0.0, 0.0, base)
        arrivals.append(k / fs + delay)
        amps.append(amp)
    amplitude = max(amps)
    if amplitude < cfg.detection_floor:
        return AcousticMeasurement(math.nan, amplitude, 0.0, base)
    tdof = arrivals[0] - arrivals[1]
    return AcousticMeasurement(tdof, amplitude, confidence_score(amplitude, cfg), base)


def simulate_reception(p, pair: SpeakerPair, cfg: AcousticConfig,
                       clock_offset: float = 0.0,
                       rng: np.random.Generator | None = None) -> Waveform:
    """Recording of one cross-chirp frame at receiver position ``p``.

    Both chirps leave their speakers at global time 0; the receiver clock
    reads ``global + clock_offset``. The excerpt starts a short guard
    before the first arrival, on the receiver's integer sample grid.
    """
    fs = cfg.up.sample_rate
    dists = [max(math.dist(p, s), 0.0) for s in (pair.s1, pair.s2)]
    arrivals = [clock_offset + d / cfg.speed_of_sound for d in dists]
    start = (math.floor(min(arrivals) * fs) - int(_GUARD * fs)) / fs
    n = cfg.up.n_samples
    spread = abs(arrivals[0] - arrivals[1]) * fs
    length = n + int(math.ceil(spread)) + 2 * int(_GUARD * fs)
    out = np.zeros(length)
    for chirp, arrival, d in zip((cfg.up, cfg.down), arrivals, dists):
        delay = (arrival - start) * fs
        out += attenuation(d, cfg) * _delayed(synth_chirp(chirp).samples, delay, length)
    if cfg.receiver_noise > 0:
        if rng is None:
            raise ValueError("a random generator is required for receiver noise")
        out += rng.normal(0.0, cfg.receiver_noise, size=length)
    return Waveform(out, fs, start)


def tdof_oracle(p, pair: SpeakerPair, cfg: AcousticConfig,
                rng: np.random.Generator | None = None) -> float:
    """Geometric TDoF, plus Gaussian noise of ``noise_sigma_d`` when ``rng`` is given."""
    tdof = path_difference(p, pair) / cfg.speed_of_sound
    if rng is not None and cfg.noise_sigma_d > 0:
        tdof += rng.normal(0.0, cfg.noise_sigma_d)
    return tdof


def oracle_measurement(p, pair: SpeakerPair, cfg: AcousticConfig, timestamp: float = 0.0,
                       rng: np.random.Generator | None = None) -> AcousticMeasurement:
    d_near = min(math.dist(p, pair.s1), math.dist(p, pair.s2))
    amp = attenuation(d_near, cfg)
    if amp < cfg.detection_floor:
        return AcousticMeasurement(math.nan, amp, 0.0, timestamp)
    return AcousticMeasurement(tdof_oracle(p, pair, cfg, rng), amp,
                               confidence_score(amp, cfg), timestamp)


def synthesize_acoustic(positions: np.ndarray, timestamps: np.ndarray, pair: SpeakerPair,
                        cfg: AcousticConfig, frame_stride: int = 10,
                        generator: str = "oracle",
                        rng: np.random.Generator | None = None):
    """TDoF, amplitude and confidence columns aligned with ``timestamps``.

    One acoustic frame every ``frame_stride`` samples starting at index 0;
    other rows are NaN / 0 / 0. The waveform generator draws a fresh
    receiver clock offset in [0, 1) s per frame.
    """
    if generator not in ("oracle", "waveform"):
        raise ValueError(f"unknown acoustic generator {generator!r}")
    n = len(timestamps)
    tdof = np.full(n, np.nan)
    amp = np.zeros(n)
    conf = np.zeros(n)
    for k in range(0, n, frame_stride):
        p = Point2D(*positions[k])
        if generator == "oracle":
            m = oracle_measurement(p, pair, cfg, timestamps[k], rng)
        else:
            offset = float(rng.uniform(0.0, 1.0)) if rng is not None else 0.0
            m = extract_tdof(simulate_reception(p, pair, cfg, offset, rng), cfg, offset)
        if m.detected:
            tdof[k], amp[k], conf[k] = m.tdof, m.amplitude, m.confidence
    return tdof, amp, conf


def write_waveform(w: Waveform, path) -> None:
    """Dump samples as little-endian float32 with a ``.txt`` sidecar header."""
    from pathlib import Path

    path = Path(path)
    w.samples.astype("<f4").tofile(path)
    path.with_suffix(path.suffix + ".txt").write_text(
        f"sample_rate={w.sample_rate!r}\nstart_offset={w.start_offset!r}\n", encoding="utf-8")
