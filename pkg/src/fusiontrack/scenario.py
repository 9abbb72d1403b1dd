"""Device layouts and end-to-end feature synthesis for a walk.

The default room is a 5 m x 5 m walkable arena. The Wi-Fi devices sit just
outside it so that no link's direct path runs along the walkable boundary
(on that segment a LoS link's coefficient vector vanishes). The speaker
pair sits on the bottom wall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .acoustic_sim import AcousticConfig, synthesize_acoustic
from .features import FeatureStream
from .geometry import LOS, NLOS, Arena, LinkGeometry, SpeakerPair
from .trajectory_sim import (SHAPES, MotionProfile, SampledTrajectory, generate_shape,
                             sample_trajectory)
from .wifi_features import WifiConfig, synthesize_plcr


def _links(pairs, mode: str) -> tuple[LinkGeometry, ...]:
    return tuple(LinkGeometry(a, b, mode) for a, b in pairs)


DEFAULT_ARENA = Arena(0.0, 5.0, 0.0, 5.0)
DEFAULT_DEVICE_PAIRS = (((-0.5, -0.5), (5.5, -0.5)),
                        ((-0.5, -0.5), (-0.5, 5.5)),
                        ((5.5, 5.5), (5.5, -0.5)))
DEFAULT_SPEAKERS = SpeakerPair((2.0, 0.0), (3.0, 0.0))


@dataclass(frozen=True)
class DeviceLayout:
    """Arena, Wi-Fi links for both sensing modes, and the speaker pair.

    ``los_links`` are transmitter/receiver pairs; ``nlos_links`` are the
    receiver pairs whose DPLCR cancels the shared transmitter path.
    """

    arena: Arena = DEFAULT_ARENA
    los_links: tuple[LinkGeometry, ...] = _links(DEFAULT_DEVICE_PAIRS, LOS)
    nlos_links: tuple[LinkGeometry, ...] = _links(DEFAULT_DEVICE_PAIRS, NLOS)
    pair: SpeakerPair = DEFAULT_SPEAKERS

    def __post_init__(self):
        if any(ln.mode != LOS for ln in self.los_links):
            raise ValueError("los_links must all be in los mode")
        if any(ln.mode != NLOS for ln in self.nlos_links):
            raise ValueError("nlos_links must all be in nlos mode")
        for name, s in (("s1", self.pair.s1), ("s2", self.pair.s2)):
            if not self.arena.contains(s):
                raise ValueError(f"speaker {name} {tuple(s)} lies outside the arena")

    def links(self, mode: str, count: int | None = None) -> list[LinkGeometry]:
        pool = self.los_links if mode == LOS else self.nlos_links
        if mode not in (LOS, NLOS):
            raise ValueError(f"unknown mode {mode!r}")
        count = len(pool) if count is None else count
        if not 1 <= count <= len(pool):
            raise ValueError(f"links must be between 1 and {len(pool)} for mode {mode}")
        return list(pool[:count])


def synthesize_features(traj: SampledTrajectory, links: Sequence[LinkGeometry],
                        pair: SpeakerPair, wifi: WifiConfig, acoustic: AcousticConfig,
                        generator: str = "oracle", frame_stride: int = 10,
                        rng_wifi: np.random.Generator | None = None,
                        rng_acoustic: np.random.Generator | None = None) -> FeatureStream:
    """PLCR (or DPLCR) plus acoustic columns for ``traj``."""
    plcr = synthesize_plcr(traj, links, wifi, rng_wifi)
    tdof, amp, conf = synthesize_acoustic(traj.positions, traj.timestamps, pair, acoustic,
                                          frame_stride, generator, rng_acoustic)
    return FeatureStream(traj.timestamps, plcr.values, tdof, amp, conf, plcr.mode)


def path_fits(waypoints, arena: Arena, margin: float) -> bool:
    pts = np.asarray(waypoints, dtype=float)
    return bool(pts[:, 0].min() >= arena.x_min + margin and pts[:, 0].max() <= arena.x_max - margin
                and pts[:, 1].min() >= arena.y_min + margin
                and pts[:, 1].max() <= arena.y_max - margin)


def random_trajectory(rng: np.random.Generator, arena: Arena = DEFAULT_ARENA,
                      laps: int = 1, size_range=(1.5, 4.0), margin: float = 0.2,
                      profile: MotionProfile | None = None, rate: float = 100.0,
                      shapes: Sequence[str] = SHAPES) -> tuple[str, SampledTrajectory]:
    """A random named shape of random size and placement inside ``arena``."""
    for _ in range(1000):
        shape = shapes[int(rng.integers(len(shapes)))]
        size = float(rng.uniform(*size_range))
        center = (float(rng.uniform(arena.x_min, arena.x_max)),
                  float(rng.uniform(arena.y_min, arena.y_max)))
        path = generate_shape(shape, center, size, laps)
        if path_fits(path.waypoints, arena, margin):
            return shape, sample_trajectory(path, profile, rate)
    raise RuntimeError("could not place a random shape inside the arena")


def coverage_fraction(pair: SpeakerPair, arena: Arena, detection_range: float,
                      resolution: int = 400) -> float:
    """Share of the arena within ``detection_range`` of the nearer speaker."""
    xs = arena.x_min + (np.arange(resolution) + 0.5) * arena.width / resolution
    ys = arena.y_min + (np.arange(resolution) + 0.5) * arena.height / resolution
    gx, gy = np.meshgrid(xs, ys)
    d = np.minimum(np.hypot(gx - pair.s1.x, gy - pair.s1.y), np.hypot(gx - pair.s2.x, gy - pair.s2.y))
    return float(np.mean(d <= detection_range))


def range_for_coverage(pair: SpeakerPair, arena: Arena, fraction: float) -> float:
    """Detection range whose acoustic coverage is ``fraction`` of the arena (bisection)."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    lo, hi = 0.0, math.hypot(arena.width, arena.height)
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if coverage_fraction(pair, arena, mid) < fraction:
            lo = mid
        else:
            hi = mid
    return hi
