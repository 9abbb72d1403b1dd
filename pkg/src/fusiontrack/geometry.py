"""Planar geometry shared by the simulators and the tracker.

Everything here is 2-D and in meters. Functions accept either the small
named-tuple types or plain ``(..., 2)`` numpy arrays so that the batched
solver can call them on many points at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

LOS = "los"
NLOS = "nlos"


class Point2D(NamedTuple):
    x: float
    y: float


class Velocity2D(NamedTuple):
    vx: float
    vy: float


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def as_point(value) -> Point2D:
    """Coerce a pair-like value to a :class:`Point2D`, rejecting NaN/inf."""
    x, y = (float(c) for c in value)
    if not _finite(x, y):
        raise ValueError(f"non-finite point ({x}, {y})")
    return Point2D(x, y)


@dataclass(frozen=True)
class LinkGeometry:
    """One Wi-Fi sensing link.

    In ``los`` mode ``tx``/``rx`` are the transmitter and receiver of the
    link. In ``nlos`` mode they are the two receivers of a pair that share
    the transmitter-to-person path.
    """

    tx: Point2D
    rx: Point2D
    mode: str = LOS

    def __post_init__(self):
        object.__setattr__(self, "tx", as_point(self.tx))
        object.__setattr__(self, "rx", as_point(self.rx))
        if self.mode not in (LOS, NLOS):
            raise ValueError(f"unknown link mode {self.mode!r}")
        if self.tx == self.rx:
            raise ValueError("link endpoints coincide")

    @property
    def baseline(self) -> float:
        return math.dist(self.tx, self.rx)


@dataclass(frozen=True)
class SpeakerPair:
    s1: Point2D
    s2: Point2D

    def __post_init__(self):
        object.__setattr__(self, "s1", as_point(self.s1))
        object.__setattr__(self, "s2", as_point(self.s2))
        if self.baseline <= 0:
            raise ValueError("speaker baseline must be positive")

    @property
    def baseline(self) -> float:
        return math.dist(self.s1, self.s2)


@dataclass(frozen=True)
class Arena:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not _finite(self.x_min, self.x_max, self.y_min, self.y_max):
            raise ValueError("arena bounds must be finite")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("arena bounds must satisfy min < max")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, p, tol: float = 0.0) -> bool:
        x, y = p
        return (self.x_min - tol <= x <= self.x_max + tol
                and self.y_min - tol <= y <= self.y_max + tol)


def reflection_path_length(p, link: LinkGeometry):
    """Length of the transmitter -> person -> receiver path.

    ``p`` may be a single point or an array of shape ``(..., 2)``.
    """
    p = np.asarray(p, dtype=float)
    d_t = np.hypot(p[..., 0] - link.tx.x, p[..., 1] - link.tx.y)
    d_r = np.hypot(p[..., 0] - link.rx.x, p[..., 1] - link.rx.y)
    out = d_t + d_r
    return float(out) if out.ndim == 0 else out


def path_difference(p, pair: SpeakerPair):
    """``|p - s1| - |p - s2|``; bounded by the speaker baseline."""
    p = np.asarray(p, dtype=float)
    d1 = np.hypot(p[..., 0] - pair.s1.x, p[..., 1] - pair.s1.y)
    d2 = np.hypot(p[..., 0] - pair.s2.x, p[..., 1] - pair.s2.y)
    out = d1 - d2
    return float(out) if out.ndim == 0 else out


def path_difference_gradient(p, pair: SpeakerPair) -> np.ndarray:
    """Gradient of :func:`path_difference` with respect to ``p``.

    Undefined exactly at a speaker; the returned unit-vector term is zero
    there instead of NaN.
    """
    p = np.asarray(p, dtype=float)
    g = _unit(p, pair.s1) - _unit(p, pair.s2)
    return g


def _unit(p: np.ndarray, anchor: Point2D) -> np.ndarray:
    dx = p[..., 0] - anchor.x
    dy = p[..., 1] - anchor.y
    d = np.hypot(dx, dy)
    safe = np.where(d > 0, d, 1.0)
    return np.stack([dx / safe, dy / safe], axis=-1)


def nearest_feasible_point(p, arena: Arena):
    """Project onto the arena rectangle (component-wise clamp).

    Returns a :class:`Point2D` for a single point and an array otherwise.
    """
    arr = np.asarray(p, dtype=float)
    x = np.clip(arr[..., 0], arena.x_min, arena.x_max)
    y = np.clip(arr[..., 1], arena.y_min, arena.y_max)
    if arr.ndim == 1:
        return Point2D(float(x), float(y))
    return np.stack([x, y], axis=-1)
