"""Initial-position search by forward-model consistency, plus stream segmentation.

A candidate start is scored by tracking the observed features from it,
re-synthesizing the features the reconstructed walk would have produced,
and measuring how far they are from what was observed. Only the true start
reproduces the observations; a wrong one needs acoustic corrections, which
show up as velocity jumps in the re-synthesized PLCR.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .features import FeatureStream
from .fusion_solver import FusionWeights, SolverOptions, track_arrays
from .geometry import Arena, LinkGeometry, Point2D, SpeakerPair, path_difference
from .wifi_features import steering_batch

DEFAULT_CELL = 0.25
DEFAULT_WINDOW = 10.0
INFEASIBLE = math.inf


class NoFeasibleStartError(RuntimeError):
    """Every candidate failed to produce a finite loss."""


@dataclass(frozen=True)
class CandidateGrid:
    cell_size: float
    candidates: tuple[Point2D, ...]

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if not self.candidates:
            raise ValueError("candidate grid is empty")

    def __len__(self) -> int:
        return len(self.candidates)

    def as_array(self) -> np.ndarray:
        return np.array(self.candidates, dtype=float).reshape(-1, 2)

    @classmethod
    def covering(cls, arena: Arena, cell_size: float = DEFAULT_CELL) -> "CandidateGrid":
        """Row-major lattice from the arena's lower-left corner, spacing ``cell_size``."""
        if not cell_size > 0:
            raise ValueError("cell_size must be positive")
        nx = int(math.floor(arena.width / cell_size + 1e-9)) + 1
        ny = int(math.floor(arena.height / cell_size + 1e-9)) + 1
        pts = tuple(Point2D(arena.x_min + i * cell_size, arena.y_min + j * cell_size)
                    for j in range(ny) for i in range(nx))
        return cls(cell_size, pts)

    @classmethod
    def around(cls, center, arena: Arena, cell_size: float, radius: int = 1) -> "CandidateGrid":
        """``(2 radius + 1)^2`` lattice centred on ``center``, clipped to the arena."""
        cx, cy = center
        pts = []
        for j in range(-radius, radius + 1):
            for i in range(-radius, radius + 1):
                p = (cx + i * cell_size, cy + j * cell_size)
                if arena.contains(p, tol=1e-12):
                    pts.append(Point2D(min(max(p[0], arena.x_min), arena.x_max),
                                       min(max(p[1], arena.y_min), arena.y_max)))
        return cls(cell_size, tuple(pts))


@dataclass
class SearchResult:
    best: Point2D
    loss_surface: np.ndarray
    runner_up_margin: float
    candidates: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    best_loss: float = math.nan

    def write_surface(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cand_x", "cand_y", "loss"])
        for (x, y), loss in zip(self.candidates, self.loss_surface):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(loss))])


def _resynthesize(pos: np.ndarray, vel: np.ndarray, dt: float,
                  links: Sequence[LinkGeometry]) -> np.ndarray:
    """PLCR (B, K, L) the walk ``pos`` would produce.

    Velocities are forward differences of the positions; the last frame
    uses the tracker's own velocity estimate.
    """
    v = np.empty_like(pos)
    v[:, :-1] = (pos[:, 1:] - pos[:, :-1]) / dt
    v[:, -1] = vel[:, -1]
    nb, nk, _ = pos.shape
    alpha, _ = steering_batch(pos.reshape(-1, 2), links)
    alpha = alpha.reshape(nb, nk, len(links), 2)
    return alpha[..., 0] * v[..., None, 0] + alpha[..., 1] * v[..., None, 1]


def batch_losses(starts: np.ndarray, observed: FeatureStream, links: Sequence[LinkGeometry],
                 w: FusionWeights, arena: Arena, pair: SpeakerPair | None = None,
                 options: SolverOptions | None = None) -> np.ndarray:
    """Reconstruction loss for each row of ``starts`` (B, 2).

    The loss is ``sqrt(mean_k(k1 |r_hat - r|^2 + k2 conf (c dt_hat - c dt)^2))``.
    Non-finite reconstructions score ``+inf``.
    """
    opts = options or SolverOptions()
    starts = np.asarray(starts, dtype=float).reshape(-1, 2)
    if len(observed) == 0:
        raise ValueError("empty feature stream")
    inside = np.array([arena.contains(p) for p in starts])
    losses = np.full(len(starts), INFEASIBLE)
    if not inside.any():
        return losses
    dt = observed.dt if len(observed) > 1 else 1.0
    res = track_arrays(starts[inside], observed.plcr, observed.tdof, observed.confidence, dt,
                       links, w, arena, pair, opts)
    pos = res["positions"]
    r_hat = _resynthesize(pos, res["velocities"], dt, links)
    sq = np.zeros(pos.shape[:2])
    for i in range(len(links)):
        sq = sq + (r_hat[..., i] - observed.plcr[None, :, i]) ** 2
    total = w.k1 * sq
    if pair is not None and w.k2 > 0:
        act = observed.confidence > 0
        c = opts.speed_of_sound
        target = np.where(act, observed.tdof * c, 0.0)
        mis = path_difference(pos, pair) - target[None, :]
        total = total + np.where(act[None, :], w.k2 * observed.confidence[None, :] * mis * mis,
                                 0.0)
    with np.errstate(invalid="ignore"):
        loss = np.sqrt(total.mean(axis=1))
    losses[inside] = np.where(np.isfinite(loss), loss, INFEASIBLE)
    return losses


def reconstruct_loss(candidate, observed: FeatureStream, links: Sequence[LinkGeometry],
                     w: FusionWeights, arena: Arena, pair: SpeakerPair | None = None,
                     options: SolverOptions | None = None) -> float:
    """Feature-reconstruction loss of one candidate start (``inf`` on failure)."""
    try:
        return float(batch_losses(np.asarray(candidate, dtype=float).reshape(1, 2), observed,
                                  links, w, arena, pair, options)[0])
    except (ValueError, FloatingPointError):
        return INFEASIBLE


def _argmin_first(losses: np.ndarray) -> int:
    """Index of the smallest loss; ties go to the smallest index."""
    return int(np.argmin(losses))


def _margin(losses: np.ndarray, best: int) -> float:
    others = np.delete(losses, best)
    finite = others[np.isfinite(others)]
    if finite.size == 0:
        return 0.0
    runner = float(finite.min())
    if runner <= 0:
        return 0.0
    return max(0.0, (runner - float(losses[best])) / runner)


def search_window(observed: FeatureStream, window: float,
                  conf_threshold: float = 0.5) -> FeatureStream:
    """Prefix of ``window`` seconds, extended to cover the first high-confidence period."""
    if not window > 0:
        raise ValueError("window must be positive")
    n = len(observed)
    t = observed.timestamps
    stop = int(np.searchsorted(t, t[0] + window, side="right"))
    high = np.flatnonzero(observed.confidence >= conf_threshold)
    if high.size and high[0] >= stop:
        runs = _periods(high, DEFAULT_MAX_GAP)
        stop = runs[0][-1] + 1
    return observed.slice(0, max(1, min(stop, n)))


def search_initial(observed: FeatureStream, links: Sequence[LinkGeometry],
                   grid: CandidateGrid, w: FusionWeights, arena: Arena,
                   pair: SpeakerPair | None = None, options: SolverOptions | None = None,
                   window: float | None = DEFAULT_WINDOW, refine: bool = True,
                   chunk: int = 512) -> SearchResult:
    """Exhaustive grid search for the start with the lowest reconstruction loss.

    All candidates are tracked together in vectorized batches of ``chunk``.
    With ``refine`` a second pass on a half-cell lattice around the best
    coarse candidate picks the final answer. ``loss_surface`` holds the
    coarse-grid losses in candidate order.
    """
    if len(grid) == 0:
        raise ValueError("candidate grid is empty")
    stream = search_window(observed, window) if window else observed
    cand = grid.as_array()
    losses = _evaluate(cand, stream, links, w, arena, pair, options, chunk)
    if not np.isfinite(losses).any():
        raise NoFeasibleStartError("no feasible start: every candidate loss is infinite")
    best = _argmin_first(losses)
    margin = _margin(losses, best)
    best_pt = Point2D(*map(float, cand[best]))
    best_loss = float(losses[best])
    if refine and len(grid) > 1:
        fine = CandidateGrid.around(best_pt, arena, 0.5 * grid.cell_size)
        fl = _evaluate(fine.as_array(), stream, links, w, arena, pair, options, chunk)
        j = _argmin_first(fl)
        if fl[j] < best_loss:
            best_pt, best_loss = fine.candidates[j], float(fl[j])
    return SearchResult(best_pt, losses, margin, cand, best_loss)


def _evaluate(cand, stream, links, w, arena, pair, options, chunk) -> np.ndarray:
    out = np.empty(len(cand))
    for s in range(0, len(cand), chunk):
        out[s:s + chunk] = batch_losses(cand[s:s + chunk], stream, links, w, arena, pair,
                                        options)
    return out


# --- segmentation ----------------------------------------------------------

DEFAULT_MAX_GAP = 50


def _periods(high: np.ndarray, max_gap: int) -> list[np.ndarray]:
    """Split sorted sample indices into runs whose internal gaps are <= max_gap."""
    if high.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(high) > max_gap) + 1
    return np.split(high, cuts)


@dataclass
class Segmentation:
    chunks: list[FeatureStream]
    starts: list[int]
    warning: bool = False

    def __iter__(self) -> Iterator[FeatureStream]:
        return iter(self.chunks)

    def __len__(self) -> int:
        return len(self.chunks)

    def __getitem__(self, i: int) -> FeatureStream:
        return self.chunks[i]


def segment_by_confidence(stream: FeatureStream, min_high_conf: int = 1,
                          conf_threshold: float = 0.5,
                          max_gap: int = DEFAULT_MAX_GAP) -> Segmentation:
    """Cut ``stream`` so every chunk holds >= ``min_high_conf`` confident samples.

    Confident samples closer than ``max_gap`` samples form one period; cuts
    fall midway between the last period of a chunk and the next period.
    A stream without any confident sample comes back whole with
    ``warning`` set.
    """
    if not 0 < conf_threshold <= 1:
        raise ValueError("conf_threshold must lie in (0, 1]")
    if min_high_conf < 1:
        raise ValueError("min_high_conf must be >= 1")
    n = len(stream)
    high = np.flatnonzero(stream.confidence >= conf_threshold)
    periods = _periods(high, max_gap)
    if not periods or high.size < min_high_conf:
        return Segmentation([stream.slice(0, n)], [0], warning=True)
    groups: list[list[np.ndarray]] = [[]]
    count = 0
    for per in periods:
        if count >= min_high_conf:
            groups.append([])
            count = 0
        groups[-1].append(per)
        count += per.size
    if count < min_high_conf and len(groups) > 1:
        tail = groups.pop()
        groups[-1].extend(tail)
    starts = [0]
    for prev, nxt in zip(groups, groups[1:]):
        starts.append((int(prev[-1][-1]) + int(nxt[0][0]) + 1) // 2)
    bounds = starts + [n]
    chunks = [stream.slice(a, b) for a, b in zip(bounds, bounds[1:])]
    return Segmentation(chunks, starts)
