"""Scene simulation and tracking runs driven by an :class:`ExperimentConfig`.

These are the building blocks of the command-line tool and the
acceptance experiments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselines import dead_reckoning_track
from .config import ExperimentConfig
from .features import FeatureStream
from .fusion_solver import TrackerOutput, track
from .geometry import LinkGeometry, Point2D, as_point
from .initial_search import CandidateGrid, SearchResult, search_initial, segment_by_confidence
from .scenario import synthesize_features
from .trajectory_sim import SampledTrajectory

METHODS = ("fusion", "baseline")


@dataclass
class Scene:
    truth: SampledTrajectory
    features: FeatureStream
    links: list[LinkGeometry]


@dataclass
class TrackRun:
    """A tracker output plus how its start was chosen.

    ``starts`` holds the start of every tracked chunk (one unless segmented)
    and ``search`` the result of the first searched chunk, if any.
    """

    output: TrackerOutput
    starts: list[Point2D]
    search: SearchResult | None = None

    @property
    def positions(self) -> np.ndarray:
        return self.output.positions


def simulate_scene(cfg: ExperimentConfig, mode: str | None = None,
                   n_links: int | None = None) -> Scene:
    """Truth walk and features for ``cfg``; deterministic in ``cfg.seed``."""
    links = cfg.links(mode, n_links)
    truth = cfg.trajectory()
    feats = synthesize_features(truth, links, cfg.pair, cfg.wifi(), cfg.acoustic(),
                                cfg.acoustic__generator, cfg.acoustic__frame_stride,
                                cfg.rng("wifi"), cfg.rng("acoustic"))
    return Scene(truth, feats, links)


def concat_outputs(parts: Sequence[TrackerOutput]) -> TrackerOutput:
    trajs = [p.trajectory for p in parts]
    traj = SampledTrajectory(np.concatenate([t.timestamps for t in trajs]),
                             np.concatenate([t.positions for t in trajs]),
                             np.concatenate([t.velocities for t in trajs]))
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return TrackerOutput(traj, cat("e1"), cat("e2"), cat("confidence"), cat("snapped"),
                         cat("velocity_held"), cat("degenerate"), cat("gated"),
                         cat("iterations"))


def _track_one(cfg, features, links, method, start) -> TrackerOutput:
    if method == "baseline":
        return dead_reckoning_track(features, links, start, cfg.arena, cfg.solver_options())
    return track(features, links, start, cfg.weights(links), cfg.arena, cfg.pair,
                 cfg.solver_options())


def _search(cfg, features, links, method) -> SearchResult:
    pair = cfg.pair if method == "fusion" else None
    grid = CandidateGrid.covering(cfg.arena, cfg.search__cell)
    return search_initial(features, links, grid, cfg.weights(links), cfg.arena, pair,
                          cfg.solver_options(), cfg.search__window)


def run_tracker(cfg: ExperimentConfig, features: FeatureStream, links: Sequence[LinkGeometry],
                method: str = "fusion", initial=None, search: bool = False,
                segment: bool | None = None) -> TrackRun:
    """Track ``features`` with ``method`` from ``initial`` or a searched start.

    With ``segment`` (default ``cfg.search.segment``) the stream is cut at
    confidence gaps and every chunk after the first gets its own searched
    start; the first chunk starts from ``initial`` when one is given.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if initial is None and not search:
        raise ValueError("an initial position is required unless the start is searched")
    links = list(links)
    segment = cfg.search__segment if segment is None else segment
    if not segment:
        found = _search(cfg, features, links, method) if initial is None else None
        start = as_point(initial) if initial is not None else found.best
        return TrackRun(_track_one(cfg, features, links, method, start), [start], found)
    seg = segment_by_confidence(features, cfg.search__min_high_conf)
    parts, starts, first = [], [], None
    for i, chunk in enumerate(seg):
        if i == 0 and initial is not None:
            start = as_point(initial)
        else:
            res = _search(cfg, chunk, links, method)
            first = first or res
            start = res.best
        starts.append(start)
        parts.append(_track_one(cfg, chunk, links, method, start))
    return TrackRun(concat_outputs(parts), starts, first)
