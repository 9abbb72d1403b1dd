"""Dead-reckoning tracker: integrate PLCR-recovered velocity from a known start.

It runs the fusion tracker with the acoustic term switched off, so any
difference between the two isolates what the acoustic channel contributes.
"""

from __future__ import annotations

from typing import Sequence

from .features import FeatureStream
from .fusion_solver import FusionWeights, SolverOptions, TrackerOutput, track
from .geometry import Arena, LinkGeometry

DEAD_RECKONING_WEIGHTS = FusionWeights(1.0, 0.0)


def dead_reckoning_track(features: FeatureStream, links: Sequence[LinkGeometry], initial,
                         arena: Arena, options: SolverOptions | None = None) -> TrackerOutput:
    """Per frame: recover v at the current estimate, step ``p += v * dt``, snap.

    Acoustic columns of ``features`` are ignored.
    """
    return track(features.without_acoustic(), links, initial, DEAD_RECKONING_WEIGHTS, arena,
                 None, options)
