"""Tracking error statistics and method comparison tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .trajectory_sim import SampledTrajectory

CDF_STEPS = 100
SUMMARY_HEADER = ("method", "median_m", "mean_m", "drift_ratio", "laps")


def lower_median(values) -> float:
    """Median that takes the lower of the two middle values for even counts."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("median of an empty sequence")
    return float(v[(v.size - 1) // 2])


def quantile_lower(sorted_values: np.ndarray, q: float) -> float:
    """Order statistic at rank ``ceil(q n) - 1`` (``q = 0.5`` gives the lower median)."""
    n = sorted_values.size
    k = min(max(int(math.ceil(round(q * n, 9))) - 1, 0), n - 1)
    return float(sorted_values[k])


@dataclass
class ErrorReport:
    """Per-timestamp Euclidean errors and their summary statistics.

    ``cdf`` is a (101, 2) table of ``(error, quantile)`` rows at 1 % steps;
    the 0 % row holds the smallest error.
    """

    per_timestamp: np.ndarray
    median: float
    mean: float
    cdf: np.ndarray
    per_lap_median: tuple[float, ...] = field(default_factory=tuple)

    @classmethod
    def from_errors(cls, errors, lap_index=None) -> "ErrorReport":
        e = np.asarray(errors, dtype=float).ravel()
        if e.size == 0:
            raise ValueError("no errors to summarize")
        if not np.all(np.isfinite(e)):
            raise ValueError("errors must be finite")
        s = np.sort(e)
        qs = np.arange(CDF_STEPS + 1) / CDF_STEPS
        cdf = np.column_stack([[quantile_lower(s, q) for q in qs], qs])
        laps: tuple[float, ...] = ()
        if lap_index is not None:
            lap_index = np.asarray(lap_index)
            laps = tuple(lower_median(e[lap_index == i])
                         for i in range(int(lap_index.max()) + 1) if np.any(lap_index == i))
        return cls(e, lower_median(e), float(e.mean()), cdf, laps)

    @property
    def laps(self) -> int:
        return len(self.per_lap_median)

    def write_csv(self, fh) -> None:
        """Per-timestamp error column as CSV."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "error_m"])
        for i, v in enumerate(self.per_timestamp):
            writer.writerow([i, repr(float(v))])


def compute_errors(est, truth: SampledTrajectory) -> ErrorReport:
    """Errors of ``est`` (a trajectory or an (N, 2) array) against ``truth``.

    Trajectories must share length and have timestamps within ``dt / 2``.
    Laps follow ``truth.lap_boundaries``.
    """
    if isinstance(est, SampledTrajectory):
        if len(est) != len(truth):
            raise ValueError(f"length mismatch: estimate {len(est)} vs truth {len(truth)}")
        tol = 0.5 * truth.dt if len(truth) > 1 else 0.0
        gap = np.abs(est.timestamps - truth.timestamps)
        if gap.size and gap.max() > tol:
            k = int(np.argmax(gap))
            raise ValueError(f"timestamps misaligned at sample {k}: "
                             f"{est.timestamps[k]} vs {truth.timestamps[k]}")
        pos = est.positions
    else:
        pos = np.asarray(est, dtype=float).reshape(-1, 2)
        if len(pos) != len(truth):
            raise ValueError(f"length mismatch: estimate {len(pos)} vs truth {len(truth)}")
    d = pos - truth.positions
    err = np.hypot(d[:, 0], d[:, 1])
    laps = truth.lap_index() if truth.lap_boundaries else None
    return ErrorReport.from_errors(err, laps)


@dataclass(frozen=True)
class DriftRatio:
    value: float
    undefined: bool = False

    def __float__(self) -> float:
        return self.value


def drift_ratio(report: ErrorReport | tuple | list) -> DriftRatio:
    """Last-lap median over first-lap median.

    Accepts a report or a plain sequence of per-lap medians. A zero first
    lap gives ``inf`` with ``undefined`` set (``nan`` if the last lap is
    zero as well).
    """
    laps = report.per_lap_median if isinstance(report, ErrorReport) else tuple(report)
    if len(laps) < 2:
        raise ValueError("drift ratio needs at least two laps")
    first, last = float(laps[0]), float(laps[-1])
    if first == 0:
        return DriftRatio(math.nan if last == 0 else math.inf, True)
    return DriftRatio(last / first)


def median_reduction(a: float, b: float) -> float:
    """Percent reduction of median ``a`` relative to ``b``: ``100 (1 - a / b)``."""
    if b == 0:
        return math.nan
    return 100.0 * (1.0 - a / b)


@dataclass
class Comparison:
    """Pairwise median reductions; ``table[a][b]`` compares method a to method b."""

    methods: tuple[str, ...]
    table: dict[str, dict[str, float]]
    flagged: tuple[tuple[str, str], ...] = ()

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "versus", "reduction_pct"])
        for a in self.methods:
            for b in self.methods:
                if a != b:
                    writer.writerow([a, b, repr(self.table[a][b])])


def compare_methods(reports: Mapping[str, ErrorReport]) -> Comparison:
    """Median-reduction percentages between every ordered pair of methods.

    Pairs whose reference median is zero get ``nan`` and are listed in
    ``flagged``.
    """
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    names = tuple(reports)
    table: dict[str, dict[str, float]] = {}
    flagged = []
    for a in names:
        table[a] = {}
        for b in names:
            if a == b:
                continue
            ref = reports[b].median
            if ref == 0:
                flagged.append((a, b))
            table[a][b] = median_reduction(reports[a].median, ref)
    return Comparison(names, table, tuple(flagged))


def _num(x: float) -> str:
    return repr(float(x))


def summary_line(method: str, report: ErrorReport) -> str:
    """``method,median_m,mean_m,drift_ratio,laps`` (drift is ``nan`` below two laps)."""
    if report.laps >= 2:
        dr = drift_ratio(report).value
    else:
        dr = math.nan
    return ",".join([method, _num(report.median), _num(report.mean), _num(dr), str(report.laps)])


def write_cdf(reports: Mapping[str, ErrorReport], fh) -> None:
    """CDF table with one error column per method."""
    names = list(reports)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["quantile"] + [f"{n}_error_m" for n in names])
    qs = next(iter(reports.values())).cdf[:, 1]
    for i, q in enumerate(qs):
        writer.writerow([_num(q)] + [_num(reports[n].cdf[i, 0]) for n in names])
