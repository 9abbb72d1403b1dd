"""Time-aligned Wi-Fi and acoustic feature streams and their CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import LOS, NLOS


@dataclass
class FeatureStream:
    """Per-frame PLCR (or DPLCR) values plus the acoustic channel.

    ``tdof`` is NaN on frames without an acoustic measurement; those frames
    carry ``confidence == 0``.
    """

    timestamps: np.ndarray
    plcr: np.ndarray
    tdof: np.ndarray
    amplitude: np.ndarray
    confidence: np.ndarray
    mode: str = LOS

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        n = len(self.timestamps)
        self.plcr = np.asarray(self.plcr, dtype=float).reshape(n, -1)
        self.tdof = np.asarray(self.tdof, dtype=float).reshape(n)
        self.amplitude = np.asarray(self.amplitude, dtype=float).reshape(n)
        self.confidence = np.asarray(self.confidence, dtype=float).reshape(n)
        if self.mode not in (LOS, NLOS):
            raise ValueError(f"unknown feature mode {self.mode!r}")
        absent = np.isnan(self.tdof)
        if np.any(self.confidence[absent] != 0):
            raise ValueError("frames without a TDoF must have zero confidence")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ValueError("confidence must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_links(self) -> int:
        return self.plcr.shape[1]

    @property
    def dt(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0]) if len(self) > 1 else 0.0

    @property
    def acoustic_mask(self) -> np.ndarray:
        return self.confidence > 0

    def slice(self, start: int, stop: int) -> "FeatureStream":
        return FeatureStream(self.timestamps[start:stop], self.plcr[start:stop],
                             self.tdof[start:stop], self.amplitude[start:stop],
                             self.confidence[start:stop], self.mode)

    def select_links(self, count: int) -> "FeatureStream":
        return FeatureStream(self.timestamps, self.plcr[:, :count], self.tdof,
                             self.amplitude, self.confidence, self.mode)

    def without_acoustic(self) -> "FeatureStream":
        n = len(self)
        return FeatureStream(self.timestamps, self.plcr, np.full(n, np.nan),
                             np.zeros(n), np.zeros(n), self.mode)

    @classmethod
    def concat(cls, parts) -> "FeatureStream":
        parts = list(parts)
        return cls(np.concatenate([p.timestamps for p in parts]),
                   np.concatenate([p.plcr for p in parts]),
                   np.concatenate([p.tdof for p in parts]),
                   np.concatenate([p.amplitude for p in parts]),
                   np.concatenate([p.confidence for p in parts]),
                   parts[0].mode)

    def equals(self, other: "FeatureStream") -> bool:
        return (self.mode == other.mode
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.plcr, other.plcr)
                and np.array_equal(self.tdof, other.tdof, equal_nan=True)
                and np.array_equal(self.amplitude, other.amplitude)
                and np.array_equal(self.confidence, other.confidence))


def feature_columns(mode: str, n_links: int) -> list[str]:
    prefix = "plcr" if mode == LOS else "dplcr"
    return (["t"] + [f"{prefix}_{i + 1}" for i in range(n_links)]
            + ["tdof", "amplitude", "confidence"])


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_features(stream: FeatureStream, fh) -> None:
    fh.write(f"#mode={stream.mode}\n#links={stream.n_links}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(feature_columns(stream.mode, stream.n_links))
    for k in range(len(stream)):
        writer.writerow([_fmt(stream.timestamps[k])]
                        + [_fmt(v) for v in stream.plcr[k]]
                        + [_fmt(stream.tdof[k]), _fmt(stream.amplitude[k]),
                           _fmt(stream.confidence[k])])


def read_features(path) -> FeatureStream:
    meta = {}
    with Path(path).open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
        elif line:
            body.append(line)
    if "mode" not in meta or "links" not in meta:
        raise ValueError(f"{path}: missing #mode= or #links= header")
    mode, n_links = meta["mode"], int(meta["links"])
    reader = csv.reader(body)
    header = next(reader)
    expected = feature_columns(mode, n_links)
    if header != expected:
        raise ValueError(f"{path}: header {header} does not match {expected}")
    rows = [[float(v) if v else math.nan for v in row] for row in reader]
    arr = np.array(rows, dtype=float).reshape(-1, len(expected))
    return FeatureStream(arr[:, 0], arr[:, 1:1 + n_links], arr[:, 1 + n_links],
                         arr[:, 2 + n_links], arr[:, 3 + n_links], mode)
