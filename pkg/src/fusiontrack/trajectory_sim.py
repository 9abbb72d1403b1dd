"""Ground-truth walking trajectories.

Paths are built from waypoints, corners are rounded with circular fillets
(or turned into full stops when the turn is too sharp to round), and the
walker follows a time-optimal speed profile under a tangential and a
centripetal acceleration budget. Sampled velocities are forward
differences of sampled positions, so ``p[k+1] == p[k] + v[k] * dt`` holds
up to rounding and the discrete acceleration never exceeds ``max_accel``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Point2D, as_point

SHAPES = ("square", "circle", "triangle", "triangle_inverted", "line")

CIRCLE_WAYPOINTS = 64
# Share of max_accel given to the tangential and centripetal components;
# hypot(0.6, 0.75) < 1 keeps the combined acceleration inside the budget.
TANGENTIAL_SHARE = 0.6
CENTRIPETAL_SHARE = 0.75
# Turns sharper than this become full stops instead of fillets.
MAX_FILLET_TURN = math.radians(150.0)
_PROFILE_STEP = 1e-3


@dataclass(frozen=True)
class WaypointPath:
    waypoints: tuple[Point2D, ...]
    laps: int = 1
    closed: bool = True
    arc_center: Point2D | None = None

    def __post_init__(self):
        pts = tuple(as_point(w) for w in self.waypoints)
        object.__setattr__(self, "waypoints", pts)
        if len(pts) < 2:
            raise ValueError("a path needs at least two waypoints")
        if self.laps < 1:
            raise ValueError("laps must be >= 1")
        ring = pts + (pts[0],) if self.closed else pts
        for a, b in zip(ring, ring[1:]):
            if a == b:
                raise ValueError(f"consecutive waypoints coincide at {a}")
        if self.arc_center is not None:
            object.__setattr__(self, "arc_center", as_point(self.arc_center))


@dataclass(frozen=True)
class MotionProfile:
    cruise_speed: float = 1.0
    max_accel: float = 1.5
    corner_slowdown: float = 0.5

    def __post_init__(self):
        if not self.cruise_speed > 0:
            raise ValueError("cruise_speed must be positive")
        if not self.max_accel > 0:
            raise ValueError("max_accel must be positive")
        if not 0 < self.corner_slowdown <= 1:
            raise ValueError("corner_slowdown must lie in (0, 1]")


@dataclass
class SampledTrajectory:
    timestamps: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    lap_boundaries: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        n = len(self.timestamps)
        if len(self.positions) != n or len(self.velocities) != n:
            raise ValueError("timestamps, positions and velocities differ in length")
        self.lap_boundaries = tuple(int(i) for i in self.lap_boundaries)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def dt(self) -> float:
        if len(self.timestamps) < 2:
            return 0.0
        return float(self.timestamps[1] - self.timestamps[0])

    def lap_index(self) -> np.ndarray:
        """Lap number (0-based) of every sample."""
        idx = np.zeros(len(self), dtype=int)
        for b in self.lap_boundaries[:-1]:
            idx[b + 1:] += 1
        return idx

    def slice(self, start: int, stop: int) -> "SampledTrajectory":
        laps = [b - start for b in self.lap_boundaries if start <= b < stop]
        return SampledTrajectory(self.timestamps[start:stop],
                                 self.positions[start:stop],
                                 self.velocities[start:stop], laps)


def generate_shape(shape: str, center=(0.0, 0.0), size: float = 4.0,
                   laps: int = 1) -> WaypointPath:
    """Waypoints of a named shape scaled to ``size`` meters.

    ``square`` has side ``size``; ``circle`` has diameter ``size``;
    the triangles are equilateral with side ``size`` and centroid at
    ``center``; ``line`` spans ``size`` horizontally and is walked back
    and forth.
    """
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    if not size > 0:
        raise ValueError("size must be positive")
    if laps < 1:
        raise ValueError("laps must be >= 1")
    cx, cy = as_point(center)
    h = size / 2.0
    if shape == "square":
        pts = [(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h)]
        return WaypointPath(pts, laps, closed=True)
    if shape == "circle":
        ang = 2 * np.pi * np.arange(CIRCLE_WAYPOINTS) / CIRCLE_WAYPOINTS - np.pi / 2
        pts = list(zip(cx + h * np.cos(ang), cy + h * np.sin(ang)))
        return WaypointPath(pts, laps, closed=True, arc_center=Point2D(cx, cy))
    if shape in ("triangle", "triangle_inverted"):
        r = size / math.sqrt(3.0)
        sign = 1.0 if shape == "triangle" else -1.0
        base = [-np.pi / 2 - 2 * np.pi / 3, -np.pi / 2 + 2 * np.pi / 3, np.pi / 2]
        pts = [(cx + r * math.cos(a), cy + sign * r * math.sin(a)) for a in base]
        if sign < 0:
            pts = pts[::-1]
        return WaypointPath(pts, laps, closed=True)
    return WaypointPath([(cx - h, cy), (cx + h, cy)], laps, closed=False)


# --- path primitives -------------------------------------------------------

@dataclass(frozen=True)
class _Line:
    start: np.ndarray
    direction: np.ndarray
    length: float
    vmax: float

    def at(self, s):
        return self.start + np.multiply.outer(s, self.direction)


@dataclass(frozen=True)
class _Arc:
    center: np.ndarray
    radius: float
    phase0: float
    turn: float  # +1 counter-clockwise, -1 clockwise
    length: float
    vmax: float

    def at(self, s):
        ang = self.phase0 + self.turn * np.asarray(s) / self.radius
        return self.center + self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def _vertex_sequence(path: WaypointPath) -> list[np.ndarray]:
    pts = [np.array(p) for p in path.waypoints]
    if path.closed:
        return pts * path.laps + [pts[0]]
    lap = pts + pts[-2::-1]
    seq = list(lap)
    for _ in range(path.laps - 1):
        seq += lap[1:]
    return seq


def _build_polyline(path: WaypointPath, profile: MotionProfile):
    """Primitives, hard stops (arc-length positions) and lap ends."""
    verts = _vertex_sequence(path)
    a_c = CENTRIPETAL_SHARE * profile.max_accel
    v_corner = profile.corner_slowdown * profile.cruise_speed
    n_seg = len(verts) - 1
    seg_dir, seg_len = [], []
    for a, b in zip(verts, verts[1:]):
        d = b - a
        length = float(np.hypot(*d))
        seg_dir.append(d / length)
        seg_len.append(length)

    # Per interior vertex: fillet (radius, tangent length) or hard stop.
    fillet = {}
    for i in range(1, n_seg):
        d_in, d_out = seg_dir[i - 1], seg_dir[i]
        cosang = float(np.clip(d_in @ d_out, -1.0, 1.0))
        theta = math.acos(cosang)
        if theta < 1e-12:
            continue
        if theta > MAX_FILLET_TURN:
            fillet[i] = None
            continue
        radius = v_corner ** 2 / a_c
        half = math.tan(theta / 2)
        limit = 0.5 * min(seg_len[i - 1], seg_len[i]) / half
        radius = min(radius, limit)
        fillet[i] = (radius, radius * half, theta)

    prims: list = []
    stops = [0.0]
    lap_marks = []
    per_lap = len(path.waypoints) if path.closed else 2 * (len(path.waypoints) - 1)
    s = 0.0
    start = verts[0].astype(float)
    for i in range(n_seg):
        end_trim = fillet.get(i + 1)
        seg_end = verts[i + 1] - (end_trim[1] * seg_dir[i] if end_trim else 0.0)
        length = float(np.hypot(*(seg_end - start)))
        if length > 0:
            prims.append(_Line(start, seg_dir[i], length, profile.cruise_speed))
            s += length
        vi = i + 1
        is_lap_end = vi % per_lap == 0
        if vi in fillet and fillet[vi] is not None:
            radius, tlen, theta = fillet[vi]
            d_in, d_out = seg_dir[i], seg_dir[vi]
            turn = 1.0 if d_in[0] * d_out[1] - d_in[1] * d_out[0] > 0 else -1.0
            normal = turn * np.array([-d_in[1], d_in[0]])
            center = seg_end + radius * normal
            phase0 = math.atan2(*(seg_end - center)[::-1])
            arc_len = radius * theta
            vmax = min(profile.cruise_speed, math.sqrt(a_c * radius))
            prims.append(_Arc(center, radius, phase0, turn, arc_len, vmax))
            if is_lap_end:
                lap_marks.append(s + arc_len / 2)
            s += arc_len
            start = verts[vi] + tlen * d_out
        else:
            if vi in fillet or vi == n_seg:
                stops.append(s)
            if is_lap_end:
                lap_marks.append(s)
            start = verts[vi].astype(float)
    return prims, stops, lap_marks


def _build_circle(path: WaypointPath, profile: MotionProfile):
    c = np.array(path.arc_center)
    p0 = np.array(path.waypoints[0])
    p1 = np.array(path.waypoints[1])
    radius = float(np.hypot(*(p0 - c)))
    cross = (p0 - c)[0] * (p1 - c)[1] - (p0 - c)[1] * (p1 - c)[0]
    turn = 1.0 if cross > 0 else -1.0
    phase0 = math.atan2(p0[1] - c[1], p0[0] - c[0])
    lap_len = 2 * math.pi * radius
    a_c = CENTRIPETAL_SHARE * profile.max_accel
    vmax = min(profile.cruise_speed, math.sqrt(a_c * radius))
    total = lap_len * path.laps
    prims = [_Arc(c, radius, phase0, turn, total, vmax)]
    return prims, [0.0, total], [lap_len * (k + 1) for k in range(path.laps)]


def _speed_profile(prims, stops, a_t: float):
    """Arc-length grid and squared speed of the time-optimal profile."""
    bounds = np.concatenate([[0.0], np.cumsum([p.length for p in prims])])
    total = bounds[-1]
    n = max(int(math.ceil(total / _PROFILE_STEP)), 2)
    grid = np.unique(np.concatenate([np.linspace(0.0, total, n + 1), bounds, stops]))
    vlim = np.full(grid.shape, np.inf)
    limits = []
    for p, a, b in zip(prims, bounds[:-1], bounds[1:]):
        inside = (grid >= a) & (grid <= b)
        vlim[inside] = np.minimum(vlim[inside], p.vmax)
        limits.append((a, b, p.vmax))
    for s0 in stops:
        limits.append((s0, s0, 0.0))
    v2 = vlim ** 2
    for a, b, v in limits:
        v2 = np.minimum(v2, np.where(grid >= b, v * v + 2 * a_t * (grid - b), np.inf))
        v2 = np.minimum(v2, np.where(grid <= a, v * v + 2 * a_t * (a - grid), np.inf))
    return grid, np.maximum(v2, 0.0)


def _arc_length_at_times(grid, v2, times):
    v = np.sqrt(v2)
    h = np.diff(grid)
    vsum = v[:-1] + v[1:]
    dt_cell = np.where(vsum > 0, 2 * h / np.where(vsum > 0, vsum, 1.0), np.inf)
    t_nodes = np.concatenate([[0.0], np.cumsum(dt_cell)])
    if not np.isfinite(t_nodes[-1]):
        raise ValueError("motion profile never reaches a positive speed on some segment")
    times = np.minimum(times, t_nodes[-1])
    cell = np.clip(np.searchsorted(t_nodes, times, side="right") - 1, 0, len(h) - 1)
    tau = times - t_nodes[cell]
    accel = (v2[cell + 1] - v2[cell]) / (2 * h[cell])
    s = grid[cell] + v[cell] * tau + 0.5 * accel * tau ** 2
    return np.clip(s, grid[cell], grid[cell + 1]), t_nodes[-1]


def _positions(prims, s):
    bounds = np.concatenate([[0.0], np.cumsum([p.length for p in prims])])
    idx = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(prims) - 1)
    out = np.empty((len(s), 2))
    for k, prim in enumerate(prims):
        sel = idx == k
        if sel.any():
            out[sel] = prim.at(s[sel] - bounds[k])
    return out


def sample_trajectory(path: WaypointPath, profile: MotionProfile | None = None,
                      rate: float = 100.0) -> SampledTrajectory:
    """Sample the walker's motion along ``path`` at ``rate`` Hz.

    The walk starts and ends at rest on the first waypoint. A lap
    completes each time the walker passes the first waypoint (through its
    fillet on closed paths).
    """
    if not rate > 0:
        raise ValueError("rate must be positive")
    profile = profile or MotionProfile()
    if path.arc_center is not None:
        prims, stops, lap_marks = _build_circle(path, profile)
    else:
        prims, stops, lap_marks = _build_polyline(path, profile)
    a_t = TANGENTIAL_SHARE * profile.max_accel
    grid, v2 = _speed_profile(prims, stops, a_t)
    dt = 1.0 / rate
    _, t_end = _arc_length_at_times(grid, v2, np.array([0.0]))
    n = int(math.floor(t_end * rate + 1e-9)) + 1
    times = np.arange(n + 1) * dt
    s, _ = _arc_length_at_times(grid, v2, times)
    pos = _positions(prims, s)
    vel = np.diff(pos, axis=0) / dt
    laps = []
    for mark in lap_marks[:-1]:
        laps.append(int(min(np.searchsorted(s[:n], mark - 1e-12), n - 1)))
    laps.append(n - 1)
    return SampledTrajectory(times[:n], pos[:n], vel, laps)


def export_training_set(trajectories: Sequence[SampledTrajectory], features: Sequence,
                        destination) -> int:
    """Write a features-to-positions corpus as CSV; returns the row count."""
    if len(trajectories) != len(features):
        raise ValueError("trajectories and feature streams differ in count")
    n_links = features[0].n_links if features else 0
    for traj, feat in zip(trajectories, features):
        if len(traj) != len(feat):
            raise ValueError("trajectory and feature stream lengths differ")
        if feat.n_links != n_links:
            raise ValueError("all feature streams must have the same link count")
    destination = Path(destination)
    header = (["traj_id", "t"] + [f"plcr_{i + 1}" for i in range(n_links)]
              + ["tdof", "amplitude", "confidence", "x", "y"])
    rows = 0
    try:
        with destination.open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"#links={n_links}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for tid, (traj, feat) in enumerate(zip(trajectories, features)):
                for k in range(len(traj)):
                    tdof = feat.tdof[k]
                    writer.writerow([tid, repr(float(traj.timestamps[k]))]
                                    + [repr(float(v)) for v in feat.plcr[k]]
                                    + ["" if math.isnan(tdof) else repr(float(tdof)),
                                       repr(float(feat.amplitude[k])),
                                       repr(float(feat.confidence[k])),
                                       repr(float(traj.positions[k, 0])),
                                       repr(float(traj.positions[k, 1]))])
                    rows += 1
    except OSError as exc:
        raise OSError(f"could not write training set to {destination}: {exc}") from exc
    return rows


def read_training_set(source) -> tuple[int, list[dict]]:
    """Parse a corpus written by :func:`export_training_set`."""
    with Path(source).open(encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("#links="):
            raise ValueError("missing #links= header line")
        n_links = int(first.split("=", 1)[1])
        records = []
        for row in csv.DictReader(fh):
            rec = {"traj_id": int(row["traj_id"]), "t": float(row["t"])}
            rec["plcr"] = [float(row[f"plcr_{i + 1}"]) for i in range(n_links)]
            rec["tdof"] = float(row["tdof"]) if row["tdof"] else math.nan
            for key in ("amplitude", "confidence", "x", "y"):
                rec[key] = float(row[key])
            records.append(rec)
    return n_links, records


TRAJECTORY_COLUMNS = ["t", "x", "y", "vx", "vy"]


def write_trajectory(traj: SampledTrajectory, fh) -> None:
    """Truth CSV: a ``#laps=`` line with the lap boundaries, then t,x,y,vx,vy."""
    fh.write("#laps=" + " ".join(str(b) for b in traj.lap_boundaries) + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for k in range(len(traj)):
        writer.writerow([repr(float(traj.timestamps[k])),
                         repr(float(traj.positions[k, 0])), repr(float(traj.positions[k, 1])),
                         repr(float(traj.velocities[k, 0])), repr(float(traj.velocities[k, 1]))])


def read_trajectory(path) -> SampledTrajectory:
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("#laps="):
            raise ValueError(f"{path}: missing #laps= header line")
        laps = [int(v) for v in first.split("=", 1)[1].split()]
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: header {header} does not match {TRAJECTORY_COLUMNS}")
        arr = np.array([[float(v) for v in row] for row in reader if row],
                       dtype=float).reshape(-1, 5)
    return SampledTrajectory(arr[:, 0], arr[:, 1:3], arr[:, 3:5], laps)
