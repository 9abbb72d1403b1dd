"""Per-frame fusion of Wi-Fi velocity evidence with acoustic hyperbolas.

Each frame dead-reckons the previous estimate, projects it onto the
current TDoF hyperbola when an acoustic measurement is available, refines
it with a damped Gauss-Newton update and finally re-estimates velocity at
the new position.

The solver core runs on a batch of independent sessions (leading axis B)
using only element-wise arithmetic. A session's output therefore does not
depend on what else shares its batch, which lets the initial-position
search and the Monte-Carlo experiments run many sessions in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .acoustic_sim import AcousticMeasurement
from .features import FeatureStream
from .geometry import Arena, LinkGeometry, Point2D, SpeakerPair, Velocity2D, path_difference
from .trajectory_sim import SampledTrajectory
from .wifi_features import (RankDeficiencyError, solve_velocity, steering_batch,
                            velocity_jacobian)

DEFAULT_SPEED_OF_SOUND = 343.0
MAX_ITERATIONS = 5
# Levenberg damping as a fraction of trace(J^T J); see _gn_delta.
DAMPING = 1e-6
_PROJECTION_ITERATIONS = 80
# Acoustic frames whose expected position error normal to the hyperbola
# (sigma_d * c_s / |grad path_difference| / sqrt(confidence)) exceeds this
# are skipped: near the speaker axis a small TDoF error moves the curve far.
DEFAULT_GATE = 0.1
DEFAULT_MAX_SPEED = 5.0
# Spread of the dead-reckoned position within one frame. Without this prior
# row the velocity rows barely constrain motion along the hyperbola and TDoF
# noise moves the estimate far along the curve.
DEFAULT_SIGMA_P = 0.01
N_ROWS = 5


@dataclass(frozen=True)
class FusionWeights:
    """Residual weights: velocity ``k1``, hyperbola ``k2``, dead-reckoning prior ``k0``.

    ``k0 = 0`` drops the prior row and leaves the two-term objective.
    """

    k1: float
    k2: float
    sigma_v: float = math.nan
    sigma_d: float = math.nan
    k0: float = 0.0
    sigma_p: float = math.inf

    def __post_init__(self):
        if not (self.k1 > 0 and math.isfinite(self.k1)):
            raise ValueError("k1 must be positive and finite")
        if not (self.k2 >= 0 and math.isfinite(self.k2)):
            raise ValueError("k2 must be non-negative and finite")
        if not (self.k0 >= 0 and math.isfinite(self.k0)):
            raise ValueError("k0 must be non-negative and finite")

    def scaled(self, factor: float) -> "FusionWeights":
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        return FusionWeights(self.k1 * factor, self.k2 * factor, self.sigma_v, self.sigma_d,
                             self.k0 * factor, self.sigma_p)


def weights_from_noise(sigma_v: float, sigma_d: float,
                       c_s: float = DEFAULT_SPEED_OF_SOUND,
                       sigma_p: float = DEFAULT_SIGMA_P) -> FusionWeights:
    """Inverse-variance weights, with TDoF noise converted to meters via ``c_s``.

    ``k1 + k2 == 1``. The prior weight ``k0`` uses the same normalization with
    variance ``sigma_p**2`` (position spread of the dead-reckoned point); an
    infinite ``sigma_p`` gives ``k0 = 0``.

    >>> w = weights_from_noise(0.05, 0.034 / 343.0)
    >>> round(w.k1 / w.k2, 4)
    0.4624
    """
    if not (sigma_v > 0 and sigma_d > 0):
        raise ValueError("noise sigmas must be positive")
    if not c_s > 0:
        raise ValueError("speed of sound must be positive")
    if not sigma_p > 0:
        raise ValueError("sigma_p must be positive (inf disables the prior)")
    i1 = 1.0 / sigma_v ** 2
    i2 = 0.0 if math.isinf(sigma_d) else 1.0 / (sigma_d * c_s) ** 2
    i0 = 0.0 if math.isinf(sigma_p) else 1.0 / sigma_p ** 2
    total = i1 + i2
    return FusionWeights(i1 / total, i2 / total, sigma_v, sigma_d, i0 / total, sigma_p)


@dataclass(frozen=True)
class StepDiagnostics:
    iterations: int = 0
    e1: float = 0.0
    e2: float = math.nan
    snapped: bool = False
    velocity_held: bool = False
    degenerate: bool = False
    # the velocity was held because of a boundary snap
    snap_hold: bool = False


@dataclass(frozen=True)
class SolverState:
    position: Point2D
    velocity: Velocity2D
    timestamp: float
    last_acoustic: AcousticMeasurement | None = None
    diagnostics: StepDiagnostics = field(default_factory=StepDiagnostics)

    def __post_init__(self):
        vals = (*self.position, *self.velocity, self.timestamp)
        if not all(math.isfinite(float(x)) for x in vals):
            raise ValueError("solver state must be finite")


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the per-frame solver that are not noise weights."""

    speed_of_sound: float = DEFAULT_SPEED_OF_SOUND
    iterations: int = 1
    gate: float = DEFAULT_GATE
    # recovered speeds above this are treated like a rank-deficient frame
    max_speed: float = DEFAULT_MAX_SPEED

    def __post_init__(self):
        if not self.speed_of_sound > 0:
            raise ValueError("speed_of_sound must be positive")
        if not 1 <= int(self.iterations) <= MAX_ITERATIONS:
            raise ValueError(f"iterations must be in [1, {MAX_ITERATIONS}]")
        if not self.gate > 0:
            raise ValueError("gate must be positive (use inf to disable)")
        if not self.max_speed > 0:
            raise ValueError("max_speed must be positive (use inf to disable)")


@dataclass
class TrackerOutput:
    """Estimated trajectory plus per-frame diagnostics (all length K).

    ``iterations`` is the number of Gauss-Newton updates applied on each
    frame (0 on frames without a usable acoustic measurement).
    """

    trajectory: SampledTrajectory
    e1: np.ndarray
    e2: np.ndarray
    confidence: np.ndarray
    snapped: np.ndarray
    velocity_held: np.ndarray
    degenerate: np.ndarray
    gated: np.ndarray
    iterations: np.ndarray

    def __len__(self) -> int:
        return len(self.trajectory)

    @property
    def positions(self) -> np.ndarray:
        return self.trajectory.positions


# --- hyperbola projection ----------------------------------------------------

def _local_frame(pair: SpeakerPair):
    s1 = np.array(pair.s1)
    s2 = np.array(pair.s2)
    mid = 0.5 * (s1 + s2)
    u = (s2 - s1) / pair.baseline
    n = np.array([-u[1], u[0]])
    return mid, u, n


def _project_batch(q: np.ndarray, target: np.ndarray, pair: SpeakerPair):
    """Closest points on ``path_difference == target`` to ``q`` (B, 2).

    Works in the speaker frame where the branch is
    ``x = sign * a * sqrt(1 + y^2 / b^2)`` and minimizes the squared
    distance over ``y`` with a safeguarded 1-D Newton iteration.
    Returns ``(points, degenerate)``; degenerate rows are returned unchanged.
    """
    q = np.asarray(q, dtype=float)
    target = np.asarray(target, dtype=float)
    half = 0.5 * pair.baseline
    degenerate = ~(np.abs(target) < pair.baseline)
    a = np.where(degenerate, 0.0, 0.5 * np.abs(target))
    sgn = np.sign(target)
    b2 = half * half - a * a
    mid, u, n = _local_frame(pair)
    dx = q[:, 0] - mid[0]
    dy = q[:, 1] - mid[1]
    qx = dx * u[0] + dy * u[1]
    qy = dx * n[0] + dy * n[1]

    def curve(y):
        s = np.sqrt(1.0 + y * y / b2)
        return sgn * a * s, sgn * a * y / (b2 * s), sgn * a / (b2 * s ** 3)

    def cost(y):
        x = curve(y)[0]
        return (x - qx) ** 2 + (y - qy) ** 2

    y = qy.copy()
    done = degenerate.copy()
    scale = np.maximum(1.0, np.sqrt(b2))
    for _ in range(_PROJECTION_ITERATIONS):
        if done.all():
            break
        x, x1, x2 = curve(y)
        g = (x - qx) * x1 + (y - qy)
        h = x1 * x1 + (x - qx) * x2 + 1.0
        # Non-positive curvature: a query on the axis beyond the vertex sits
        # at a distance maximum (g = 0), so step downhill at full size;
        # the two mirror-image minima tie and the +n side is taken.
        downhill = np.where(g > 0, -1.0, 1.0) * scale
        step = np.where(h > 0, -g / np.where(h > 0, h, 1.0), downhill)
        step = np.clip(step, -scale, scale)
        f0 = cost(y)
        # halve until the distance does not increase
        for _ in range(40):
            worse = ~done & (cost(y + step) > f0)
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
        step = np.where(done, 0.0, step)
        y = y + step
        done = done | (np.abs(step) <= 1e-14 * np.maximum(1.0, np.abs(y)))
    x = curve(y)[0]
    px = mid[0] + x * u[0] + y * n[0]
    py = mid[1] + x * u[1] + y * n[1]
    out = np.stack([px, py], axis=-1)
    # points already on the curve are fixed points of the projection
    on_curve = np.abs(path_difference(q, pair) - target) <= 1e-12
    keep = degenerate | on_curve
    return np.where(keep[:, None], q, out), degenerate


def project_onto_hyperbola(p_prev, pair: SpeakerPair, tdof: float,
                           c_s: float = DEFAULT_SPEED_OF_SOUND) -> tuple[Point2D, bool]:
    """Closest point to ``p_prev`` with path difference ``tdof * c_s``.

    Returns ``(point, degenerate)``. When ``|tdof * c_s|`` is not below the
    speaker baseline no such curve exists and ``p_prev`` comes back as-is.
    """
    q = np.asarray(p_prev, dtype=float).reshape(1, 2)
    out, degen = _project_batch(q, np.array([tdof * c_s]), pair)
    return Point2D(float(out[0, 0]), float(out[0, 1])), bool(degen[0])


# --- residuals and Gauss-Newton ----------------------------------------------

def _residuals(p, v_anchor, anchor_ok, r, links, target, conf, w: FusionWeights,
               pair: SpeakerPair | None, p_anchor=None):
    """Stacked residual (B, 5) and Jacobian (B, 5, 2) at positions ``p``.

    Rows 0-1: ``sqrt(k1) * (v_rec(p, r) - v_anchor)``.
    Row 2: ``sqrt(k2 * conf) * (path_difference(p) - target)``.
    Rows 3-4: ``sqrt(k0) * (p - p_anchor)``, zero without an anchor.
    """
    nb = p.shape[0]
    alpha, hess = steering_batch(p, links)
    v, ok = solve_velocity(alpha, r)
    dv = velocity_jacobian(alpha, hess, r, v)
    use = ok & anchor_ok
    s1 = math.sqrt(w.k1)
    e = np.zeros((nb, N_ROWS))
    jac = np.zeros((nb, N_ROWS, 2))
    e[:, 0] = np.where(use, s1 * (v[:, 0] - v_anchor[:, 0]), 0.0)
    e[:, 1] = np.where(use, s1 * (v[:, 1] - v_anchor[:, 1]), 0.0)
    jac[:, :2, :] = np.where(use[:, None, None], s1 * dv, 0.0)
    active = conf > 0
    if pair is not None and active.any():
        s2 = np.sqrt(w.k2 * np.where(active, conf, 0.0))
        d = path_difference(p, pair)
        g = _pd_gradient(p, pair)
        e[:, 2] = np.where(active, s2 * (d - np.where(active, target, 0.0)), 0.0)
        jac[:, 2, 0] = np.where(active, s2 * g[:, 0], 0.0)
        jac[:, 2, 1] = np.where(active, s2 * g[:, 1], 0.0)
    if p_anchor is not None and w.k0 > 0:
        s0 = math.sqrt(w.k0)
        e[:, 3] = s0 * (p[:, 0] - p_anchor[:, 0])
        e[:, 4] = s0 * (p[:, 1] - p_anchor[:, 1])
        jac[:, 3, 0] = s0
        jac[:, 4, 1] = s0
    return e, jac, v, ok


def _pd_gradient(p, pair: SpeakerPair) -> np.ndarray:
    d1x, d1y = p[:, 0] - pair.s1.x, p[:, 1] - pair.s1.y
    d2x, d2y = p[:, 0] - pair.s2.x, p[:, 1] - pair.s2.y
    n1 = np.hypot(d1x, d1y)
    n2 = np.hypot(d2x, d2y)
    n1 = np.where(n1 > 0, n1, np.inf)
    n2 = np.where(n2 > 0, n2, np.inf)
    return np.stack([d1x / n1 - d2x / n2, d1y / n1 - d2y / n2], axis=-1)


def _gn_delta(e: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """Damped Gauss-Newton increment for a batch of (rows x 2) systems."""
    a11 = np.zeros(e.shape[0])
    a12 = np.zeros(e.shape[0])
    a22 = np.zeros(e.shape[0])
    b1 = np.zeros(e.shape[0])
    b2 = np.zeros(e.shape[0])
    for i in range(e.shape[1]):
        jx, jy = jac[:, i, 0], jac[:, i, 1]
        a11 = a11 + jx * jx
        a12 = a12 + jx * jy
        a22 = a22 + jy * jy
        b1 = b1 + jx * e[:, i]
        b2 = b2 + jy * e[:, i]
    mu = DAMPING * (a11 + a22)
    a11 = a11 + mu
    a22 = a22 + mu
    det = a11 * a22 - a12 * a12
    good = (det > 0) & np.isfinite(det)
    safe = np.where(good, det, 1.0)
    dx = np.where(good, -(a22 * b1 - a12 * b2) / safe, 0.0)
    dy = np.where(good, -(a11 * b2 - a12 * b1) / safe, 0.0)
    step = np.stack([dx, dy], axis=-1)
    return np.where(np.isfinite(step).all(axis=-1, keepdims=True), step, 0.0)


def fusion_residuals(p, v_prior, links: Sequence[LinkGeometry], r,
                     meas: AcousticMeasurement | None, w: FusionWeights,
                     pair: SpeakerPair | None = None,
                     c_s: float = DEFAULT_SPEED_OF_SOUND, p_prior=None):
    """Weighted residual ``e`` (5,) and its Jacobian ``J`` (5, 2) at ``p``.

    Rows 0-1 compare the velocity recovered at ``p`` with ``v_prior``; row 2
    is the hyperbola misfit gated by the measurement confidence; rows 3-4
    tie ``p`` to ``p_prior`` with weight ``k0`` (zero when ``p_prior`` is
    None). Raises ``RankDeficiencyError`` if ``p`` cannot resolve a velocity.
    """
    pb = np.asarray(p, dtype=float).reshape(1, 2)
    rb = np.asarray(r, dtype=float).reshape(1, -1)
    target, conf = _measurement_arrays(meas, c_s)
    e, jac, _, ok = _residuals(pb, np.asarray(v_prior, dtype=float).reshape(1, 2),
                               np.array([True]), rb, links, target, conf, w, pair,
                               None if p_prior is None
                               else np.asarray(p_prior, dtype=float).reshape(1, 2))
    if not ok[0]:
        raise RankDeficiencyError(f"steering matrix at {tuple(pb[0])} is rank deficient")
    return e[0], jac[0]


def _measurement_arrays(meas: AcousticMeasurement | None, c_s: float):
    if meas is None or not meas.detected:
        return np.array([np.nan]), np.array([0.0])
    return np.array([meas.tdof * c_s]), np.array([meas.confidence])


def gauss_newton_step(p, e, jac) -> Point2D:
    """``p - (J^T J + mu I)^-1 J^T e`` with ``mu = DAMPING * trace(J^T J)``."""
    e = np.asarray(e, dtype=float).reshape(1, -1)
    jac = np.asarray(jac, dtype=float).reshape(1, e.shape[1], 2)
    d = _gn_delta(e, jac)[0]
    return Point2D(float(p[0] + d[0]), float(p[1] + d[1]))


# --- the per-frame update ----------------------------------------------------

@dataclass
class _Frame:
    """Batched result of one frame update."""

    position: np.ndarray
    velocity: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    snapped: np.ndarray
    held: np.ndarray
    degenerate: np.ndarray
    snap_hold: np.ndarray
    gated: np.ndarray
    refined: np.ndarray


def _tangential(v: np.ndarray, p: np.ndarray, arena: Arena) -> np.ndarray:
    vx, vy = v[:, 0], v[:, 1]
    vx = np.where(((p[:, 0] <= arena.x_min) & (vx < 0)) | ((p[:, 0] >= arena.x_max) & (vx > 0)),
                  0.0, vx)
    vy = np.where(((p[:, 1] <= arena.y_min) & (vy < 0)) | ((p[:, 1] >= arena.y_max) & (vy > 0)),
                  0.0, vy)
    return np.stack([vx, vy], axis=-1)


def _step(p, v, r, target, conf, links, w, dt, arena: Arena, pair,
          opts: "SolverOptions", prev_snap_hold: np.ndarray) -> _Frame:
    nb = p.shape[0]
    p_pred = p + v * dt
    active = conf > 0
    if pair is None or w.k2 == 0:
        active = np.zeros(nb, dtype=bool)
    degenerate = np.zeros(nb, dtype=bool)
    gated = np.zeros(nb, dtype=bool)
    p_cur = p_pred
    e2 = np.full(nb, np.nan)
    if active.any() and math.isfinite(opts.gate) and w.sigma_d > 0:
        g = _pd_gradient(p_pred, pair)
        with np.errstate(divide="ignore", invalid="ignore"):
            spread = w.sigma_d * opts.speed_of_sound / (np.hypot(g[:, 0], g[:, 1]) * np.sqrt(conf))
        gated = active & ~(spread <= opts.gate)
        active = active & ~gated
    if active.any():
        proj, degen = _project_batch(p_pred, np.where(active, target, 0.0), pair)
        degenerate = active & degen
        active = active & ~degen
        p_cur = np.where(active[:, None], proj, p_pred)
        alpha_a, _ = steering_batch(p_pred, links)
        v_anchor, anchor_ok = solve_velocity(alpha_a, r)
        conf_eff = np.where(active, conf, 0.0)
        for _ in range(opts.iterations):
            e, jac, _, _ = _residuals(p_cur, v_anchor, anchor_ok, r, links, target,
                                      conf_eff, w, pair, p_pred)
            p_cur = p_cur + _gn_delta(e, jac)
        e2 = np.where(active, np.abs(path_difference(p_cur, pair) - target), np.nan)
    else:
        v_anchor = None
    p_new = np.stack([np.clip(p_cur[:, 0], arena.x_min, arena.x_max),
                      np.clip(p_cur[:, 1], arena.y_min, arena.y_max)], axis=-1)
    snapped = (p_new != p_cur).any(axis=-1)
    alpha, _ = steering_batch(p_new, links)
    v_rec, ok = solve_velocity(alpha, r)
    ok = ok & ~(np.hypot(v_rec[:, 0], v_rec[:, 1]) > opts.max_speed)
    # a snap holds the velocity for exactly one frame
    snap_hold = snapped & ~prev_snap_hold
    held = snap_hold | ~ok
    v_next = np.where(held[:, None], v, v_rec)
    # a held velocity that would leave the arena again keeps only its
    # tangential part, so a rank-deficient boundary point cannot trap the walk
    stuck = snapped & ~snap_hold & ~ok
    v_next = np.where(stuck[:, None], _tangential(v_next, p_new, arena), v_next)
    # without an acoustic term the velocity residual is identically zero
    e1 = np.where(ok, 0.0, np.nan)
    if v_anchor is not None:
        e1 = np.where(active & ok, np.hypot(v_rec[:, 0] - v_anchor[:, 0],
                                            v_rec[:, 1] - v_anchor[:, 1]), e1)
    return _Frame(p_new, v_next, e1, e2, snapped, held, degenerate, snap_hold, gated, active)


def fuse_step(state: SolverState, r, links: Sequence[LinkGeometry],
              meas: AcousticMeasurement | None, w: FusionWeights, dt: float, arena: Arena,
              pair: SpeakerPair | None = None,
              options: SolverOptions | None = None) -> SolverState:
    """Advance ``state`` by one frame of PLCR ``r`` and optional acoustics."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    opts = options or SolverOptions()
    target, conf = _measurement_arrays(meas, opts.speed_of_sound)
    f = _step(np.array([state.position], dtype=float), np.array([state.velocity], dtype=float),
              np.asarray(r, dtype=float).reshape(1, -1), target, conf, links, w, dt, arena,
              pair, opts, np.array([state.diagnostics.snap_hold]))
    diag = StepDiagnostics(opts.iterations if f.refined[0] else 0, float(f.e1[0]),
                           float(f.e2[0]), bool(f.snapped[0]), bool(f.held[0]),
                           bool(f.degenerate[0]), bool(f.snap_hold[0]))
    last = meas if (meas is not None and meas.detected) else state.last_acoustic
    return SolverState(Point2D(*map(float, f.position[0])),
                       Velocity2D(*map(float, f.velocity[0])),
                       state.timestamp + dt, last, diag)


def initial_state(initial, r0, links: Sequence[LinkGeometry], timestamp: float = 0.0
                  ) -> SolverState:
    """Start state with the velocity recovered from the first PLCR frame."""
    p0 = np.asarray(initial, dtype=float).reshape(1, 2)
    v, ok = initial_velocity(p0, np.asarray(r0, dtype=float).reshape(1, -1), links)
    return SolverState(Point2D(*map(float, p0[0])), Velocity2D(*map(float, v[0])), timestamp,
                       diagnostics=StepDiagnostics(velocity_held=not ok[0]))


def initial_velocity(p0: np.ndarray, r0: np.ndarray, links) -> tuple[np.ndarray, np.ndarray]:
    """Velocity recovered at the start positions; zero where rank deficient."""
    alpha, _ = steering_batch(p0, links)
    v, ok = solve_velocity(alpha, r0)
    return np.where(ok[:, None], v, 0.0), ok


def track_arrays(initial: np.ndarray, plcr: np.ndarray, tdof: np.ndarray, conf: np.ndarray,
                 dt: float, links: Sequence[LinkGeometry], w: FusionWeights, arena: Arena,
                 pair: SpeakerPair | None = None,
                 options: SolverOptions | None = None) -> dict[str, np.ndarray]:
    """Run B sessions in lockstep.

    ``initial`` is (B, 2); ``plcr`` is (B, K, L), or (K, L) shared by all
    sessions; ``tdof`` and ``conf`` are (B, K) or (K,). Returns a dict of
    arrays with leading shape (B, K).
    """
    opts = options or SolverOptions()
    if not dt > 0:
        raise ValueError("dt must be positive")
    p = np.array(initial, dtype=float).reshape(-1, 2)
    nb = p.shape[0]
    plcr = np.asarray(plcr, dtype=float)
    if plcr.ndim == 2:
        plcr = np.broadcast_to(plcr, (nb,) + plcr.shape)
    if plcr.ndim != 3 or plcr.shape[0] != nb:
        raise ValueError("PLCR must be (K, L) or (B, K, L)")
    nk = plcr.shape[1]
    if nk == 0:
        raise ValueError("empty feature stream")
    if plcr.shape[2] != len(links):
        raise ValueError(f"PLCR has {plcr.shape[2]} columns but {len(links)} links were given")
    try:
        tdof = np.broadcast_to(np.asarray(tdof, dtype=float), (nb, nk))
        conf = np.broadcast_to(np.asarray(conf, dtype=float), (nb, nk))
    except ValueError:
        raise ValueError("acoustic columns do not match the PLCR stream length") from None
    if not all(arena.contains(pt) for pt in p):
        raise ValueError("initial position outside the arena")
    target = tdof * opts.speed_of_sound
    out = {name: np.zeros((nb, nk), dtype=bool)
           for name in ("snapped", "velocity_held", "degenerate", "gated", "refined")}
    pos = np.empty((nb, nk, 2))
    vel = np.empty((nb, nk, 2))
    e1 = np.empty((nb, nk))
    e2 = np.full((nb, nk), np.nan)
    v, ok = initial_velocity(p, plcr[:, 0], links)
    pos[:, 0], vel[:, 0] = p, v
    e1[:, 0] = 0.0
    out["velocity_held"][:, 0] = ~ok
    if pair is not None:
        act = conf[:, 0] > 0
        e2[:, 0] = np.where(act, np.abs(path_difference(p, pair)
                                        - np.where(act, target[:, 0], 0.0)), np.nan)
    hold = np.zeros(nb, dtype=bool)
    for k in range(1, nk):
        f = _step(p, v, plcr[:, k], target[:, k], conf[:, k], links, w, dt, arena, pair,
                  opts, hold)
        p, v, hold = f.position, f.velocity, f.snap_hold
        pos[:, k], vel[:, k] = p, v
        e1[:, k], e2[:, k] = f.e1, f.e2
        out["snapped"][:, k] = f.snapped
        out["velocity_held"][:, k] = f.held
        out["degenerate"][:, k] = f.degenerate
        out["gated"][:, k] = f.gated
        out["refined"][:, k] = f.refined
    out.update(positions=pos, velocities=vel, e1=e1, e2=e2)
    return out


def _output(features: FeatureStream, res: dict, b: int, opts: SolverOptions) -> TrackerOutput:
    traj = SampledTrajectory(features.timestamps.copy(), res["positions"][b],
                             res["velocities"][b])
    return TrackerOutput(traj, res["e1"][b], res["e2"][b], features.confidence.copy(),
                         res["snapped"][b], res["velocity_held"][b], res["degenerate"][b],
                         res["gated"][b], np.where(res["refined"][b], opts.iterations, 0))


def track(features: FeatureStream, links: Sequence[LinkGeometry], initial, w: FusionWeights,
          arena: Arena, pair: SpeakerPair | None = None,
          options: SolverOptions | None = None) -> TrackerOutput:
    """Fold :func:`fuse_step` over ``features`` from ``initial``.

    Row 0 of the output is the initial position itself. Acoustic
    measurements are used on frames with ``confidence > 0``.
    """
    opts = options or SolverOptions()
    if len(features) == 0:
        raise ValueError("empty feature stream")
    if features.n_links != len(links):
        raise ValueError("feature stream and link list differ in link count")
    res = track_arrays(np.asarray(initial, dtype=float).reshape(1, 2), features.plcr,
                       features.tdof, features.confidence, _stream_dt(features), links, w,
                       arena, pair, opts)
    return _output(features, res, 0, opts)


def track_batch(streams: Sequence[FeatureStream], links: Sequence[LinkGeometry], initials,
                w: FusionWeights, arena: Arena, pair: SpeakerPair | None = None,
                options: SolverOptions | None = None) -> list[TrackerOutput]:
    """:func:`track` for several equally long streams in one vectorized pass."""
    opts = options or SolverOptions()
    streams = list(streams)
    if not streams:
        raise ValueError("no streams given")
    if len({len(s) for s in streams}) != 1:
        raise ValueError("streams must have equal length")
    init = np.asarray(initials, dtype=float).reshape(-1, 2)
    if len(init) != len(streams):
        raise ValueError("one initial position per stream is required")
    res = track_arrays(init, np.stack([s.plcr for s in streams]),
                       np.stack([s.tdof for s in streams]),
                       np.stack([s.confidence for s in streams]),
                       _stream_dt(streams[0]), links, w, arena, pair, opts)
    return [_output(s, res, b, opts) for b, s in enumerate(streams)]


def _stream_dt(features: FeatureStream) -> float:
    return features.dt if len(features) > 1 else 1.0
