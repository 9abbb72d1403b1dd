"""Wi-Fi path-length-change-rate features.

A LoS link's PLCR is the projection of the walker's velocity on the sum of
the unit vectors from transmitter and receiver to the walker. In NLoS mode
a "link" is a receiver pair; subtracting the two receivers' rates removes
the shared transmitter-to-person leg, which leaves the difference of the
two unit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import LOS, NLOS, LinkGeometry, Point2D, Velocity2D
from .trajectory_sim import SampledTrajectory

SPEED_OF_LIGHT = 299_792_458.0
MAX_CONDITION = 1e8


class RankDeficiencyError(ValueError):
    """The steering matrix cannot resolve a 2-D velocity."""


@dataclass(frozen=True)
class WifiConfig:
    carrier_frequency: float = 5.32e9
    plcr_rate: float = 100.0
    noise_sigma_r: float = 0.0

    def __post_init__(self):
        if not self.carrier_frequency > 0:
            raise ValueError("carrier_frequency must be positive")
        if not self.plcr_rate > 0:
            raise ValueError("plcr_rate must be positive")
        if self.noise_sigma_r < 0:
            raise ValueError("noise_sigma_r must be >= 0")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency


@dataclass(frozen=True)
class SteeringMatrix:
    rows: np.ndarray

    @property
    def condition_number(self) -> float:
        s = np.linalg.svd(self.rows, compute_uv=False)
        if s.size < 2 or s[-1] == 0:
            return np.inf
        return float(s[0] / s[-1])


@dataclass
class PlcrSeries:
    timestamps: np.ndarray
    values: np.ndarray
    mode: str = LOS


def _check_endpoint(p, a: Point2D):
    if p[0] == a.x and p[1] == a.y:
        raise ValueError(f"point {tuple(p)} coincides with a link endpoint")


def _coefficients(p, link: LinkGeometry, sign: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        _check_endpoint(p, link.tx)
        _check_endpoint(p, link.rx)
    dtx, dty = p[..., 0] - link.tx.x, p[..., 1] - link.tx.y
    drx, dry = p[..., 0] - link.rx.x, p[..., 1] - link.rx.y
    dt_ = np.hypot(dtx, dty)
    dr_ = np.hypot(drx, dry)
    return np.stack([dtx / dt_ + sign * drx / dr_, dty / dt_ + sign * dry / dr_], axis=-1)


def los_coefficients(p, link: LinkGeometry) -> np.ndarray:
    """``(alpha_x, alpha_y)``: gradient of the reflection path length at ``p``."""
    return _coefficients(p, link, 1.0)


def nlos_coefficients(p, link: LinkGeometry) -> np.ndarray:
    """``(alpha_x, alpha_y)``: gradient of ``|p - rx_a| - |p - rx_b|`` at ``p``."""
    return _coefficients(p, link, -1.0)


def coefficients(p, link: LinkGeometry) -> np.ndarray:
    return los_coefficients(p, link) if link.mode == LOS else nlos_coefficients(p, link)


def _check_same_mode(links: Sequence[LinkGeometry]) -> str:
    modes = {ln.mode for ln in links}
    if len(modes) != 1:
        raise ValueError("all links must share one mode")
    return modes.pop()


def synthesize_plcr(traj: SampledTrajectory, links: Sequence[LinkGeometry],
                    cfg: WifiConfig | None = None, rng: np.random.Generator | None = None
                    ) -> PlcrSeries:
    """Per-link PLCR along ``traj``; Gaussian noise when ``cfg.noise_sigma_r > 0``.

    Samples where the walker sits exactly on a link endpoint are NaN.
    """
    cfg = cfg or WifiConfig()
    mode = _check_same_mode(links)
    values = np.empty((len(traj), len(links)))
    with np.errstate(invalid="ignore", divide="ignore"):
        for i, link in enumerate(links):
            alpha = _coefficients(traj.positions, link, 1.0 if mode == LOS else -1.0)
            values[:, i] = alpha[:, 0] * traj.velocities[:, 0] + alpha[:, 1] * traj.velocities[:, 1]
    if cfg.noise_sigma_r > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy synthesis")
        values = values + rng.normal(0.0, cfg.noise_sigma_r, size=values.shape)
    return PlcrSeries(traj.timestamps.copy(), values, mode)


def build_steering_matrix(p, links: Sequence[LinkGeometry]) -> SteeringMatrix:
    """Stack per-link coefficient rows at ``p``.

    Raises :class:`RankDeficiencyError` for fewer than two links or a
    condition number above ``MAX_CONDITION``.
    """
    _check_same_mode(links)
    rows = np.array([coefficients(p, ln) for ln in links]).reshape(len(links), 2)
    m = SteeringMatrix(rows)
    if len(links) < 2 or m.condition_number > MAX_CONDITION:
        raise RankDeficiencyError(
            f"steering matrix at {tuple(np.asarray(p))} is rank deficient "
            f"(condition {m.condition_number:.3g})")
    return m


def recover_velocity(m: SteeringMatrix, r) -> Velocity2D:
    """Least-squares velocity ``(M^T M)^-1 M^T r``."""
    a = np.asarray(m.rows, dtype=float)
    r = np.asarray(r, dtype=float).reshape(-1)
    if a.shape[0] != r.shape[0]:
        raise ValueError("PLCR vector length does not match the steering matrix")
    v, ok = solve_velocity(a, r)
    if not ok:
        raise RankDeficiencyError("singular normal equations")
    return Velocity2D(float(v[0]), float(v[1]))


def induced_velocity_sigma(links: Sequence[LinkGeometry], reference: Point2D,
                           sigma_r: float) -> float:
    """Per-axis velocity noise produced by PLCR noise ``sigma_r`` at ``reference``."""
    a = build_steering_matrix(reference, links).rows
    cov = np.linalg.inv(a.T @ a) * sigma_r ** 2
    return float(np.sqrt(np.trace(cov) / 2.0))


# --- batched kernels used by the tracker ------------------------------------
#
# All of these work on arrays with a leading batch axis and use explicit
# element-wise arithmetic (no BLAS reductions), so a state's result does not
# depend on which batch it was computed in.

def steering_batch(p: np.ndarray, links: Sequence[LinkGeometry]):
    """Coefficients ``(B, L, 2)`` and their Jacobians ``(B, L, 2, 2)``.

    The second return value holds d(alpha_i)/dp, which is symmetric.
    """
    p = np.asarray(p, dtype=float)
    nb, nl = p.shape[0], len(links)
    alpha = np.empty((nb, nl, 2))
    hess = np.empty((nb, nl, 2, 2))
    for i, link in enumerate(links):
        sign = 1.0 if link.mode == LOS else -1.0
        terms = []
        for anchor, s in ((link.tx, 1.0), (link.rx, sign)):
            dx = p[:, 0] - anchor.x
            dy = p[:, 1] - anchor.y
            d = np.hypot(dx, dy)
            d = np.where(d > 0, d, np.nan)
            ux, uy = dx / d, dy / d
            terms.append((s, ux, uy, d))
        (s1, ux1, uy1, d1), (s2, ux2, uy2, d2) = terms
        alpha[:, i, 0] = s1 * ux1 + s2 * ux2
        alpha[:, i, 1] = s1 * uy1 + s2 * uy2
        hess[:, i, 0, 0] = s1 * (1 - ux1 * ux1) / d1 + s2 * (1 - ux2 * ux2) / d2
        hess[:, i, 1, 1] = s1 * (1 - uy1 * uy1) / d1 + s2 * (1 - uy2 * uy2) / d2
        off = -s1 * ux1 * uy1 / d1 - s2 * ux2 * uy2 / d2
        hess[:, i, 0, 1] = off
        hess[:, i, 1, 0] = off
    return alpha, hess


def normal_matrix(alpha: np.ndarray):
    """Entries ``(g11, g12, g22)`` of ``A^T A`` for ``alpha`` of shape (..., L, 2)."""
    g11 = np.zeros(alpha.shape[:-2])
    g12 = np.zeros(alpha.shape[:-2])
    g22 = np.zeros(alpha.shape[:-2])
    for i in range(alpha.shape[-2]):
        ax, ay = alpha[..., i, 0], alpha[..., i, 1]
        g11 = g11 + ax * ax
        g12 = g12 + ax * ay
        g22 = g22 + ay * ay
    return g11, g12, g22


def well_conditioned(g11, g12, g22) -> np.ndarray:
    """True where cond(A) <= MAX_CONDITION, from the normal-matrix entries."""
    tr = g11 + g22
    det = g11 * g22 - g12 * g12
    disc = np.sqrt(np.maximum(tr * tr - 4 * det, 0.0))
    lmax = 0.5 * (tr + disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        lmin = np.where(lmax > 0, det / lmax, 0.0)
        ok = (lmin > 0) & (lmax <= lmin * MAX_CONDITION ** 2)
    return ok & np.isfinite(tr)


def solve_velocity(alpha: np.ndarray, r: np.ndarray):
    """Batched least-squares velocity and a well-conditioned mask.

    ``alpha`` is (..., L, 2), ``r`` broadcasts to (..., L). Entries with a
    rank-deficient steering matrix come back as NaN with ``ok == False``.
    """
    alpha = np.asarray(alpha, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), alpha.shape[:-1])
    g11, g12, g22 = normal_matrix(alpha)
    b1 = np.zeros(alpha.shape[:-2])
    b2 = np.zeros(alpha.shape[:-2])
    for i in range(alpha.shape[-2]):
        b1 = b1 + alpha[..., i, 0] * r[..., i]
        b2 = b2 + alpha[..., i, 1] * r[..., i]
    ok = well_conditioned(g11, g12, g22)
    det = g11 * g22 - g12 * g12
    with np.errstate(divide="ignore", invalid="ignore"):
        vx = np.where(ok, (g22 * b1 - g12 * b2) / det, np.nan)
        vy = np.where(ok, (g11 * b2 - g12 * b1) / det, np.nan)
    return np.stack([vx, vy], axis=-1), ok


def velocity_jacobian(alpha: np.ndarray, hess: np.ndarray, r: np.ndarray,
                      v: np.ndarray) -> np.ndarray:
    """d(v_rec)/dp, shape (B, 2, 2), for ``v_rec = (A^T A)^-1 A^T r``.

    Uses d v/dp_j = G^-1 (D_j^T (r - A v) - A^T D_j v) with
    D_j[i] = d(alpha_i)/dp_j.
    """
    r = np.broadcast_to(np.asarray(r, dtype=float), alpha.shape[:-1])
    g11, g12, g22 = normal_matrix(alpha)
    det = g11 * g22 - g12 * g12
    resid = []
    for i in range(alpha.shape[-2]):
        resid.append(r[..., i] - (alpha[..., i, 0] * v[..., 0] + alpha[..., i, 1] * v[..., 1]))
    out = np.empty(alpha.shape[:-2] + (2, 2))
    for j in range(2):
        c1 = np.zeros(alpha.shape[:-2])
        c2 = np.zeros(alpha.shape[:-2])
        for i in range(alpha.shape[-2]):
            dx, dy = hess[..., i, 0, j], hess[..., i, 1, j]
            dv = dx * v[..., 0] + dy * v[..., 1]
            c1 = c1 + dx * resid[i] - alpha[..., i, 0] * dv
            c2 = c2 + dy * resid[i] - alpha[..., i, 1] * dv
        with np.errstate(divide="ignore", invalid="ignore"):
            out[..., 0, j] = (g22 * c1 - g12 * c2) / det
            out[..., 1, j] = (g11 * c2 - g12 * c1) / det
    return out
