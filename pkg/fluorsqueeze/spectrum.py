"""Homodyne incoherent spectrum S_k(mu) of the two side channels.

S_k(mu) = 1 + 2 gamma |alpha_k|^2 (A (A^2 + mu^2)^-1 t_k) . s_k
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .core_types import (
    PAULI,
    SIGMA_MINUS,
    SIGMA_PLUS,
    TOLERANCES,
    BlochVector,
    QuadratureError,
    SingularMatrixError,
    UnstableDynamicsError,
    Vec3,
    rho_from_bloch,
    sigma_phi,
)
from .dynamics import ModelParams, _check_channel, bloch_affine, equilibrium

logger = logging.getLogger(__name__)

# --- Configuration ----------------------------------------------------
DEFAULT_MU_HALF_WIDTH = 8.0  # in units of gamma
DEFAULT_MU_POINTS = 801
ORACLE_ENVELOPE = 1e-12
ORACLE_MAX_ERROR = 1e-8
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectrumSeries:
    channel: int
    mu: np.ndarray
    S: np.ndarray
    stderr: np.ndarray | None = None
    kind: str = "analytic"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.mu)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"mu": self.mu, "S": self.S})
        if self.stderr is not None:
            df["stderr"] = self.stderr
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame, channel: int, kind: str = "analytic", meta=None):
        stderr = df["stderr"].to_numpy(dtype=float) if "stderr" in df.columns else None
        return cls(
            channel=channel,
            mu=df["mu"].to_numpy(dtype=float),
            S=df["S"].to_numpy(dtype=float),
            stderr=stderr,
            kind=kind,
            meta=dict(meta or {}),
        )

    def asymmetry(self) -> float:
        """max |S(mu) - S(-mu)| on a grid symmetric about zero."""
        return float(np.max(np.abs(self.S - self.S[::-1])))


# ---------------------------------------------------------------------
# t and s vectors
# ---------------------------------------------------------------------


def homodyne_response(x, theta: float) -> np.ndarray:
    """Channel response without the feedback correction, for one or many Bloch points.

    Rows of ``x`` are Bloch vectors; the result has the same shape.
    """
    x = np.asarray(x, dtype=float)
    bx, by, bz = x[..., 0], x[..., 1], x[..., 2]
    ct, st = math.cos(theta), math.sin(theta)
    return np.stack(
        [
            (1.0 + bz - bx * bx) * ct - bx * by * st,
            (1.0 + bz - by * by) * st - bx * by * ct,
            -(1.0 + bz) * (bx * ct + by * st),
        ],
        axis=-1,
    )


def feedback_response(x, phi: float) -> np.ndarray:
    """(z sin phi, -z cos phi, -x sin phi + y cos phi), the rotation added by the loop."""
    x = np.asarray(x, dtype=float)
    bx, by, bz = x[..., 0], x[..., 1], x[..., 2]
    cp, sp = math.cos(phi), math.sin(phi)
    return np.stack([bz * sp, -bz * cp, -bx * sp + by * cp], axis=-1)


def _x_eq(p: ModelParams, x_eq) -> BlochVector:
    if x_eq is None:
        return equilibrium(p)
    if isinstance(x_eq, BlochVector):
        return x_eq
    return BlochVector.from_array(x_eq)


def t_vector(p: ModelParams, channel: int, x_eq: BlochVector | None = None) -> Vec3:
    channel = _check_channel(channel)
    x = _x_eq(p, x_eq).as_array()
    t = homodyne_response(x, p.theta(channel))
    if channel == 1:
        if p.alpha1 == 0:
            raise ValueError("t_1 is undefined for |alpha_1| = 0")
        t = t + (2.0 * p.c / p.alpha1) * feedback_response(x, p.phi)
    return t


def t_vector_trace(p: ModelParams, channel: int, x_eq: BlochVector | None = None) -> Vec3:
    """Same vector, evaluated from the operator trace expression."""
    channel = _check_channel(channel)
    rho = rho_from_bloch(_x_eq(p, x_eq)).matrix
    theta = p.theta(channel)
    mean = np.real(np.trace(sigma_phi(theta) @ rho))
    op = np.exp(1j * theta) * SIGMA_MINUS @ rho + np.exp(-1j * theta) * rho @ SIGMA_PLUS - mean * rho
    if channel == 1:
        if p.alpha1 == 0:
            raise ValueError("t_1 is undefined for |alpha_1| = 0")
        sp = sigma_phi(p.phi)
        op = op + 1j * (p.c / p.alpha1) * (rho @ sp - sp @ rho)
    return np.array([np.real(np.trace(op @ s)) for s in PAULI])


def s_vector(theta: float) -> Vec3:
    return np.array([math.cos(theta), math.sin(theta), 0.0])


# ---------------------------------------------------------------------
# Analytic spectrum
# ---------------------------------------------------------------------


def _require_stable(A) -> np.ndarray:
    eigs = np.linalg.eigvals(A)
    if not np.all(eigs.real > 0.0):
        raise UnstableDynamicsError(f"drift matrix has eigenvalues {np.round(eigs, 6)}")
    return eigs


def spectrum_value(p: ModelParams, channel: int, mu):
    """S_k at one frequency (float) or at an array of frequencies (ndarray)."""
    channel = _check_channel(channel)
    mus = np.atleast_1d(np.asarray(mu, dtype=float))
    frac = p.fraction(channel)
    if frac == 0:
        values = np.ones_like(mus)
        return values if np.ndim(mu) else float(values[0])

    aff = bloch_affine(p)
    A = np.asarray(aff.A)
    _require_stable(A)
    t = t_vector(p, channel)
    s = s_vector(p.theta(channel))

    mats = (A @ A)[None, :, :] + (mus * mus)[:, None, None] * np.eye(3)[None, :, :]
    conds = np.linalg.cond(mats)
    if not np.all(np.isfinite(conds)) or np.any(conds > TOLERANCES["condition_limit"]):
        raise SingularMatrixError("A^2 + mu^2 is singular on the requested grid")
    y = np.linalg.solve(mats, np.broadcast_to(t, mus.shape + (3,))[..., None])[..., 0]
    values = 1.0 + 2.0 * p.gamma * frac * ((y @ A.T) @ s)

    if np.any(values < TOLERANCES["positivity_warning"]):
        logger.warning("Negative spectrum value %.3e on channel %d", values.min(), channel)
    return values if np.ndim(mu) else float(values[0])


def spectrum_scan(p: ModelParams, channel: int, mu_min: float, mu_max: float, points: int) -> SpectrumSeries:
    if points < 2:
        raise ValueError(f"need at least 2 grid points, got {points}")
    if not mu_min < mu_max:
        raise ValueError(f"empty frequency range [{mu_min}, {mu_max}]")
    grid = np.linspace(mu_min, mu_max, points)
    values = spectrum_value(p, channel, grid)
    return SpectrumSeries(channel=channel, mu=grid, S=values, meta={"params": p.as_dict()})


def default_scan(p: ModelParams, channel: int) -> SpectrumSeries:
    w = DEFAULT_MU_HALF_WIDTH * p.gamma
    return spectrum_scan(p, channel, -w, w, DEFAULT_MU_POINTS)


def phase_spread(p: ModelParams, channel: int, mus, phases: int = 8) -> float:
    """Largest spread of S over equispaced local-oscillator phases."""
    field_name = "theta1" if channel == 1 else "theta2"
    rows = [
        spectrum_value(p.replace(**{field_name: -math.pi + 2.0 * math.pi * k / phases}), channel, mus)
        for k in range(phases)
    ]
    rows = np.vstack(rows)
    return float(np.max(rows.max(axis=0) - rows.min(axis=0)))


# ---------------------------------------------------------------------
# Quadrature oracle
# ---------------------------------------------------------------------


def _truncation_time(A, t) -> float:
    eigs, vecs = np.linalg.eig(A)
    rate = float(np.min(eigs.real))
    kappa = np.linalg.cond(vecs)
    if not np.isfinite(kappa):
        kappa = 1e6
    scale = max(1.0, float(np.linalg.norm(t))) * max(1.0, float(kappa))
    return math.log(scale / ORACLE_ENVELOPE) / rate


def spectrum_quadrature_oracle(p: ModelParams, channel: int, mu):
    """Independent evaluation through 1 + 2 gamma |alpha|^2 int_0^inf cos(mu tau) (e^{-A tau} t).s dtau."""
    channel = _check_channel(channel)
    mus = np.atleast_1d(np.asarray(mu, dtype=float))
    frac = p.fraction(channel)
    if frac == 0:
        values = np.ones_like(mus)
        return values if np.ndim(mu) else float(values[0])

    A = np.asarray(bloch_affine(p).A)
    _require_stable(A)
    t = t_vector(p, channel)
    s = s_vector(p.theta(channel))

    def envelope(tau):
        return float(s @ (expm(-A * tau) @ t))

    horizon = _truncation_time(A, t)
    for _ in range(20):
        if abs(envelope(horizon)) < ORACLE_ENVELOPE and np.linalg.norm(expm(-A * horizon) @ t) < ORACLE_ENVELOPE:
            break
        horizon *= 2.0
    else:
        raise QuadratureError(f"integrand envelope does not decay below {ORACLE_ENVELOPE}")

    def integrand(tau):
        return np.cos(mus * tau) * envelope(tau)

    integral, err, info = quad_vec(
        integrand, 0.0, horizon, epsabs=1e-10, epsrel=1e-10, norm="max", limit=20000, full_output=True
    )
    if info.status != 0 or not np.isfinite(err) or err > ORACLE_MAX_ERROR:
        raise QuadratureError(f"quadrature did not converge (status {info.status}, error {err:.3e})")
    values = 1.0 + 2.0 * p.gamma * frac * np.asarray(integral)
    return values if np.ndim(mu) else float(values[0])


# ---------------------------------------------------------------------
# Extrema
# ---------------------------------------------------------------------


def _parabola(h: float, ym: float, y0: float, yp: float) -> tuple[float, float]:
    """Offset and value of the vertex through three equispaced samples."""
    denom = ym - 2.0 * y0 + yp
    if denom == 0.0:
        return 0.0, y0
    offset = 0.5 * h * (ym - yp) / denom
    offset = max(-h, min(h, offset))
    return offset, y0 - (ym - yp) ** 2 / (8.0 * denom)


def _refine(mu: np.ndarray, S: np.ndarray, i: int) -> tuple[float, float]:
    if 0 < i < len(mu) - 1:
        h = mu[i + 1] - mu[i]
        offset, value = _parabola(h, S[i - 1], S[i], S[i + 1])
        return float(mu[i] + offset), float(value)
    return float(mu[i]), float(S[i])


def _local_extrema(S: np.ndarray, sign: float) -> list[int]:
    v = sign * S
    idx = []
    for i in range(len(v)):
        left = v[i - 1] if i > 0 else np.inf
        right = v[i + 1] if i < len(v) - 1 else np.inf
        if v[i] <= left and v[i] <= right and (v[i] < left or v[i] < right or len(v) == 1):
            idx.append(i)
    return idx


def locate_extrema(series: SpectrumSeries, rel_tol: float = 1e-9) -> dict:
    """Parabolically refined extrema of a series.

    Returns ``global_minima`` (list of (mu, S) sharing the lowest value, ordered by
    |mu| then mu), ``local_minima`` and ``local_maxima``.
    """
    mu, S = np.asarray(series.mu), np.asarray(series.S)
    minima = [_refine(mu, S, i) for i in _local_extrema(S, 1.0)]
    maxima = [_refine(mu, S, i) for i in _local_extrema(S, -1.0)]
    if not minima:  # flat series
        minima = [_refine(mu, S, int(np.argmin(S)))]
    key = lambda pair: (abs(pair[0]), pair[0])
    lowest = min(v for _, v in minima)
    tol = rel_tol * max(1.0, abs(lowest))
    glob = sorted((m for m in minima if m[1] <= lowest + tol), key=key)
    return {
        "global_minima": glob,
        "local_minima": sorted(minima, key=key),
        "local_maxima": sorted(maxima, key=key),
    }


def refined_minimum(
    p: ModelParams,
    channel: int,
    half_width: float | None = None,
    points: int = DEFAULT_MU_POINTS,
) -> tuple[float, float]:
    """(mu*, S(mu*)) for the lowest point of the spectrum.

    S is even, so only mu >= 0 is sampled; the refined location is evaluated
    exactly and kept only if it beats the best grid value. Ties go to smaller |mu|.
    """
    half_width = DEFAULT_MU_HALF_WIDTH * p.gamma if half_width is None else half_width
    grid = np.linspace(0.0, half_width, points // 2 + 1)
    values = spectrum_value(p, channel, grid)
    i = int(np.argmin(values))
    best_mu, best_val = float(grid[i]), float(values[i])
    if len(grid) > 1:
        h = grid[1] - grid[0]
        if i == 0:
            # mirror image S(-h) = S(h): the vertex sits at zero
            return best_mu, best_val
        if i < len(grid) - 1:
            offset, _ = _parabola(h, values[i - 1], values[i], values[i + 1])
            cand = float(grid[i] + offset)
            cand_val = spectrum_value(p, channel, cand)
            if cand_val < best_val:
                best_mu, best_val = cand, cand_val
    return best_mu, best_val
