"""Quantum trajectories of the monitored atom and the two homodyne photocurrents.

The a posteriori state is integrated in Bloch coordinates with Euler-Maruyama,

    x <- x + (-A x + b) dt + g_1(x) dW_1 + g_2(x) dW_2,

where g_k is the Bloch image of sqrt(gamma) D[J_k] rho. Trace and hermiticity are
therefore exact. Trajectories are vectorised across a block; every trajectory
draws its noise from its own Philox stream keyed by (seed, trajectory index), so
a trajectory never depends on which block or thread ran it.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core_types import (
    SIGMA_MINUS,
    BlochVector,
    IntegrationError,
    Operator2,
    RecordMismatchError,
    as_density,
)
from .dynamics import ModelParams, bloch_affine, equilibrium, feedback_jump, liouvillian_apply
from .spectrum import SpectrumSeries, feedback_response, homodyne_response
from .tables import load_csv, write_csv

logger = logging.getLogger(__name__)

# --- Configuration ----------------------------------------------------
THREADS_ENV = "FLUORSQUEEZE_THREADS"
CHUNK_STEPS = 4096
DEFAULT_BLOCK = 512
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class SmeConfig:
    dt: float = 1e-3
    t_final: float = 10.0
    seed: int = 0
    n_traj: int = 1
    initial: str | BlochVector = "equilibrium"
    record_stride: int = 1

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def validate(self) -> "SmeConfig":
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.t_final < 100 * self.dt * (1 - 1e-12):
            raise ValueError(f"t_final must cover at least 100 steps, got {self.t_final} with dt={self.dt}")
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be >= 1, got {self.n_traj}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.record_stride < 1 or self.n_steps % self.record_stride:
            raise ValueError(f"record_stride {self.record_stride} must divide the {self.n_steps} steps")
        if isinstance(self.initial, str) and self.initial != "equilibrium":
            raise ValueError(f"initial state must be 'equilibrium' or a Bloch vector, got {self.initial!r}")
        if isinstance(self.initial, BlochVector) and not self.initial.is_valid():
            raise ValueError(f"initial Bloch vector {self.initial} lies outside the ball")
        return self

    def initial_vector(self, p: ModelParams) -> np.ndarray:
        if isinstance(self.initial, BlochVector):
            return self.initial.as_array()
        return equilibrium(p).as_array()

    def initial_label(self):
        return self.initial if isinstance(self.initial, str) else list(self.initial.as_array())


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    params: ModelParams
    seed: int
    traj_index: int
    dt: float
    record_stride: int
    initial: object
    times: np.ndarray  # (n + 1,)
    states: np.ndarray  # (n + 1, 3), state at each recorded time
    dy: np.ndarray  # (n, 2), current increments over [times[i], times[i + 1]]
    projections: int = 0
    max_violation: float = 0.0

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def signal(self, channel: int) -> np.ndarray:
        """sqrt(gamma)|alpha_k| Tr[sigma_theta rho_t] dt at the start of each recorded step."""
        p = self.params
        theta = p.theta(channel)
        amp = math.sqrt(p.gamma * p.fraction(channel))
        x = self.states[:-1]
        return amp * (x[:, 0] * math.cos(theta) + x[:, 1] * math.sin(theta)) * self.dt * self.record_stride

    def noise(self, channel: int) -> np.ndarray:
        """Wiener increments recovered by removing the signal (exact for stride 1)."""
        return self.dy[:, channel - 1] - self.signal(channel)

    def to_frame(self) -> pd.DataFrame:
        dy = np.vstack([self.dy, np.full((1, 2), np.nan)])
        return pd.DataFrame(
            {
                "t": self.times,
                "x": self.states[:, 0],
                "y": self.states[:, 1],
                "z": self.states[:, 2],
                "dY1": dy[:, 0],
                "dY2": dy[:, 1],
            }
        )

    def header(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "seed": self.seed,
            "traj_index": self.traj_index,
            "dt": self.dt,
            "record_stride": self.record_stride,
            "initial": self.initial,
            "projections": self.projections,
            "max_violation": self.max_violation,
        }


def random_stream(seed: int, traj_index: int) -> np.random.Generator:
    """Independent counter-based stream for one trajectory."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(traj_index,))))


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


# ---------------------------------------------------------------------
# Drift and diffusion
# ---------------------------------------------------------------------


def measurement_superop(a: Operator2, rho: Operator2) -> Operator2:
    """D[a] rho = a rho + rho a^+ - rho Tr[(a + a^+) rho]."""
    ad = a.conj().T
    return a @ rho + rho @ ad - rho * np.trace((a + ad) @ rho)


def sme_drift_diffusion(p: ModelParams, rho) -> tuple[Operator2, Operator2, Operator2]:
    r = as_density(rho).matrix
    sq = math.sqrt(p.gamma)
    alpha2 = p.alpha2 * np.exp(1j * p.theta2)
    drift = liouvillian_apply(p, r)
    diff1 = sq * measurement_superop(feedback_jump(p), r)
    diff2 = sq * measurement_superop(alpha2 * SIGMA_MINUS, r)
    return drift, diff1, diff2


def bloch_diffusion(p: ModelParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Bloch images of the two diffusion terms for one or many states."""
    sq = math.sqrt(p.gamma)
    g1 = sq * (p.alpha1 * homodyne_response(x, p.theta1) + 2.0 * p.c * feedback_response(x, p.phi))
    g2 = sq * p.alpha2 * homodyne_response(x, p.theta2)
    return g1, g2


# ---------------------------------------------------------------------
# Block integrator
# ---------------------------------------------------------------------


class _RecordSink:
    def __init__(self, n: int, n_steps: int, stride: int):
        self.stride = stride
        n_rec = n_steps // stride
        # trajectory-major, so each record is a contiguous view
        self.states = np.empty((n, n_rec + 1, 3))
        self.dy = np.empty((n, n_rec, 2))

    def consume(self, step0: int, states: np.ndarray, dy: np.ndarray):
        s = self.stride
        r0 = step0 // s
        m = len(dy) // s
        self.states[:, r0 : r0 + m] = states[::s].transpose(1, 0, 2)
        self.dy[:, r0 : r0 + m] = dy.reshape(m, s, *dy.shape[1:]).sum(axis=1).transpose(1, 0, 2)

    def finish(self, final: np.ndarray):
        self.states[:, -1] = final


class _FourierSink:
    def __init__(self, n: int, dt: float, mus: np.ndarray, channels):
        self.dt = dt
        self.mus = np.asarray(mus, dtype=float)
        self.channels = tuple(channels)
        self.re = {k: np.zeros((n, len(self.mus))) for k in self.channels}
        self.im = {k: np.zeros((n, len(self.mus))) for k in self.channels}

    def consume(self, step0: int, states: np.ndarray, dy: np.ndarray):
        t = (step0 + np.arange(len(dy))) * self.dt
        arg = np.outer(t, self.mus)
        cos, sin = np.cos(arg), np.sin(arg)
        for k in self.channels:
            d = dy[:, :, k - 1].T
            self.re[k] += d @ cos
            self.im[k] += d @ sin

    def finish(self, final: np.ndarray):
        pass

    def sums(self, channel: int) -> np.ndarray:
        return self.re[channel] + 1j * self.im[channel]


def _integrate_block(p: ModelParams, cfg: SmeConfig, indices, sink) -> tuple[np.ndarray, np.ndarray]:
    """Run trajectories ``indices`` in lockstep, feeding chunks to ``sink``.

    Returns per-trajectory projection counts and largest pre-projection norm excess.
    """
    n = len(indices)
    dt = cfg.dt
    sqdt = math.sqrt(dt)
    n_steps = cfg.n_steps
    streams = [random_stream(cfg.seed, int(i)) for i in indices]

    aff = bloch_affine(p)
    (a11, a12, _), (a21, a22, a23), (_, a32, a33) = np.asarray(aff.A).tolist()
    bz = float(aff.b[2])
    sq = math.sqrt(p.gamma)
    k1, k2, kf = sq * p.alpha1, sq * p.alpha2, sq * 2.0 * p.c
    c1, s1 = math.cos(p.theta1), math.sin(p.theta1)
    c2, s2 = math.cos(p.theta2), math.sin(p.theta2)
    cp, sp = math.cos(p.phi), math.sin(p.phi)

    x0 = cfg.initial_vector(p)
    x = np.full(n, x0[0])
    y = np.full(n, x0[1])
    z = np.full(n, x0[2])
    projections = np.zeros(n, dtype=np.int64)
    violation = np.zeros(n)

    chunk = max(cfg.record_stride, (CHUNK_STEPS // cfg.record_stride) * cfg.record_stride)
    step = 0
    while step < n_steps:
        m = min(chunk, n_steps - step)
        noise = np.stack([g.standard_normal((m, 2)) for g in streams], axis=1) * sqdt
        states = np.empty((m, n, 3))
        dy = np.empty((m, n, 2))
        for j in range(m):
            states[j, :, 0] = x
            states[j, :, 1] = y
            states[j, :, 2] = z
            dw1 = noise[j, :, 0]
            dw2 = noise[j, :, 1]

            sig1 = x * c1 + y * s1
            sig2 = x * c2 + y * s2
            dy[j, :, 0] = k1 * sig1 * dt + dw1
            dy[j, :, 1] = k2 * sig2 * dt + dw2

            # bloch_diffusion expanded inline for the scalar-per-trajectory step
            opz = 1.0 + z
            xx, yy, xy = x * x, y * y, x * y
            g1x = k1 * ((opz - xx) * c1 - xy * s1) + kf * (z * sp)
            g1y = k1 * ((opz - yy) * s1 - xy * c1) - kf * (z * cp)
            g1z = -k1 * opz * sig1 + kf * (y * cp - x * sp)
            g2x = k2 * ((opz - xx) * c2 - xy * s2)
            g2y = k2 * ((opz - yy) * s2 - xy * c2)
            g2z = -k2 * opz * sig2

            fx = -(a11 * x + a12 * y)
            fy = -(a21 * x + a22 * y + a23 * z)
            fz = bz - (a32 * y + a33 * z)

            x = x + fx * dt + g1x * dw1 + g2x * dw2
            y = y + fy * dt + g1y * dw1 + g2y * dw2
            z = z + fz * dt + g1z * dw1 + g2z * dw2

            norm = np.sqrt(x * x + y * y + z * z)
            if not np.all(np.isfinite(norm)):
                bad = int(np.flatnonzero(~np.isfinite(norm))[0])
                raise IntegrationError(
                    f"non-finite state in trajectory {indices[bad]} at step {step + j + 1} (t={(step + j + 1) * dt:.6g})"
                )
            over = norm > 1.0
            if over.any():
                projections += over
                violation = np.maximum(violation, np.where(over, norm - 1.0, 0.0))
                scale = np.where(over, norm, 1.0)
                x, y, z = x / scale, y / scale, z / scale
        sink.consume(step, states, dy)
        step += m
    sink.finish(np.stack([x, y, z], axis=1))
    return projections, violation


def _blocks(n_traj: int, block_size: int):
    return [list(range(i, min(i + block_size, n_traj))) for i in range(0, n_traj, block_size)]


def _run_record_block(p: ModelParams, cfg: SmeConfig, indices) -> list[TrajectoryRecord]:
    sink = _RecordSink(len(indices), cfg.n_steps, cfg.record_stride)
    projections, violation = _integrate_block(p, cfg, indices, sink)
    n_rec = cfg.n_steps // cfg.record_stride
    times = np.arange(n_rec + 1) * (cfg.dt * cfg.record_stride)
    records = []
    for j, idx in enumerate(indices):
        records.append(
            TrajectoryRecord(
                params=p,
                seed=cfg.seed,
                traj_index=int(idx),
                dt=cfg.dt,
                record_stride=cfg.record_stride,
                initial=cfg.initial_label(),
                times=times,
                states=sink.states[j],
                dy=sink.dy[j],
                projections=int(projections[j]),
                max_violation=float(violation[j]),
            )
        )
    return records


def simulate_trajectory(p: ModelParams, cfg: SmeConfig, traj_index: int) -> TrajectoryRecord:
    cfg.validate()
    return _run_record_block(p, cfg, [traj_index])[0]


def simulate_ensemble(
    p: ModelParams,
    cfg: SmeConfig,
    workers: int | None = None,
    block_size: int = DEFAULT_BLOCK,
) -> list[TrajectoryRecord]:
    """All ``cfg.n_traj`` trajectories, ordered by index."""
    cfg.validate()
    blocks = _blocks(cfg.n_traj, block_size)
    workers = min(resolve_workers(workers), len(blocks))
    logger.info("Simulating %d trajectories (%d steps, %d threads) ...", cfg.n_traj, cfg.n_steps, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda idx: _run_record_block(p, cfg, idx), blocks))
    records = [r for block in results for r in block]
    total = sum(r.projections for r in records)
    if total:
        logger.warning("Projected %d states back onto the Bloch ball", total)
    return records


# ---------------------------------------------------------------------
# Spectrum estimation
# ---------------------------------------------------------------------


def fourier_sums(record: TrajectoryRecord, channel: int, mus) -> np.ndarray:
    """F(mu) = sum_i exp(i mu t_i) dY_i over the recorded steps."""
    mus = np.asarray(mus, dtype=float)
    t = record.times[:-1]
    d = record.dy[:, channel - 1]
    out = np.zeros(len(mus), dtype=complex)
    for start in range(0, len(t), CHUNK_STEPS):
        arg = np.outer(t[start : start + CHUNK_STEPS], mus)
        seg = d[start : start + CHUNK_STEPS]
        out += seg @ np.cos(arg) + 1j * (seg @ np.sin(arg))
    return out


def _estimate_from_sums(F: np.ndarray, duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased complex variance of F over trajectories / T, with jackknife errors."""
    n = F.shape[0]
    dev = F - F.mean(axis=0)
    sq = np.abs(dev) ** 2
    total = sq.sum(axis=0)
    estimate = total / ((n - 1) * duration)
    if n < 3:
        return estimate, np.full_like(estimate, np.nan)
    loo = (total[None, :] - sq * n / (n - 1)) / ((n - 2) * duration)
    spread = loo - loo.mean(axis=0)
    stderr = np.sqrt((n - 1) / n * np.sum(spread * spread, axis=0))
    return estimate, stderr


def _check_records(records) -> TrajectoryRecord:
    if len(records) < 2:
        raise RecordMismatchError(f"need at least 2 trajectory records, got {len(records)}")
    ref = records[0]
    for r in records[1:]:
        if r.params != ref.params:
            raise RecordMismatchError(f"trajectory {r.traj_index} was simulated with different parameters")
        if r.dt != ref.dt or r.record_stride != ref.record_stride or not np.array_equal(r.times, ref.times):
            raise RecordMismatchError(f"trajectory {r.traj_index} has a different time grid")
    if ref.initial != "equilibrium":
        logger.warning("Records do not start at the stationary state; the estimate includes the transient")
    return ref


def estimate_spectrum(records, channel: int, mus) -> SpectrumSeries:
    ref = _check_records(records)
    mus = np.asarray(mus, dtype=float)
    F = np.vstack([fourier_sums(r, channel, mus) for r in records])
    estimate, stderr = _estimate_from_sums(F, ref.duration)
    return SpectrumSeries(
        channel=channel,
        mu=mus,
        S=estimate,
        stderr=stderr,
        kind="monte_carlo",
        meta={"n_traj": len(records), "duration": ref.duration, "dt": ref.dt},
    )


def ensemble_spectrum(
    p: ModelParams,
    cfg: SmeConfig,
    channel: int,
    mus,
    workers: int | None = None,
    block_size: int = DEFAULT_BLOCK,
) -> SpectrumSeries:
    """Same estimator as ``estimate_spectrum``, folding each block into Fourier sums
    without keeping the trajectories."""
    cfg.validate()
    if cfg.n_traj < 2:
        raise RecordMismatchError("need at least 2 trajectories")
    mus = np.asarray(mus, dtype=float)
    blocks = _blocks(cfg.n_traj, block_size)

    def run(indices):
        sink = _FourierSink(len(indices), cfg.dt, mus, (channel,))
        projections, _ = _integrate_block(p, cfg, indices, sink)
        return sink.sums(channel), int(projections.sum())

    workers = min(resolve_workers(workers), len(blocks))
    logger.info("Estimating S_%d from %d trajectories (%d threads) ...", channel, cfg.n_traj, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, blocks))
    F = np.vstack([r[0] for r in results])
    estimate, stderr = _estimate_from_sums(F, cfg.n_steps * cfg.dt)
    return SpectrumSeries(
        channel=channel,
        mu=mus,
        S=estimate,
        stderr=stderr,
        kind="monte_carlo",
        meta={
            "n_traj": cfg.n_traj,
            "duration": cfg.n_steps * cfg.dt,
            "dt": cfg.dt,
            "projections": sum(r[1] for r in results),
        },
    )


def ensemble_mean(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Times, mean Bloch vector and its standard error across trajectories."""
    stack = np.stack([r.states for r in records])
    n = stack.shape[0]
    mean = stack.mean(axis=0)
    stderr = stack.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full_like(mean, np.nan)
    return records[0].times, mean, stderr


# ---------------------------------------------------------------------
# Record files
# ---------------------------------------------------------------------


def record_filename(traj_index: int) -> str:
    return f"traj_{traj_index:06d}.csv"


def write_record(record: TrajectoryRecord, path: Path) -> Path:
    return write_csv(record.to_frame(), path, record.header(), title="fluorsqueeze trajectory record")


def read_record(path: Path) -> TrajectoryRecord:
    df, meta = load_csv(path)
    missing = {"params", "seed", "traj_index", "dt", "record_stride", "initial"} - set(meta)
    if missing:
        raise RecordMismatchError(f"{Path(path).name}: header lacks {sorted(missing)}")
    try:
        return TrajectoryRecord(
            params=ModelParams(**meta["params"]),
            seed=int(meta["seed"]),
            traj_index=int(meta["traj_index"]),
            dt=float(meta["dt"]),
            record_stride=int(meta["record_stride"]),
            initial=meta["initial"],
            times=df["t"].to_numpy(dtype=float),
            states=df[["x", "y", "z"]].to_numpy(dtype=float),
            dy=df[["dY1", "dY2"]].to_numpy(dtype=float)[:-1],
            projections=int(meta.get("projections", 0)),
            max_violation=float(meta.get("max_violation", 0.0)),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise RecordMismatchError(f"{Path(path).name}: unreadable record ({exc})") from exc


def file_checksum(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()