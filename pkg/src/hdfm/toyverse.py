"""2D spiral buried in D dimensions: data, embedding, corruption and fidelity metrics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .neural import Head, MlpConfig, MlpModel, TrainConfig, batch_stream, train
from .path import NoiseConfig, PathKind, PathSample, sample_path
from .sampler import SamplerConfig, sample
from .spectral import HeatSchedule, eigen_grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpiralSpec:
    """Archimedean spiral ``r = r0 + growth * theta`` for ``theta`` in ``[0, theta_max]``."""

    r0: float = 0.1
    growth: float = 0.08
    theta_max: float = 4 * np.pi
    jitter: float = 0.01
    n_samples: int = 10_000

    def curve(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        r = self.r0 + self.growth * theta
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def sample(self, seed: int, n: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        n = self.n_samples if n is None else n
        theta = rng.uniform(0.0, self.theta_max, n)
        return self.curve(theta) + self.jitter * rng.standard_normal((n, 2))

    def dense(self, n: int = 10_000) -> np.ndarray:
        return self.curve(np.linspace(0.0, self.theta_max, n))


@dataclass(frozen=True)
class Embedding:
    P: np.ndarray

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def embed(self, xhat) -> np.ndarray:
        return np.asarray(xhat) @ self.P.T

    def project(self, x) -> np.ndarray:
        return np.asarray(x) @ self.P

    def offplane(self, x) -> np.ndarray:
        """Norm of the component orthogonal to the data plane, per sample."""
        x = np.asarray(x)
        return np.linalg.norm(x - self.embed(self.project(x)), axis=-1)


def make_embedding(D: int, seed: int) -> Embedding:
    """Column-orthonormal ``D x 2`` matrix from a seeded Gaussian (QR)."""
    if D < 2:
        raise ValueError(f"ambient dimension must be >= 2, got {D}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((D, 2)))
    q = q * np.sign(np.diag(r))  # unique sign convention
    return Embedding(q)


def toy_schedule(D: int, blur_strength: float = 1.0, t_floor: float = 1e-4, s_eps: float = 1e-3) -> HeatSchedule:
    """Heat schedule on a 1D feature axis of length ``D``."""
    return HeatSchedule(eigen_grid((D,), blur_strength), t_floor, s_eps)


def toy_corruption(x, t, e, sched: HeatSchedule) -> PathSample:
    """HDFM path sample for ``D``-vectors, blurred along the feature axis."""
    return sample_path(x, t, e, sched, PathKind.HDFM)


def _nearest_distance(points: np.ndarray, curve: np.ndarray, chunk: int = 512) -> np.ndarray:
    out = np.empty(points.shape[0])
    c2 = np.sum(curve**2, axis=1)
    for i in range(0, points.shape[0], chunk):
        p = points[i : i + chunk]
        d2 = np.sum(p**2, axis=1)[:, None] - 2 * p @ curve.T + c2[None, :]
        out[i : i + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


def manifold_metrics(samples, emb: Embedding, spiral: SpiralSpec, n_dense: int = 10_000) -> tuple[float, float]:
    """(mean off-plane residual, mean 2D distance to the noiseless spiral)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] == 0:
        raise ValueError("need at least one sample")
    off = float(np.mean(emb.offplane(samples)))
    dist = float(np.mean(_nearest_distance(emb.project(samples), spiral.dense(n_dense))))
    return off, dist


@dataclass
class ToyRow:
    D: int
    head: str
    seed: int
    mean_offplane: float
    mean_spiral_dist: float
    final_loss: float
    wall_seconds: float
    scatter: np.ndarray = field(repr=False, default=None)


def default_toy_steps(D: int) -> int:
    """Training steps per ambient dimension.

    D = 2 needs long training to resolve the spiral arms. The off-plane
    comparison at higher D separates within a couple of thousand steps, and a
    512-point DCT makes each step there about ten times dearer.
    """
    if D <= 2:
        return 10_000
    if D <= 16:
        return 2_000
    return 1_200


def default_toy_train(D: int = 2) -> TrainConfig:
    return TrainConfig(lr=2e-3, batch_size=256, steps=default_toy_steps(D), lr_schedule="cosine", loss_s_min=0.05, log_every=500)


def default_toy_sampler() -> SamplerConfig:
    return SamplerConfig(steps=50, solver="euler", beta_mode="fixed", beta=1.0, cfg_scale=1.0)


def run_toy_cell(
    D: int,
    head: Head,
    seed: int,
    train_cfg: TrainConfig,
    sampler_cfg: SamplerConfig,
    spiral: SpiralSpec = SpiralSpec(),
    hidden: int = 128,
    depth: int = 5,
    n_samples: int = 2000,
) -> ToyRow:
    """Train one (D, head) model and measure its samples."""
    start = time.perf_counter()
    head = Head(head)
    emb = make_embedding(D, seed)
    data = emb.embed(spiral.sample(seed))
    sched = toy_schedule(D)
    model = MlpModel(MlpConfig(field_shape=(D,), hidden=hidden, depth=depth, head=head, seed=seed, dtype="float32"))
    rng = np.random.default_rng(seed + 1000)
    stream = batch_stream(data, sched, train_cfg.batch_size, rng, PathKind.HDFM, NoiseConfig(sampler_cfg.sigma))
    result = train(model, stream, replace(train_cfg, seed=seed), sched)
    final_loss = result.curve[-1][1] if result.curve else float("nan")
    samples, _ = sample(model, replace(sampler_cfg, seed=seed + 2000), sched, (D,), n=n_samples)
    off, dist = manifold_metrics(samples, emb, spiral)
    wall = time.perf_counter() - start
    log.info("D=%d head=%s seed=%d offplane=%.4g spiral=%.4g (%.1fs)", D, head.value, seed, off, dist, wall)
    return ToyRow(D, head.value, seed, off, dist, final_loss, wall, emb.project(samples))


def run_toy_comparison(
    dims: Sequence[int],
    heads: Sequence[Head],
    seeds: Sequence[int],
    train_cfg: TrainConfig | None = None,
    sampler_cfg: SamplerConfig | None = None,
    **kwargs,
) -> list[ToyRow]:
    """One row per (D, head, seed). Without ``train_cfg`` each D gets :func:`default_toy_train`."""
    sampler_cfg = sampler_cfg or default_toy_sampler()
    rows = []
    for D in dims:
        cfg = train_cfg or default_toy_train(D)
        for head in heads:
            for seed in seeds:
                rows.append(run_toy_cell(D, head, seed, cfg, sampler_cfg, **kwargs))
    return rows


TOY_COLUMNS = ["D", "head", "seed", "mean_offplane", "mean_spiral_dist", "final_loss", "wall_seconds"]


def write_toy_csv(rows: Sequence[ToyRow], path, include_wall: bool = False) -> Path:
    """Report table. ``include_wall=False`` blanks timings so reruns compare byte-equal."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TOY_COLUMNS)
        for r in rows:
            wall = f"{r.wall_seconds:.2f}" if include_wall else ""
            w.writerow([r.D, r.head, r.seed, repr(r.mean_offplane), repr(r.mean_spiral_dist), repr(r.final_loss), wall])
    return path


def write_scatter_csv(row: ToyRow, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["xhat1", "xhat2"])
        for a, b in row.scatter:
            w.writerow([repr(float(a)), repr(float(b))])
    return path
