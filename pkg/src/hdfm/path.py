"""Forward paths: heat-dissipation flow matching and its two comparison schemes."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .spectral import HeatSchedule, heat_endpoint


class PathKind(str, enum.Enum):
    HDFM = "hdfm"
    NOISE_FM = "noise_fm"
    PURE_BLUR = "pure_blur"


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        return self.sigma * rng.standard_normal(shape)


@dataclass
class PathSample:
    t: np.ndarray
    z_t: np.ndarray
    u_t: np.ndarray
    lap_u_t: np.ndarray
    e: np.ndarray
    v_star: np.ndarray
    x: np.ndarray
    y: Optional[np.ndarray] = None


def _bcast_t(t, x: np.ndarray, batched: bool) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0 or not batched:
        return t
    return t.reshape(t.shape + (1,) * (x.ndim - t.ndim))


def sample_path(
    x,
    t,
    e,
    sched: HeatSchedule,
    kind: PathKind = PathKind.HDFM,
    y=None,
) -> PathSample:
    """Build one path sample (or a batch, when ``t`` has one entry per leading row).

    HDFM:      z = t u_t + (1-t) e,  v* = (u_t - z)/s(t) - lap(u_t)
    NOISE_FM:  u_t = x, no Laplacian term
    PURE_BLUR: z = u_t,  v* = -lap(u_t) / max(t, t_floor)
    """
    x = np.asarray(x, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if x.shape != e.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs e {e.shape}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("flow time must lie in [0, 1]")
    kind = PathKind(kind)
    tb = _bcast_t(t, x, t.ndim > 0)
    if kind is PathKind.NOISE_FM:
        u, lap = x.copy(), np.zeros_like(x)
    else:
        u, lap = heat_endpoint(x, t, sched)

    if kind is PathKind.PURE_BLUR:
        z = u.copy()
        v = -lap / sched.clamp_t(tb)
    else:
        z = tb * u + (1.0 - tb) * e
        v = (u - z) / sched.s(tb) - lap
    return PathSample(t=t, z_t=z, u_t=u, lap_u_t=lap, e=e, v_star=v, x=x, y=y)


def delta_ignored_bias(x, t, e, sched: HeatSchedule) -> np.ndarray:
    """``v* - v_base``: the error made by dropping the Laplacian correction."""
    ps = sample_path(x, t, e, sched, PathKind.HDFM)
    return -ps.lap_u_t


def draw_time(rng: np.random.Generator, size=None, scheme: str = "uniform", t_floor: float = 1e-4):
    """Training times in ``[t_floor, 1 - t_floor]``.

    ``scheme`` is ``"uniform"`` or ``"logit_normal"`` (sigmoid of a standard normal).
    """
    lo, hi = t_floor, 1.0 - t_floor
    if scheme == "uniform":
        return rng.uniform(lo, hi, size)
    if scheme == "logit_normal":
        return np.clip(1.0 / (1.0 + np.exp(-rng.standard_normal(size))), lo, hi)
    raise ValueError(f"unknown time scheme {scheme!r}")
