"""Orthonormal DCT transforms, Neumann Laplacian eigenvalues and the heat operator.

Field layout conventions used throughout the package:

* 1D fields are ``(..., D)``; the transform runs over the last axis.
* 2D fields are ``(H, W)`` or channels-last ``(..., H, W, C)``; the transform
  runs over the two spatial axes.

Leading axes are treated as batch axes. Flow time ``t`` may be a scalar or an
array with one entry per leading batch index.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "EigenGrid",
    "band_masks",
    "HeatSchedule",
    "dct",
    "idct",
    "dct_matrix",
    "eigen_grid",
    "heat_endpoint",
    "heat_raw_tau",
    "laplacian",
    "radial_frequency",
    "spectral_energy_split",
]


@lru_cache(maxsize=64)
def _dct_matrix_cached(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    c = np.cos(np.pi * k * (2 * m + 1) / (2 * n))
    c[0] *= np.sqrt(1.0 / n)
    c[1:] *= np.sqrt(2.0 / n)
    c.setflags(write=False)
    return c


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``coeffs = C @ x`` (read-only, cached)."""
    if n < 1:
        raise ValueError(f"transform length must be >= 1, got {n}")
    return _dct_matrix_cached(int(n))


def _default_axes(ndim: int, spatial_ndim: int) -> tuple[int, ...]:
    if spatial_ndim == 1:
        return (-1,)
    if spatial_ndim != 2:
        raise ValueError(f"only 1D and 2D grids are supported, got {spatial_ndim}D")
    if ndim == 2:
        return (0, 1)
    if ndim < 3:
        raise ValueError("2D fields need at least two axes")
    return (-3, -2)


def _infer_axes(x: np.ndarray, axes) -> tuple[int, ...]:
    if axes is not None:
        return tuple(axes)
    if x.ndim == 1:
        return (0,)
    if x.ndim in (2, 3):
        return _default_axes(x.ndim, 2)
    raise ValueError("cannot infer transform axes for a batched field; pass axes")


def _apply_along(x: np.ndarray, mat_fn, axes: tuple[int, ...]) -> np.ndarray:
    out = np.asarray(x, dtype=np.float64)
    for ax in axes:
        mat = mat_fn(out.shape[ax])
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [ax])), 0, ax)
    return out


def dct(x, axes=None) -> np.ndarray:
    """Separable orthonormal DCT-II of ``x`` over ``axes``.

    With ``axes=None`` an unbatched field is assumed: ``(D,)`` transforms its
    only axis, ``(H, W)`` and ``(H, W, C)`` transform the two spatial axes.
    """
    x = np.asarray(x, dtype=np.float64)
    return _apply_along(x, dct_matrix, _infer_axes(x, axes))


def idct(c, axes=None) -> np.ndarray:
    """Inverse of :func:`dct` (orthonormal DCT-III)."""
    c = np.asarray(c, dtype=np.float64)
    return _apply_along(c, lambda n: dct_matrix(n).T, _infer_axes(c, axes))


def radial_frequency(shape) -> np.ndarray:
    """Normalized radial frequency ``sqrt(sum_i (k_i / N_i)^2)`` per coefficient."""
    grids = np.meshgrid(*[np.arange(n) / n for n in shape], indexing="ij")
    return np.sqrt(sum(g**2 for g in grids))


@dataclass(frozen=True)
class EigenGrid:
    """Laplacian eigenvalues of a Neumann grid, already scaled by ``blur_strength``."""

    lam: np.ndarray
    blur_strength: float = 1.0

    def __post_init__(self):
        lam = np.array(self.lam, dtype=np.float64)
        if lam.ndim not in (1, 2):
            raise ValueError(f"eigen grid must be 1D or 2D, got shape {lam.shape}")
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        if np.any(lam > 0):
            raise ValueError("eigenvalues must be <= 0")
        if lam.flat[0] != 0.0:
            raise ValueError("DC eigenvalue must be exactly 0")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.lam.shape

    @property
    def ndim(self) -> int:
        return self.lam.ndim

    def axes_for(self, x: np.ndarray) -> tuple[int, ...]:
        return _default_axes(np.ndim(x), self.ndim)

    def broadcast(self, x: np.ndarray) -> np.ndarray:
        """Eigenvalues reshaped to broadcast against field ``x``."""
        axes = self.axes_for(x)
        ndim = np.ndim(x)
        shape = [1] * ndim
        for ax, n in zip(axes, self.shape):
            shape[ax % ndim] = n
        if tuple(np.shape(x)[a] for a in axes) != self.shape:
            raise ValueError(f"field shape {np.shape(x)} does not match eigen grid {self.shape}")
        return self.lam.reshape(shape)


def eigen_grid(shape, blur_strength: float = 1.0) -> EigenGrid:
    """Continuous-spectrum Neumann eigenvalues ``-r * pi^2 * sum_i (k_i / N_i)^2``."""
    shape = tuple(int(n) for n in np.atleast_1d(shape))
    if not shape or any(n < 1 for n in shape):
        raise ValueError(f"invalid grid shape {shape}")
    if not 0.0 < blur_strength <= 1.0:
        raise ValueError(f"blur_strength must lie in (0, 1], got {blur_strength}")
    lam = -blur_strength * np.pi**2 * radial_frequency(shape) ** 2
    lam.flat[0] = 0.0
    return EigenGrid(lam, float(blur_strength))


@dataclass(frozen=True)
class HeatSchedule:
    """Time calibration ``tau(t) = -log t`` plus the clamps that keep it finite."""

    eigen: EigenGrid
    t_floor: float = 1e-4
    s_eps: float = 1e-3

    def __post_init__(self):
        if not self.t_floor > 0:
            raise ValueError("t_floor must be > 0")
        if not self.s_eps > 0:
            raise ValueError("s_eps must be > 0")

    def clamp_t(self, t):
        return np.maximum(np.asarray(t, dtype=np.float64), self.t_floor)

    def tau(self, t):
        return -np.log(self.clamp_t(t))

    def s(self, t):
        return np.maximum(1.0 - np.asarray(t, dtype=np.float64), self.s_eps)


def _expand_time(t, x: np.ndarray) -> np.ndarray:
    """Reshape a scalar or per-batch time so it broadcasts over the field axes."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (np.ndim(x) - t.ndim))


def _scale(x: np.ndarray, eigen: EigenGrid, factor: np.ndarray) -> np.ndarray:
    axes = eigen.axes_for(x)
    return idct(dct(x, axes) * factor, axes)


def heat_raw_tau(x, tau, eigen: EigenGrid) -> np.ndarray:
    """Heat flow for heat time ``tau``: ``IDCT(exp(lam * tau) * DCT(x))``."""
    x = np.asarray(x, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0):
        raise ValueError("heat time must be >= 0")
    lam = eigen.broadcast(x)
    factor = np.exp(lam * _expand_time(tau, x))
    if np.all(factor == 1.0):
        return x.copy()
    return _scale(x, eigen, factor)


def laplacian(x, eigen: EigenGrid) -> np.ndarray:
    """Neumann Laplacian ``IDCT(lam * DCT(x))``."""
    x = np.asarray(x, dtype=np.float64)
    lam = eigen.broadcast(x)
    if not np.any(lam):
        return np.zeros_like(x)
    return _scale(x, eigen, lam)


def heat_endpoint(x, t, sched: HeatSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Blurred endpoint ``u_t`` and its Laplacian for flow time ``t``.

    ``t`` is clamped to ``sched.t_floor`` from below; negative times are rejected.
    Uses one forward and two inverse transforms.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("flow time must lie in [0, 1]")
    eigen = sched.eigen
    lam = eigen.broadcast(x)
    if not np.any(lam):
        return x.copy(), np.zeros_like(x)
    tau = _expand_time(sched.tau(t), x)
    factor = np.exp(lam * tau)
    axes = eigen.axes_for(x)
    coeffs = dct(x, axes)
    u_coeffs = coeffs * factor
    u = x.copy() if np.all(factor == 1.0) else idct(u_coeffs, axes)
    return u, idct(lam * u_coeffs, axes)


def band_masks(shape, cutoff_fraction: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (low, high) masks over coefficient indices for a radial cutoff."""
    if not 0.0 < cutoff_fraction < 1.0:
        raise ValueError(f"cutoff_fraction must lie in (0, 1), got {cutoff_fraction}")
    low = radial_frequency(shape) < cutoff_fraction
    return low, ~low


def spectral_energy_split(x, cutoff_fraction: float = 0.5, axes=None) -> tuple[float, float]:
    """Squared DCT energy below / at-or-above ``cutoff_fraction`` of the Nyquist radius.

    Radial frequency is normalized so each axis reaches 1 at its Nyquist index;
    channels (and any other non-transformed axes) are summed.
    """
    x = np.asarray(x, dtype=np.float64)
    axes = _infer_axes(x, axes)
    spatial = tuple(x.shape[a] for a in axes)
    low, _ = band_masks(spatial, cutoff_fraction)
    shape = [1] * x.ndim
    for ax, n in zip(axes, spatial):
        shape[ax % x.ndim] = n
    low = low.reshape(shape)
    energy = dct(x, axes) ** 2
    e_low = float(np.sum(np.where(low, energy, 0.0)))
    e_high = float(np.sum(np.where(low, 0.0, energy)))
    return e_low, e_high
