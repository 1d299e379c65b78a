"""Frequency-ratio transport curves, DCT-space straightness and ill-posedness stress tests.

Everything here runs on closed-form forward paths; no trained network is
needed. Learned trajectories from :mod:`hdfm.sampler` can be fed to
:func:`straightness` as well.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .path import PathKind, sample_path
from .spectral import EigenGrid, HeatSchedule, band_masks, dct, eigen_grid, heat_endpoint, idct, radial_frequency


# -- data --------------------------------------------------------------------


def synthetic_textures(
    n: int,
    size: int = 32,
    channels: int = 3,
    seed: int = 0,
    slope: float = 1.4,
    std: float = 0.35,
    mean_std: float = 0.5,
    channel_corr: float = 0.8,
) -> np.ndarray:
    """Seeded ``(n, size, size, channels)`` textures with a ``1/f**slope`` amplitude spectrum.

    Defaults follow 32x32 natural-photo crops: amplitude slope about 1.4,
    pixel std about 0.35 and a per-image, per-channel brightness offset.
    ``channel_corr`` mixes a shared luminance component into every channel.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, size, size, channels))
    if channels > 1 and channel_corr > 0:
        w = channel_corr * w[..., :1] + np.sqrt(1.0 - channel_corr**2) * w
    rho = np.maximum(radial_frequency((size, size)), 1.0 / size)
    c = dct(w, (-3, -2)) / (rho**slope)[None, :, :, None]
    c[:, 0, 0, :] = 0.0
    x = idct(c, (-3, -2))
    x *= std / x.std(axis=(1, 2, 3), keepdims=True)
    x += mean_std * rng.standard_normal((n, 1, 1, channels))
    return x


def image_crops(directory, n: int, size: int = 32, seed: int = 0, downsample: int = 1) -> np.ndarray:
    """Random ``size x size`` crops in ``[-1, 1]`` from images under ``directory``.

    Reads binary PGM/PPM natively; other formats need Pillow.
    """
    from .tensorio import read_pnm

    paths = sorted(p for p in Path(directory).iterdir() if p.is_file())
    images = []
    for p in paths:
        if p.suffix.lower() in (".pgm", ".ppm", ".pnm"):
            arr = read_pnm(p)
        else:
            try:
                from PIL import Image
            except ImportError as exc:  # pragma: no cover
                raise RuntimeError(f"reading {p.suffix} files needs Pillow") from exc
            try:
                arr = np.asarray(Image.open(p).convert("RGB"))
            except OSError:
                continue
        if arr.ndim == 2:
            arr = arr[..., None]
        images.append(arr.astype(np.float64) / 127.5 - 1.0)
    span = size * downsample
    images = [im for im in images if im.shape[0] >= span and im.shape[1] >= span]
    if not images:
        raise ValueError(f"no usable images of at least {span}px in {directory}")
    channels = max(im.shape[2] for im in images)
    rng = np.random.default_rng(seed)
    out = np.empty((n, size, size, channels))
    for i in range(n):
        im = images[rng.integers(len(images))]
        a = rng.integers(im.shape[0] - span + 1)
        b = rng.integers(im.shape[1] - span + 1)
        crop = im[a : a + span, b : b + span].reshape(size, downsample, size, downsample, -1).mean(axis=(1, 3))
        out[i] = np.broadcast_to(crop, (size, size, channels))
    return out


# -- frequency ratio -----------------------------------------------------------


def batch_ratio(z: np.ndarray, cutoff_fraction: float = 0.5) -> np.ndarray:
    """Per-sample ``E_high / E_low`` for a batch ``(B, H, W, C)`` or ``(B, D)``."""
    z = np.asarray(z, dtype=np.float64)
    axes = (-1,) if z.ndim == 2 else (-3, -2)
    spatial = tuple(z.shape[a] for a in axes)
    low, _ = band_masks(spatial, cutoff_fraction)
    energy = dct(z, axes) ** 2
    if z.ndim == 2:
        e_low = energy[:, low].sum(axis=1)
        e_high = energy[:, ~low].sum(axis=1)
    else:
        e_low = energy[:, low, :].sum(axis=(1, 2))
        e_high = energy[:, ~low, :].sum(axis=(1, 2))
    return e_high / e_low


@dataclass
class RatioCurve:
    ts: np.ndarray
    ratios: np.ndarray
    scheme: str
    blur_strength: float
    n_samples: int


def forward_states(x, t: float, e, sched: HeatSchedule, kind: PathKind) -> np.ndarray:
    return sample_path(x, t, e, sched, kind).z_t


def ratio_curves_analytic(
    data: np.ndarray,
    schemes: Iterable[PathKind] = (PathKind.NOISE_FM, PathKind.HDFM, PathKind.PURE_BLUR),
    blur_strengths: Sequence[float] = (1.0,),
    ts: Sequence[float] | None = None,
    sigma: float = 1.0,
    seed: int = 0,
    cutoff_fraction: float = 0.5,
    t_floor: float = 1e-4,
    chunk: int = 256,
) -> list[RatioCurve]:
    """Mean frequency ratio of closed-form forward states over a shared time grid.

    One noise draw per sample is shared by every scheme and blur strength so
    curves differ only through the path, not the noise.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3:
        data = data[..., None]
    n = data.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    ts = np.linspace(t_floor, 1.0, 40) if ts is None else np.asarray(ts, dtype=np.float64)
    e = sigma * np.random.default_rng(seed).standard_normal(data.shape)
    spatial = data.shape[1:-1] if data.ndim == 4 else data.shape[1:]
    axes = (-1,) if data.ndim == 2 else (-3, -2)
    low, _ = band_masks(spatial, cutoff_fraction)
    # Every path is diagonal in the DCT basis, so states are built from the
    # coefficients directly and no per-time transform is needed.
    cx = dct(data, axes)
    ce = dct(e, axes)
    if data.ndim == 4:
        cx, ce = cx.transpose(0, 3, 1, 2), ce.transpose(0, 3, 1, 2)
    cx = cx.reshape(-1, low.size)[:, None, :] if data.ndim == 2 else cx.reshape(n, -1, low.size)
    ce = ce.reshape(-1, low.size)[:, None, :] if data.ndim == 2 else ce.reshape(n, -1, low.size)
    low = low.ravel()
    curves = []
    for kind in schemes:
        kind = PathKind(kind)
        strengths = [1.0] if kind is PathKind.NOISE_FM else blur_strengths
        for r in strengths:
            sched = HeatSchedule(eigen_grid(spatial, r), t_floor)
            lam = sched.eigen.lam.ravel()
            ratios = np.empty(len(ts))
            for j, t in enumerate(ts):
                t = float(t)
                gain = 1.0 if kind is PathKind.NOISE_FM else np.exp(lam * sched.tau(t))
                acc = 0.0
                for i in range(0, n, chunk):
                    u = cx[i : i + chunk] * gain
                    c = u if kind is PathKind.PURE_BLUR else t * u + (1.0 - t) * ce[i : i + chunk]
                    energy = c**2
                    acc += (energy[..., ~low].sum(axis=(1, 2)) / energy[..., low].sum(axis=(1, 2))).sum()
                ratios[j] = acc / n
            curves.append(RatioCurve(ts.copy(), ratios, kind.value, float(r), n))
    return curves


def write_ratio_csv(curve: RatioCurve, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "ratio", "scheme", "r"])
        for t, r in zip(curve.ts, curve.ratios):
            w.writerow([repr(float(t)), repr(float(r)), curve.scheme, repr(curve.blur_strength)])
    return path


# -- straightness ----------------------------------------------------------------


@dataclass
class StraightnessReport:
    data_ratios: np.ndarray  # (particles, tracks)
    dct_ratios: np.ndarray

    @property
    def mean_data(self) -> float:
        return float(self.data_ratios.mean())

    @property
    def mean_dct(self) -> float:
        return float(self.dct_ratios.mean())


def chord_arc(poly: np.ndarray) -> np.ndarray:
    """Chord length over arc length of polylines ``(T, ..., d)``; 1 for a degenerate path."""
    poly = np.asarray(poly, dtype=np.float64)
    if poly.shape[0] < 3:
        raise ValueError("need at least 3 states")
    arc = np.linalg.norm(np.diff(poly, axis=0), axis=-1).sum(axis=0)
    chord = np.linalg.norm(poly[-1] - poly[0], axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(arc > 0, chord / np.where(arc > 0, arc, 1.0), 1.0)


def _tracks(states: np.ndarray, pairs) -> np.ndarray:
    # states (T, B, D) -> (T, B, n_tracks, 2) or (T, B, 1, D) for the full state
    if pairs is None:
        return states[:, :, None, :]
    idx = np.asarray(pairs)
    return states[:, :, idx]


def straightness(states, pairs="adjacent") -> StraightnessReport:
    """Chord/arc ratios of state trajectories in data space and in DCT space.

    ``states`` is ``(T, B, D)`` (``T >= 3`` time points of ``B`` particles).
    ``pairs="adjacent"`` tracks every disjoint coordinate pair ``(2k, 2k+1)``
    as a separate 2D particle, the way such trajectories are plotted; ``None``
    tracks the full state, for which both spaces agree exactly because the
    DCT is orthogonal.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[:, None, :]
    if states.shape[0] < 3:
        raise ValueError("need at least 3 states")
    D = states.shape[-1]
    if isinstance(pairs, str):
        if pairs != "adjacent":
            raise ValueError(f"unknown pairs mode {pairs!r}")
        pairs = [(2 * k, 2 * k + 1) for k in range(D // 2)]
    coeffs = dct(states, (-1,))
    return StraightnessReport(chord_arc(_tracks(states, pairs)), chord_arc(_tracks(coeffs, pairs)))


def analytic_trajectories(x, e, sched: HeatSchedule, ts) -> np.ndarray:
    """Closed-form HDFM states ``(T, B, D)`` for data ``x`` and noise ``e``."""
    return np.stack([sample_path(x, float(t), e, sched, PathKind.HDFM).z_t for t in ts])


def write_straightness_csv(report: StraightnessReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["particle", "track", "data_ratio", "dct_ratio"])
        for p in range(report.data_ratios.shape[0]):
            for k in range(report.data_ratios.shape[1]):
                w.writerow([p, k, repr(float(report.data_ratios[p, k])), repr(float(report.dct_ratios[p, k]))])
    return path


# -- ill-posedness ---------------------------------------------------------------


@dataclass
class StressReport:
    ts: np.ndarray
    hdfm_noise_gain: np.ndarray  # ||dz_t|| / eta when e is perturbed
    hdfm_data_gain: np.ndarray  # max_k t^(1 + |lam_k|): data-coefficient sensitivity
    taus: np.ndarray
    raw_inverse_gain: np.ndarray  # amplification of inverting exp(lam tau) on a top-frequency perturbation


def hdfm_noise_sensitivity(x, e, t, sched: HeatSchedule, eta: float, direction=None) -> float:
    """``||z_t(e + eta d) - z_t(e)|| / eta`` for a unit direction ``d``."""
    if not eta > 0:
        raise ValueError("eta must be > 0")
    x = np.asarray(x, dtype=np.float64)
    if direction is None:
        direction = np.random.default_rng(0).standard_normal(x.shape)
    d = direction / np.linalg.norm(direction)
    z0 = sample_path(x, t, e, sched).z_t
    z1 = sample_path(x, t, e + eta * d, sched).z_t
    return float(np.linalg.norm(z1 - z0) / eta)


def hdfm_data_sensitivity(t, eigen: EigenGrid) -> np.ndarray:
    """Per-coefficient ``dz~_k / dx~_k = t^(1 + |lam_k|)`` of the interpolated path."""
    return np.asarray(t, dtype=np.float64) ** (1.0 + np.abs(eigen.lam))


def raw_inverse_gain(x, tau: float, eigen: EigenGrid, eta: float) -> float:
    """Amplification of a top-frequency perturbation under exact heat inversion.

    Blur ``x`` for heat time ``tau``, add ``eta`` times the highest DCT mode,
    then undo the blur by dividing every coefficient by ``exp(lam * tau)``.
    """
    if not eta > 0:
        raise ValueError("eta must be > 0")
    x = np.asarray(x, dtype=np.float64)
    axes = eigen.axes_for(x)
    lam = eigen.broadcast(x)
    fac = np.exp(lam * tau)
    blurred = dct(x, axes) * fac
    pert = np.zeros_like(blurred)
    top = np.unravel_index(np.argmin(eigen.lam), eigen.shape)
    index = [slice(None)] * x.ndim
    for ax, k in zip(axes, top):
        index[ax % x.ndim] = k
    pert[tuple(index)] = eta
    clean = idct(blurred / fac, axes)
    noisy = idct((blurred + pert) / fac, axes)
    return float(np.linalg.norm(noisy - clean) / (eta * np.sqrt(np.count_nonzero(pert))))


def illposedness_stress(x, eta: float, sched: HeatSchedule, ts=None, taus=None, seed: int = 0) -> StressReport:
    """Compare HDFM's bounded sensitivities against raw exponential inversion."""
    x = np.asarray(x, dtype=np.float64)
    ts = np.linspace(sched.t_floor, 1.0, 20) if ts is None else np.asarray(ts)
    taus = np.array([0.5, 1.0, 2.0, 3.0]) if taus is None else np.asarray(taus)
    e = np.random.default_rng(seed).standard_normal(x.shape)
    noise_gain = np.array([hdfm_noise_sensitivity(x, e, float(t), sched, eta) for t in ts])
    data_gain = np.array([hdfm_data_sensitivity(t, sched.eigen).max() for t in ts])
    raw = np.array([raw_inverse_gain(x, float(tau), sched.eigen, eta) for tau in taus])
    return StressReport(ts, noise_gain, data_gain, taus, raw)
