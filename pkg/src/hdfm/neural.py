"""Small ReLU MLP with explicit backprop, prediction heads and velocity training.

The network sees ``[flatten(z_t), sinusoidal(t), class_embedding(y)]`` and emits
a field of the same shape as ``z_t``. What that field means depends on the head:
a clean-sample estimate (x), a velocity (v) or a noise estimate (eps). The
velocity used in the loss is always assembled from the head's output, so all
three are trained with the same velocity regression objective.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .path import NoiseConfig, PathKind, PathSample, draw_time, sample_path
from .spectral import HeatSchedule, dct, idct
from .tensorio import read_tensor, write_tensor

log = logging.getLogger(__name__)


class Head(str, enum.Enum):
    X_PRED = "x"
    V_PRED = "v"
    EPS_PRED = "eps"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MlpConfig:
    field_shape: tuple
    hidden: int | tuple = 256
    depth: int = 5  # number of linear layers
    time_dim: int = 32
    time_max_freq: float = 30.0
    num_classes: int = 0
    class_dim: int = 16
    head: Head = Head.X_PRED
    seed: int = 0
    dtype: str = "float64"  # parameter / activation precision

    def __post_init__(self):
        self.field_shape = tuple(int(n) for n in self.field_shape)
        self.head = Head(self.head)
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        if isinstance(self.hidden, (list, tuple)):
            self.hidden = tuple(int(w) for w in self.hidden)
            if len(self.hidden) != self.depth - 1:
                raise ValueError("need one hidden width per hidden layer")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")

    @property
    def widths(self) -> tuple[int, ...]:
        if isinstance(self.hidden, tuple):
            return self.hidden
        return (int(self.hidden),) * (self.depth - 1)

    @property
    def data_dim(self) -> int:
        return int(np.prod(self.field_shape))

    @property
    def in_dim(self) -> int:
        extra = self.class_dim if self.num_classes > 0 else 0
        return self.data_dim + self.time_dim + extra


def time_embedding(t, dim: int = 32, max_freq: float = 30.0) -> np.ndarray:
    """Sinusoidal features of flow time, frequencies geometric in ``[1, max_freq]``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.geomspace(1.0, max_freq, dim // 2)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class MlpModel:
    def __init__(self, config: MlpConfig, params: Optional[dict] = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    @property
    def head(self) -> Head:
        return self.config.head

    @property
    def null_class(self) -> Optional[int]:
        return self.config.num_classes if self.config.num_classes > 0 else None

    @property
    def n_hidden(self) -> int:
        return self.config.depth - 1

    def _init_params(self) -> dict:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        sizes = (cfg.in_dim, *cfg.widths, cfg.data_dim)
        params = {}
        if cfg.num_classes > 0:
            params["class_embed"] = 0.1 * rng.standard_normal((cfg.num_classes + 1, cfg.class_dim))
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = math.sqrt(2.0 / a) if i < len(sizes) - 2 else math.sqrt(1.0 / a)
            params[f"W{i}"] = scale * rng.standard_normal((a, b))
            params[f"b{i}"] = np.zeros(b)
        return {k: v.astype(cfg.dtype) for k, v in params.items()}

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "MlpModel":
        return MlpModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def _inputs(self, z, t, y) -> np.ndarray:
        cfg = self.config
        z = np.asarray(z, dtype=np.float64)
        batch = z.shape[0]
        if z.shape[1:] != cfg.field_shape:
            raise ValueError(f"expected batch of {cfg.field_shape}, got {z.shape}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        parts = [z.reshape(batch, -1), time_embedding(t, cfg.time_dim, cfg.time_max_freq)]
        if cfg.num_classes > 0:
            ids = np.full(batch, cfg.num_classes) if y is None else np.broadcast_to(np.asarray(y), (batch,))
            if np.any(ids < 0) or np.any(ids > cfg.num_classes):
                raise ValueError(f"unknown class id in {np.unique(ids)}")
            parts.append(self.params["class_embed"][ids])
        elif y is not None:
            raise ValueError("model was built without class conditioning")
        return np.concatenate(parts, axis=1).astype(cfg.dtype, copy=False)

    def forward(self, z, t, y=None):
        """Raw head output ``(B, *field_shape)`` and the cache needed by :meth:`backward`."""
        h = self._inputs(z, t, y)
        acts = [h]
        pre = []
        n_lin = self.config.depth
        for i in range(n_lin):
            a = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < n_lin - 1:
                pre.append(a)
                h = np.maximum(a, 0.0)
                acts.append(h)
            else:
                h = a
        out = h.reshape((h.shape[0],) + self.config.field_shape).astype(np.float64, copy=False)
        ids = None
        if self.config.num_classes > 0:
            ids = np.full(out.shape[0], self.config.num_classes) if y is None else np.broadcast_to(np.asarray(y), (out.shape[0],))
        return out, {"acts": acts, "pre": pre, "ids": ids}

    def predict(self, z, t, y=None) -> np.ndarray:
        return self.forward(z, t, y)[0]

    def hidden(self, cache, idx: int) -> np.ndarray:
        """Post-ReLU activation of hidden layer ``idx`` (0-based)."""
        return cache["acts"][idx + 1]

    def backward(self, cache, d_out, d_hidden: Optional[dict] = None) -> dict:
        """Gradients of every parameter block given ``dL/d(output)``.

        ``d_hidden`` maps a hidden-layer index to an extra gradient injected
        at that layer's post-ReLU activation (used by the alignment term).
        """
        d_hidden = d_hidden or {}
        acts, pre = cache["acts"], cache["pre"]
        grads = {}
        g = np.asarray(d_out).reshape(d_out.shape[0], -1).astype(self.config.dtype, copy=False)
        need_input_grad = self.config.num_classes > 0
        for i in reversed(range(self.config.depth)):
            grads[f"W{i}"] = acts[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i == 0 and not need_input_grad:
                break
            g = g @ self.params[f"W{i}"].T
            if i > 0:
                if (i - 1) in d_hidden:
                    g += d_hidden[i - 1].astype(g.dtype, copy=False)
                g[pre[i - 1] <= 0] = 0.0
        if self.config.num_classes > 0:
            start = self.config.data_dim + self.config.time_dim
            d_emb = np.zeros_like(self.params["class_embed"])
            np.add.at(d_emb, cache["ids"], g[:, start:])
            grads["class_embed"] = d_emb
        return grads

    # -- checkpoints ---------------------------------------------------------

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cfg = asdict(self.config)
        cfg["head"] = self.config.head.value
        blocks = []
        for name, arr in self.params.items():
            fname = f"{name}.hdt"
            write_tensor(directory / fname, arr)
            blocks.append({"name": name, "file": fname, "shape": list(arr.shape)})
        manifest = {"format": "hdfm-mlp-1", "config": cfg, "blocks": blocks}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "MlpModel":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        raw = manifest["config"]
        if isinstance(raw.get("hidden"), list):
            raw["hidden"] = tuple(raw["hidden"])
        config = MlpConfig(**raw)
        params = {}
        for block in manifest["blocks"]:
            arr = read_tensor(directory / block["file"])
            if list(arr.shape) != block["shape"]:
                raise ValueError(f"block {block['name']} has shape {arr.shape}, manifest says {block['shape']}")
            params[block["name"]] = arr.astype(config.dtype)
        model = cls(config, params)
        expected = cls(config).params
        for name, arr in expected.items():
            if name not in params or params[name].shape != arr.shape:
                raise ValueError(f"checkpoint block {name} missing or mis-shaped")
        return model


# -- velocity assembly ---------------------------------------------------------


def _tb(t, ref: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(ref.shape[0], float(t))
    return t.reshape(t.shape + (1,) * (ref.ndim - 1))


def _spectral_factor(ref: np.ndarray, t, sched: HeatSchedule):
    """(lam, exp(lam * tau)) shaped to broadcast against ``ref``."""
    lam = sched.eigen.broadcast(ref)
    tau = sched.tau(_tb(t, ref))
    return lam, np.exp(lam * tau)


def assemble(out, z, t, head: Head, sched: HeatSchedule, kind: PathKind = PathKind.HDFM):
    """Split a head output into ``(v_base, delta)`` with velocity ``v_base - delta``.

    Fields are batched: ``out`` and ``z`` are ``(B, *field)``, ``t`` scalar or ``(B,)``.
    """
    out = np.asarray(out, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    head, kind = Head(head), PathKind(kind)
    if out.shape != z.shape:
        raise ValueError(f"shape mismatch: output {out.shape} vs state {z.shape}")
    if head is Head.V_PRED:
        return out, np.zeros_like(out)
    tb = _tb(t, z)
    s = sched.s(tb)
    tc = sched.clamp_t(tb)
    if head is Head.EPS_PRED:
        if kind is PathKind.PURE_BLUR:
            raise ValueError("eps prediction is undefined on the pure-blur path")
        u_hat = (z - (1.0 - tb) * out) / tc
        if kind is PathKind.NOISE_FM:
            return (u_hat - z) / s, np.zeros_like(z)
        axes = sched.eigen.axes_for(z)
        lam = sched.eigen.broadcast(z)
        lap = idct(lam * dct(u_hat, axes), axes)
        return (u_hat - z) / s, lap
    # x prediction
    if kind is PathKind.NOISE_FM:
        return (out - z) / s, np.zeros_like(z)
    axes = sched.eigen.axes_for(z)
    lam, fac = _spectral_factor(z, t, sched)
    c = dct(out, axes) * fac
    u_hat = idct(c, axes)
    lap = idct(lam * c, axes)
    if kind is PathKind.PURE_BLUR:
        return np.zeros_like(z), lap / tc
    return (u_hat - z) / s, lap


def head_adjoint(g, z, t, head: Head, sched: HeatSchedule, kind: PathKind = PathKind.HDFM) -> np.ndarray:
    """Pull ``dL/dv`` back to ``dL/d(head output)``.

    The velocity is affine in the head output with a linear part that is
    diagonal in the orthonormal DCT basis, so the adjoint reuses the same
    spectral scaling.
    """
    head, kind = Head(head), PathKind(kind)
    g = np.asarray(g, dtype=np.float64)
    if head is Head.V_PRED:
        return g
    tb = _tb(t, z)
    s = sched.s(tb)
    tc = sched.clamp_t(tb)
    if head is Head.EPS_PRED:
        scale = -(1.0 - tb) / tc
        if kind is PathKind.NOISE_FM:
            return scale * g / s
        if kind is PathKind.PURE_BLUR:
            raise ValueError("eps prediction is undefined on the pure-blur path")
        axes = sched.eigen.axes_for(z)
        lam = sched.eigen.broadcast(z)
        return scale * idct((1.0 / s - lam) * dct(g, axes), axes)
    if kind is PathKind.NOISE_FM:
        return g / s
    axes = sched.eigen.axes_for(z)
    lam, fac = _spectral_factor(z, t, sched)
    if kind is PathKind.PURE_BLUR:
        return idct(lam * fac * dct(g, axes), axes) / tc
    return idct(fac * (1.0 / s - lam) * dct(g, axes), axes)


def predict_velocity(model, z, t, y=None, sched: HeatSchedule = None, kind: PathKind = PathKind.HDFM) -> np.ndarray:
    """Velocity ``v_base - delta`` assembled from the model's head output."""
    v_base, delta = assemble(model.predict(z, t, y), z, t, model.head, sched, kind)
    return v_base - delta


# -- losses ------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    layersync_weight: float = 0.0
    weak_idx: int = 1
    strong_idx: int = 3
    seed: int = 0
    log_every: int = 100
    diverge_at: float = 1e6
    grad_clip: Optional[float] = None
    lr_schedule: str = "constant"  # or "cosine" (decays to zero at the last step)
    loss_s_min: Optional[float] = None  # downweight samples with 1 - t below this (see velocity_weights)

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.layersync_weight < 0:
            raise ValueError("layersync_weight must be >= 0")
        if self.loss_s_min is not None and not 0 < self.loss_s_min < 1:
            raise ValueError("loss_s_min must lie in (0, 1)")


@dataclass
class LossReport:
    velocity: float
    layersync: float
    total: float
    grad_norm: float


_COS_EPS = 1e-8


def _projection(w_from: int, w_to: int) -> np.ndarray:
    rng = np.random.default_rng(w_from * 7919 + w_to)
    return rng.standard_normal((w_from, w_to)) / math.sqrt(w_from)


def layersync_loss(weak: np.ndarray, strong: np.ndarray) -> tuple[float, np.ndarray]:
    """``1 - mean cos(weak, stopgrad(strong))`` and its gradient w.r.t. ``weak``.

    The strong branch is treated as a constant; if widths differ it is mapped
    to the weak width by a fixed random matrix.
    """
    weak = np.asarray(weak, dtype=np.float64)
    strong = np.asarray(strong, dtype=np.float64)
    if strong.shape[1] != weak.shape[1]:
        strong = strong @ _projection(strong.shape[1], weak.shape[1])
    batch = weak.shape[0]
    na = np.sqrt(np.sum(weak**2, axis=1) + _COS_EPS**2)
    nb = np.sqrt(np.sum(strong**2, axis=1) + _COS_EPS**2)
    dot = np.sum(weak * strong, axis=1)
    cos = dot / (na * nb)
    d_weak = -(strong / (na * nb)[:, None] - (dot / (na**3 * nb))[:, None] * weak) / batch
    return float(1.0 - cos.mean()), d_weak


def _check_sync_indices(model: MlpModel, weak: int, strong: int):
    if not (0 <= weak < strong < model.n_hidden):
        raise ValueError(f"need 0 <= weak_idx < strong_idx < {model.n_hidden}, got {weak}, {strong}")


def velocity_weights(t, s_min: Optional[float], sched: HeatSchedule) -> np.ndarray:
    """Per-sample loss weights ``min(1, s(t) / s_min)**2`` (all ones when ``s_min`` is None).

    For x prediction the velocity error is ``(u_hat - u) / s(t)`` up to a
    bounded Laplacian term, so the weight is the same as evaluating the loss
    with ``s`` clamped at ``s_min``. Without it the few samples near ``t = 1``
    carry weights up to ``1 / s_eps**2`` and swamp the gradient.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if s_min is None:
        return np.ones_like(t)
    return np.minimum(1.0, sched.s(t) / s_min) ** 2


def loss_and_grad(model: MlpModel, batch: PathSample, cfg: TrainConfig, sched: HeatSchedule, kind: PathKind = PathKind.HDFM):
    """Velocity regression loss (plus optional alignment term) and parameter gradients."""
    z = batch.z_t
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    out, cache = model.forward(z, batch.t, batch.y)
    v_base, delta = assemble(out, z, batch.t, model.head, sched, kind)
    resid = (v_base - delta) - batch.v_star
    n = z.shape[0]
    w = velocity_weights(batch.t, cfg.loss_s_min, sched)
    w = np.broadcast_to(w, (n,)).reshape((n,) + (1,) * (z.ndim - 1))
    vel = float(np.sum(w * resid**2) / n)

    sync = 0.0
    d_hidden = {}
    if cfg.layersync_weight > 0:
        _check_sync_indices(model, cfg.weak_idx, cfg.strong_idx)
        sync, d_weak = layersync_loss(model.hidden(cache, cfg.weak_idx), model.hidden(cache, cfg.strong_idx))
        d_hidden[cfg.weak_idx] = cfg.layersync_weight * d_weak
    total = vel + cfg.layersync_weight * sync
    if not np.isfinite(total):
        raise TrainingDiverged(f"non-finite loss (velocity={vel}, layersync={sync})")

    d_out = head_adjoint(2.0 * w * resid / n, z, batch.t, model.head, sched, kind)
    grads = model.backward(cache, d_out, d_hidden)
    gnorm = float(math.sqrt(sum(float(np.sum(g**2)) for g in grads.values())))
    return LossReport(vel, sync, total, gnorm), grads


# -- training ----------------------------------------------------------------


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: dict, grads: dict):
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            params[k] -= (self.lr / c1) * m / denom


def batch_stream(
    data: np.ndarray,
    sched: HeatSchedule,
    batch_size: int,
    rng: np.random.Generator,
    kind: PathKind = PathKind.HDFM,
    noise: NoiseConfig = NoiseConfig(),
    labels: Optional[np.ndarray] = None,
    num_classes: int = 0,
    label_drop: float = 0.1,
    time_scheme: str = "uniform",
) -> Iterator[PathSample]:
    """Endless stream of path batches drawn from ``data`` (fresh t and noise per step).

    With labels, each label is replaced by the null class with probability
    ``label_drop`` so the unconditional branch is trained too.
    """
    data = np.asarray(data, dtype=np.float64)
    while True:
        idx = rng.integers(0, data.shape[0], batch_size)
        x = data[idx]
        t = draw_time(rng, batch_size, time_scheme, sched.t_floor)
        e = noise.draw(rng, x.shape)
        y = None
        if labels is not None:
            y = np.asarray(labels)[idx].copy()
            y[rng.random(batch_size) < label_drop] = num_classes
        yield sample_path(x, t, e, sched, kind, y=y)


@dataclass
class TrainResult:
    model: MlpModel
    history: list = field(default_factory=list)  # one LossReport per step
    curve: list = field(default_factory=list)  # (step, mean velocity loss) per logging interval


def train(
    model: MlpModel,
    batches: Iterable[PathSample],
    cfg: TrainConfig,
    sched: HeatSchedule,
    kind: PathKind = PathKind.HDFM,
    checkpoint: Optional[str | Path] = None,
) -> TrainResult:
    """Adam on the velocity loss. Raises :class:`TrainingDiverged` on blow-up."""
    if cfg.layersync_weight > 0:
        _check_sync_indices(model, cfg.weak_idx, cfg.strong_idx)
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    result = TrainResult(model)
    it = iter(batches)
    window = []
    for step in range(cfg.steps):
        report, grads = loss_and_grad(model, next(it), cfg, sched, kind)
        if report.total > cfg.diverge_at:
            raise TrainingDiverged(f"loss {report.total:.3g} exceeded {cfg.diverge_at:g} at step {step}")
        if cfg.grad_clip is not None and report.grad_norm > cfg.grad_clip:
            scale = cfg.grad_clip / report.grad_norm
            grads = {k: g * scale for k, g in grads.items()}
        if cfg.lr_schedule == "cosine":
            opt.lr = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / cfg.steps))
        opt.step(model.params, grads)
        result.history.append(report)
        window.append(report.velocity)
        if len(window) == cfg.log_every or step == cfg.steps - 1:
            mean = float(np.mean(window))
            result.curve.append((step, mean))
            log.info("step %d velocity loss %.5g", step, mean)
            window = []
    if checkpoint is not None:
        model.save(checkpoint)
    return result
