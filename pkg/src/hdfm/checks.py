"""Self-contained invariant suite run by ``hdfm check``.

Each check returns a measured error (or margin) and raises
:class:`CheckFailed` when it is out of tolerance. Checks are grouped by the
module they exercise so ``--filter`` can select one group.
"""

from __future__ import annotations

import csv
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .diagnostics import hdfm_data_sensitivity, hdfm_noise_sensitivity, raw_inverse_gain
from .neural import Head, MlpConfig, MlpModel, TrainConfig, assemble, layersync_loss, loss_and_grad
from .path import PathKind, sample_path
from .sampler import OracleModel, SamplerConfig, adaptive_beta, cfg_combine, sample, sample_pure_blur
from .spectral import HeatSchedule, dct, eigen_grid, heat_endpoint, heat_raw_tau, idct, laplacian
from .tensorio import decode_tensor, encode_tensor
from .toyverse import SpiralSpec, make_embedding, manifold_metrics


class CheckFailed(AssertionError):
    pass


@dataclass
class CheckResult:
    group: str
    name: str
    ok: bool
    value: float
    message: str = ""


def _expect(value: float, tol: float, what: str) -> float:
    if not (np.isfinite(value) and value <= tol):
        raise CheckFailed(f"{what}: {value:.3e} exceeds {tol:.1e}")
    return float(value)


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _sched(shape, r: float = 1.0) -> HeatSchedule:
    return HeatSchedule(eigen_grid(shape, r))


# -- spectral -----------------------------------------------------------------


def check_dct_roundtrip() -> float:
    rng = np.random.default_rng(1)
    err = 0.0
    for x, axes in ((rng.standard_normal((4, 17)), (-1,)), (rng.standard_normal((2, 8, 12, 3)), (-3, -2))):
        err = max(err, float(np.max(np.abs(idct(dct(x, axes), axes) - x))))
    return _expect(err, 1e-10, "DCT round trip max-abs")


def check_dct_oracle() -> float:
    n = 7
    x = np.random.default_rng(2).standard_normal(n)
    m = np.arange(n)
    brute = np.array([np.sum(x * np.cos(np.pi * k * (2 * m + 1) / (2 * n))) for k in range(n)])
    brute *= np.where(np.arange(n) == 0, np.sqrt(1 / n), np.sqrt(2 / n))
    return _expect(float(np.max(np.abs(dct(x) - brute))), 1e-12, "DCT vs direct cosine sum")


def check_parseval() -> float:
    x = np.random.default_rng(3).standard_normal((16, 16, 3))
    err = abs(np.sum(dct(x) ** 2) - np.sum(x**2)) / np.sum(x**2)
    return _expect(float(err), 1e-10, "Parseval relative")


def check_heat_identity() -> float:
    x = np.random.default_rng(4).standard_normal((8, 8, 3))
    u, _ = heat_endpoint(x, 1.0, _sched((8, 8)))
    return _expect(float(np.max(np.abs(u - x))), 1e-12, "heat endpoint at t=1")


def check_semigroup() -> float:
    sched = _sched((12, 12))
    x = np.random.default_rng(5).standard_normal((12, 12))
    a, b = 0.3, 0.7
    lhs = heat_raw_tau(heat_raw_tau(x, a, sched.eigen), b, sched.eigen)
    err = _rel(lhs, heat_raw_tau(x, a + b, sched.eigen))
    _expect(err, 1e-8, "semigroup H_a H_b = H_(a+b)")
    growth = np.linalg.norm(heat_raw_tau(x, 1.0, sched.eigen)) / np.linalg.norm(x) - 1.0
    _expect(max(growth, 0.0), 1e-12, "heat flow must not increase the norm")
    return err


def check_heat_generator() -> float:
    eigen = _sched((24,)).eigen
    x = np.random.default_rng(6).standard_normal(24)
    tau, h = 0.8, 1e-5
    fd = (heat_raw_tau(x, tau + h, eigen) - heat_raw_tau(x, tau - h, eigen)) / (2 * h)
    return _expect(_rel(fd, laplacian(heat_raw_tau(x, tau, eigen), eigen)), 1e-5, "d/dtau H = lap H")


def check_self_adjoint() -> float:
    eigen = _sched((10, 10)).eigen
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((2, 10, 10))
    lhs = np.sum(heat_raw_tau(a, 1.3, eigen) * b)
    rhs = np.sum(a * heat_raw_tau(b, 1.3, eigen))
    return _expect(abs(lhs - rhs) / max(abs(lhs), 1e-300), 1e-10, "<H a, b> = <a, H b>")


# -- path -----------------------------------------------------------------------


def check_velocity_fd() -> float:
    rng = np.random.default_rng(8)
    worst = 0.0
    for shape in ((16,), (6, 6, 2)):
        sched = _sched(shape[:2] if len(shape) == 3 else shape)
        for _ in range(10):
            x, e = rng.standard_normal((2, *shape))
            t, h = rng.uniform(0.05, 0.95), 1e-5
            fd = (sample_path(x, t + h, e, sched).z_t - sample_path(x, t - h, e, sched).z_t) / (2 * h)
            worst = max(worst, _rel(fd, sample_path(x, t, e, sched).v_star))
    return _expect(worst, 1e-4, "finite-difference dz/dt vs v*")


def check_path_endpoints() -> float:
    sched = _sched((16,))
    rng = np.random.default_rng(9)
    x, e = rng.standard_normal((2, 16))
    end = float(np.max(np.abs(sample_path(x, 1.0, e, sched).z_t - x)))
    _expect(end, 1e-12, "z at t=1 equals x")
    start = float(np.max(np.abs(sample_path(x, sched.t_floor, e, sched).z_t - e)))
    bound = sched.t_floor * (np.linalg.norm(x) + np.max(np.abs(e))) + 1e-10
    _expect(start - bound, 0.0, "z at t_floor stays within t_floor of e")
    return end


# -- neural -----------------------------------------------------------------------


def _small_model(head: Head, D: int = 8, seed: int = 0) -> MlpModel:
    return MlpModel(MlpConfig(field_shape=(D,), hidden=16, depth=3, head=head, seed=seed))


def _toy_batch(D: int = 8, n: int = 6, seed: int = 0):
    rng = np.random.default_rng(seed)
    x, e = rng.standard_normal((2, n, D))
    return sample_path(x, rng.uniform(0.1, 0.9, n), e, _sched((D,)))


def gradient_error(model: MlpModel, batch, sched, cfg: TrainConfig, coords: int = 50, h: float = 1e-3, seed: int = 0) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    With LayerSync on, the strong activations are frozen at the base point so
    the finite difference sees the same stop-gradient objective.
    """
    _, grads = loss_and_grad(model, batch, cfg, sched)
    strong = None
    if cfg.layersync_weight > 0:
        _, cache = model.forward(batch.z_t, batch.t, batch.y)
        strong = model.hidden(cache, cfg.strong_idx).copy()

    def objective() -> tuple[float, bytes]:
        out, cache = model.forward(batch.z_t, batch.t, batch.y)
        pattern = b"".join(np.packbits(p > 0).tobytes() for p in cache["pre"])
        if strong is None:
            return loss_and_grad(model, batch, cfg, sched)[0].total, pattern
        vb, d = assemble(out, batch.z_t, batch.t, model.head, sched)
        vel = np.sum((vb - d - batch.v_star) ** 2) / batch.z_t.shape[0]
        return vel + cfg.layersync_weight * layersync_loss(model.hidden(cache, cfg.weak_idx), strong)[0], pattern

    def central(p, i, step):
        old = p.flat[i]
        p.flat[i] = old + step
        up, pat_up = objective()
        p.flat[i] = old - step
        down, pat_down = objective()
        p.flat[i] = old
        return (up - down) / (2 * step), pat_up == pat_down

    def derivative(p, i) -> float:
        # Richardson extrapolation gives O(h^4) truncation, so h can stay large
        # enough to avoid cancellation; the step shrinks only when the stencil
        # crosses a ReLU kink.
        step = h
        while True:
            wide, same_wide = central(p, i, step)
            narrow, same_narrow = central(p, i, step / 2)
            if (same_wide and same_narrow) or step < 1e-8:
                return (4 * narrow - wide) / 3
            step /= 10

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in model.params.items():
        for i in rng.choice(p.size, size=min(coords, p.size), replace=False):
            fd = derivative(p, i)
            an = grads[name].flat[i]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return worst


def check_gradients() -> float:
    sched = _sched((8,))
    batch = _toy_batch()
    worst = 0.0
    for head in Head:
        worst = max(worst, gradient_error(_small_model(head), batch, sched, TrainConfig()))
    sync_cfg = TrainConfig(layersync_weight=0.1, weak_idx=0, strong_idx=1)
    worst = max(worst, gradient_error(_small_model(Head.X_PRED), batch, sched, sync_cfg))
    return _expect(worst, 1e-4, "analytic vs finite-difference gradient")


def check_layersync_stopgrad() -> float:
    model = MlpModel(MlpConfig(field_shape=(8,), hidden=16, depth=4, seed=1))
    batch = _toy_batch(seed=1)
    out, cache = model.forward(batch.z_t, batch.t)
    _, d_weak = layersync_loss(model.hidden(cache, 0), model.hidden(cache, 2))
    grads = model.backward(cache, np.zeros_like(out), {0: d_weak})
    leak = max(float(np.max(np.abs(grads[k]))) for k in ("W1", "b1", "W2", "b2", "W3", "b3"))
    if leak != 0.0:
        raise CheckFailed(f"alignment term leaks {leak:.3e} into layers above the weak layer")
    return leak


def check_head_equivalence() -> float:
    sched = _sched((8,))
    batch = _toy_batch(n=4, seed=2)
    z, t = batch.z_t, batch.t
    outs = {
        Head.X_PRED: batch.x,
        Head.V_PRED: batch.v_star,
        Head.EPS_PRED: batch.e,
    }
    vels = {h: np.subtract(*assemble(o, z, t, h, sched)) for h, o in outs.items()}
    return _expect(max(_rel(v, batch.v_star) for v in vels.values()), 1e-8, "heads disagree at the oracle")


# -- sampler ------------------------------------------------------------------------


def check_beta_clamp() -> float:
    rng = np.random.default_rng(10)
    betas = []
    for _ in range(200):
        prev = rng.standard_normal(5)
        scale = 10.0 ** rng.uniform(-6, 6)
        betas.append(adaptive_beta(prev, prev + scale * rng.standard_normal(5), prev + rng.standard_normal(5)))
    betas = np.array(betas)
    if betas.min() < 0.05 or betas.max() > 0.95:
        raise CheckFailed(f"beta outside [0.05, 0.95]: {betas.min()}, {betas.max()}")
    prev = np.zeros(3)
    step = np.array([1.0, 2.0, 2.0])
    equal = adaptive_beta(prev, prev + step, prev - step)
    if equal != 0.5:
        raise CheckFailed(f"equal residuals gave beta {equal!r}, expected 0.5")
    return float(betas.max())


def check_cfg_interval() -> float:
    rng = np.random.default_rng(11)
    cond = (rng.standard_normal(4), rng.standard_normal(4))
    uncond = (rng.standard_normal(4), rng.standard_normal(4))
    for t in (0.0, 0.05, 0.1, 0.9, 0.95, 1.0):
        got = cfg_combine(cond, uncond, 3.5, t, (0.1, 0.9))
        if not all(np.array_equal(a, b) for a, b in zip(got, cond)):
            raise CheckFailed(f"guidance applied outside the interval at t={t}")
    inside = cfg_combine(cond, uncond, 3.5, 0.5, (0.1, 0.9))
    return _expect(_rel(inside[0], uncond[0] + 3.5 * (cond[0] - uncond[0])), 1e-12, "interval guidance")


def check_oracle_closed_loop() -> float:
    sched = _sched((8, 8))
    x = np.random.default_rng(12).standard_normal((2, 8, 8, 1))
    cfg = SamplerConfig(steps=512, solver="heun", beta_mode="fixed", beta=1.0, cfg_scale=1.0, seed=3)
    out, _ = sample(OracleModel(x), cfg, sched, (8, 8, 1), n=2)
    return _expect(_rel(out, x), 1e-2, "oracle closed-loop reconstruction")


def check_pure_blur_roundtrip() -> float:
    sched = _sched((8, 8))
    x = np.random.default_rng(13).standard_normal((1, 8, 8, 1))
    cfg = SamplerConfig(steps=256, solver="heun", cfg_scale=1.0)
    out, _ = sample_pure_blur(OracleModel(x), cfg, sched, x)
    return _expect(_rel(out, x), 1e-2, "pure-blur oracle round trip")


# -- toyverse -----------------------------------------------------------------------


def check_embedding() -> float:
    err = 0.0
    for D in (2, 8, 512):
        P = make_embedding(D, 0).P
        err = max(err, float(np.max(np.abs(P.T @ P - np.eye(2)))))
    return _expect(err, 1e-12, "embedding orthonormality")


def check_metrics_zero() -> float:
    spiral = SpiralSpec()
    emb = make_embedding(8, 1)
    pts = emb.embed(spiral.dense()[::37])
    off, dist = manifold_metrics(pts, emb, spiral)
    return _expect(max(off, dist), 1e-8, "metrics of on-manifold points")


# -- diagnostics ----------------------------------------------------------------------


def check_illposedness() -> float:
    sched = _sched((32,))
    rng = np.random.default_rng(14)
    x, e = rng.standard_normal((2, 32))
    worst = 0.0
    for t in (0.1, 0.5, 0.9):
        worst = max(worst, abs(hdfm_noise_sensitivity(x, e, t, sched, 1e-3) - (1 - t)))
    _expect(worst, 1e-10, "noise-branch sensitivity equals 1 - t")
    _expect(float(np.max(hdfm_data_sensitivity(np.linspace(1e-4, 1, 50)[:, None], sched.eigen))) - 1.0, 0.0, "data-branch gain above 1")
    gain = raw_inverse_gain(x, 3.0, sched.eigen, 1e-6)
    if not gain > 1e3:
        raise CheckFailed(f"raw inversion amplifies only {gain:.3g}")
    return worst


def check_tensor_roundtrip() -> float:
    rng = np.random.default_rng(15)
    for dtype in ("float32", "float64"):
        for shape in ((), (3,), (2, 3), (2, 3, 4), (1, 2, 3, 4)):
            arr = rng.standard_normal(shape).astype(dtype)
            back = decode_tensor(encode_tensor(arr))
            if back.dtype != arr.dtype or back.shape != arr.shape or back.tobytes() != arr.tobytes():
                raise CheckFailed(f"tensor round trip changed a {dtype} array of shape {shape}")
    return 0.0


CHECKS: list[tuple[str, str, Callable[[], float]]] = [
    ("spectral", "dct_roundtrip", check_dct_roundtrip),
    ("spectral", "dct_oracle", check_dct_oracle),
    ("spectral", "parseval", check_parseval),
    ("spectral", "heat_identity", check_heat_identity),
    ("spectral", "semigroup", check_semigroup),
    ("spectral", "heat_generator", check_heat_generator),
    ("spectral", "self_adjoint", check_self_adjoint),
    ("path", "velocity_fd", check_velocity_fd),
    ("path", "endpoints", check_path_endpoints),
    ("neural", "gradients", check_gradients),
    ("neural", "layersync_stopgrad", check_layersync_stopgrad),
    ("neural", "head_equivalence", check_head_equivalence),
    ("sampler", "beta_clamp", check_beta_clamp),
    ("sampler", "cfg_interval", check_cfg_interval),
    ("sampler", "oracle_closed_loop", check_oracle_closed_loop),
    ("sampler", "pure_blur_roundtrip", check_pure_blur_roundtrip),
    ("toyverse", "embedding", check_embedding),
    ("toyverse", "metrics_zero", check_metrics_zero),
    ("diagnostics", "illposedness", check_illposedness),
    ("diagnostics", "tensor_roundtrip", check_tensor_roundtrip),
]


def groups() -> list[str]:
    return sorted({g for g, _, _ in CHECKS})


def run_checks(filter: Optional[str] = None) -> list[CheckResult]:
    """Run every check whose group or ``group.name`` matches ``filter``."""
    selected = [c for c in CHECKS if filter is None or filter in (c[0], f"{c[0]}.{c[1]}")]
    if not selected:
        raise ValueError(f"no checks match {filter!r}; groups are {', '.join(groups())}")
    results = []
    for group, name, fn in selected:
        try:
            results.append(CheckResult(group, name, True, fn()))
        except CheckFailed as exc:
            results.append(CheckResult(group, name, False, float("nan"), str(exc)))
        except Exception as exc:  # a crash is a failed invariant, not a crashed suite
            msg = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
            results.append(CheckResult(group, name, False, float("nan"), msg))
    return results


def write_check_csv(results: list[CheckResult], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "check", "ok", "value"])
        for r in results:
            w.writerow([r.group, r.name, int(r.ok), repr(r.value)])
    return path
