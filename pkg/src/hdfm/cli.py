"""``hdfm`` command line: check, toy, spectrum, traj, train, sample.

Exit codes: 0 success, 1 failed invariant or invalid data, 2 usage error.
Every command writes its artifacts under ``--out-dir`` and takes an optional
``--config`` file of ``key = value`` lines; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, dump_config, load_config

log = logging.getLogger("hdfm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _ints(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def _strs(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _settings(args, defaults: dict, flag_keys) -> dict:
    """Defaults, then the config file, then any flag the user actually passed."""
    cfg = load_config(args.config, defaults) if args.config else dict(defaults)
    for key in flag_keys:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schedule(field_shape, blur_strength: float = 1.0):
    from .spectral import HeatSchedule, eigen_grid

    grid = field_shape if len(field_shape) == 1 else field_shape[:2]
    return HeatSchedule(eigen_grid(grid, blur_strength))


# -- check ---------------------------------------------------------------------


def cmd_check(args) -> int:
    from .checks import run_checks, write_check_csv

    try:
        results = run_checks(args.filter)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    write_check_csv(results, out / "check.csv")
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.group}.{r.name}" + ("" if r.ok else f": {r.message.splitlines()[0]}"))
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    for r in failed:
        print(f"\n[{r.group}.{r.name}]\n{r.message}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


# -- toy -----------------------------------------------------------------------

TOY_DEFAULTS = {
    "dims": [2, 8, 512],
    "heads": ["x", "v"],
    "seeds": [],
    "steps": 0,  # 0 keeps the per-dimension default budget
    "lr": 2e-3,
    "batch_size": 256,
    "hidden": 128,
    "depth": 5,
    "n_samples": 2000,
    "sampler_steps": 50,
    "seed": 0,
}


def _toy_cell(job):
    from dataclasses import replace

    from .toyverse import default_toy_sampler, default_toy_train, run_toy_cell

    D, head, seed, cfg = job
    train_cfg = default_toy_train(D)
    train_cfg = replace(train_cfg, lr=cfg["lr"], batch_size=cfg["batch_size"])
    if cfg["steps"] > 0:
        train_cfg = replace(train_cfg, steps=cfg["steps"])
    sampler_cfg = replace(default_toy_sampler(), steps=cfg["sampler_steps"])
    return run_toy_cell(D, head, seed, train_cfg, sampler_cfg, hidden=cfg["hidden"], depth=cfg["depth"], n_samples=cfg["n_samples"])


def cmd_toy(args) -> int:
    from .neural import TrainingDiverged
    from .toyverse import write_scatter_csv, write_toy_csv

    cfg = _settings(args, TOY_DEFAULTS, ["dims", "heads", "seeds", "steps"])
    seeds = cfg["seeds"] or [cfg["seed"], cfg["seed"] + 1, cfg["seed"] + 2]
    jobs = [(D, h, s, cfg) for D in cfg["dims"] for h in cfg["heads"] for s in seeds]
    try:
        if args.workers > 1:
            with ProcessPoolExecutor(args.workers) as pool:
                rows = list(pool.map(_toy_cell, jobs))
        else:
            rows = [_toy_cell(j) for j in jobs]
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = _out_dir(args)
    write_toy_csv(rows, out / "toy.csv", include_wall=args.timings)
    for r in rows:
        write_scatter_csv(r, out / f"scatter_D{r.D}_{r.head}_s{r.seed}.csv")
    for r in rows:
        print(f"D={r.D:<4d} head={r.head:<3s} seed={r.seed}  offplane={r.mean_offplane:.4g}  spiral_dist={r.mean_spiral_dist:.4g}")
    return EXIT_OK


# -- spectrum --------------------------------------------------------------------

SPECTRUM_DEFAULTS = {
    "images": None,
    "n": 500,
    "size": 32,
    "points": 40,
    "blur_strengths": [1.0],
    "cutoff": 0.5,
    "downsample": 4,
    "seed": 0,
}


def cmd_spectrum(args) -> int:
    from .diagnostics import image_crops, ratio_curves_analytic, synthetic_textures, write_ratio_csv

    cfg = _settings(args, SPECTRUM_DEFAULTS, ["images", "n", "points", "blur_strengths"])
    if cfg["images"]:
        data = image_crops(cfg["images"], cfg["n"], cfg["size"], cfg["seed"], cfg["downsample"])
    else:
        data = synthetic_textures(cfg["n"], cfg["size"], seed=cfg["seed"])
    ts = np.linspace(1e-4, 1.0, cfg["points"])
    curves = ratio_curves_analytic(data, blur_strengths=cfg["blur_strengths"], ts=ts, seed=cfg["seed"] + 1, cutoff_fraction=cfg["cutoff"])
    out = _out_dir(args)
    sweep = len(cfg["blur_strengths"]) > 1
    for c in curves:
        name = f"ratio_{c.scheme}"
        if sweep and c.scheme != "noise_fm":
            name += f"_r{c.blur_strength:g}"
        write_ratio_csv(c, out / f"{name}.csv")
        mid = slice(len(c.ts) // 3, 2 * len(c.ts) // 3)
        print(f"{name}: start {c.ratios[0]:.4g}  mid-third mean {c.ratios[mid].mean():.4g}  end {c.ratios[-1]:.4g}")
    return EXIT_OK


# -- traj --------------------------------------------------------------------------

TRAJ_DEFAULTS = {
    "dim": 8,
    "particles": 100,
    "points": 101,
    "checkpoint": None,
    "sampler_steps": 100,
    "seed": 0,
}


def cmd_traj(args) -> int:
    from .diagnostics import analytic_trajectories, straightness, write_straightness_csv
    from .sampler import SamplerConfig, sample
    from .toyverse import SpiralSpec, make_embedding, toy_schedule

    cfg = _settings(args, TRAJ_DEFAULTS, ["dim", "particles", "checkpoint"])
    D, n = cfg["dim"], cfg["particles"]
    sched = toy_schedule(D)
    if cfg["checkpoint"]:
        model = _load_model(cfg["checkpoint"])
        if model.config.field_shape != (D,):
            raise UsageError(f"checkpoint field {model.config.field_shape} does not match dim {D}")
        scfg = SamplerConfig(steps=cfg["sampler_steps"], solver="euler", beta_mode="fixed", cfg_scale=1.0, seed=cfg["seed"])
        _, traj = sample(model, scfg, sched, (D,), n=n)
        states = traj.stacked()
    else:
        rng = np.random.default_rng(cfg["seed"])
        x = make_embedding(D, cfg["seed"]).embed(SpiralSpec().sample(cfg["seed"], n))
        e = rng.standard_normal(x.shape)
        states = analytic_trajectories(x, e, sched, np.linspace(sched.t_floor, 1.0, cfg["points"]))
    report = straightness(states)
    out = _out_dir(args)
    write_straightness_csv(report, out / "straightness.csv")
    print(f"mean chord/arc: data space {report.mean_data:.6f}  DCT space {report.mean_dct:.6f}")
    return EXIT_OK


# -- train / sample --------------------------------------------------------------

TRAIN_DEFAULTS = {
    "data": "toy",  # toy, textures, or an image directory
    "dim": 2,
    "size": 8,
    "channels": 1,
    "n_data": 10000,
    "head": "x",
    "kind": "hdfm",
    "steps": 2000,
    "lr": 2e-3,
    "batch_size": 256,
    "hidden": 128,
    "depth": 5,
    "layersync": 0.0,
    "loss_s_min": 0.05,
    "blur_strength": 1.0,
    "seed": 0,
}


def _training_data(cfg) -> np.ndarray:
    from .diagnostics import image_crops, synthetic_textures
    from .toyverse import SpiralSpec, make_embedding

    if cfg["data"] == "toy":
        return make_embedding(cfg["dim"], cfg["seed"]).embed(SpiralSpec().sample(cfg["seed"], cfg["n_data"]))
    if cfg["data"] == "textures":
        return synthetic_textures(cfg["n_data"], cfg["size"], cfg["channels"], seed=cfg["seed"])
    if not Path(cfg["data"]).is_dir():
        raise UsageError(f"data must be 'toy', 'textures' or an image directory, got {cfg['data']!r}")
    return image_crops(cfg["data"], cfg["n_data"], cfg["size"], cfg["seed"])


def cmd_train(args) -> int:
    from .neural import MlpConfig, MlpModel, TrainConfig, TrainingDiverged, batch_stream, train
    from .path import PathKind

    cfg = _settings(args, TRAIN_DEFAULTS, ["data", "steps", "head", "kind"])
    data = _training_data(cfg)
    field = data.shape[1:]
    sched = _schedule(field, cfg["blur_strength"])
    kind = PathKind(cfg["kind"])
    model = MlpModel(MlpConfig(field_shape=field, hidden=cfg["hidden"], depth=cfg["depth"], head=cfg["head"], seed=cfg["seed"], dtype="float32"))
    tcfg = TrainConfig(
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        steps=cfg["steps"],
        layersync_weight=cfg["layersync"],
        lr_schedule="cosine",
        loss_s_min=cfg["loss_s_min"],
        seed=cfg["seed"],
        log_every=max(1, cfg["steps"] // 20),
    )
    out = _out_dir(args)
    stream = batch_stream(data, sched, tcfg.batch_size, np.random.default_rng(cfg["seed"] + 1000), kind)
    try:
        result = train(model, stream, tcfg, sched, kind, checkpoint=out / "model")
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    with (out / "loss.csv").open("w") as fh:
        fh.write("step,velocity_loss\n")
        for step, loss in result.curve:
            fh.write(f"{step},{loss!r}\n")
    (out / "train.cfg").write_text(dump_config(cfg))
    print(f"trained {model.n_params()} parameters; final loss {result.curve[-1][1]:.5g}" if result.curve else "no steps run")
    return EXIT_OK


def _load_model(path):
    from .neural import MlpModel

    path = Path(path)
    if not (path / "manifest.json").is_file():
        raise UsageError(f"no checkpoint at {path} (expected {path / 'manifest.json'})")
    return MlpModel.load(path)


SAMPLE_DEFAULTS = {
    "checkpoint": None,
    "oracle": None,  # tensor file with one clean field; replaces the network
    "kind": "hdfm",
    "n": 4,
    "steps": 50,
    "solver": "heun",
    "cfg_scale": 1.0,
    "beta_mode": "adaptive",
    "beta": 1.0,
    "blur_strength": 1.0,
    "images": True,
    "seed": 0,
}


def cmd_sample(args) -> int:
    from .path import PathKind
    from .sampler import OracleModel, SamplerConfig, sample
    from .tensorio import read_tensor, write_pnm, write_tensor

    cfg = _settings(args, SAMPLE_DEFAULTS, ["checkpoint", "oracle", "n", "steps", "solver", "kind"])
    kind = PathKind(cfg["kind"])
    x_init = None
    if cfg["oracle"]:
        x = read_tensor(cfg["oracle"]).astype(np.float64)
        if x.ndim == 2:
            x = x[..., None]  # a grayscale image; batches of 2D fields carry a channel axis
        model, field = OracleModel(x), x.shape
        x_init = np.broadcast_to(x, (cfg["n"], *field))
    elif cfg["checkpoint"]:
        model = _load_model(cfg["checkpoint"])
        field = model.config.field_shape
        if kind is PathKind.PURE_BLUR:
            raise UsageError("pure-blur sampling from a checkpoint needs an --oracle start field")
    else:
        raise UsageError("sample needs --checkpoint DIR or --oracle FILE")
    sched = _schedule(field, cfg["blur_strength"])
    scfg = SamplerConfig(
        steps=cfg["steps"], solver=cfg["solver"], cfg_scale=cfg["cfg_scale"], beta_mode=cfg["beta_mode"], beta=cfg["beta"], seed=cfg["seed"]
    )
    samples, traj = sample(model, scfg, sched, field, n=cfg["n"], kind=kind, x_init=x_init)
    out = _out_dir(args)
    write_tensor(out / "samples.hdt", samples)
    traj.write_csv(out / "trajectory.csv")
    if cfg["images"] and len(field) in (2, 3) and (len(field) == 2 or field[2] in (1, 3)):
        for i, img in enumerate(samples):
            ext = "ppm" if img.ndim == 3 and img.shape[2] == 3 else "pgm"
            write_pnm(out / f"sample_{i:03d}.{ext}", img)
    if cfg["oracle"]:
        err = np.linalg.norm(samples - x_init) / np.linalg.norm(x_init)
        print(f"oracle reconstruction relative L2 error {err:.3e}")
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="base random seed (default 0)")
    shared.add_argument("--config", default=None, help="key = value settings file")
    shared.add_argument("--out-dir", default="hdfm_out", help="artifact directory (default hdfm_out)")
    shared.add_argument("--workers", type=int, default=1, help="parallel worker processes (toy cells only)")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hdfm", description="Heat-dissipation flow matching workbench.")
    parser.add_argument("--version", action="version", version=f"hdfm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[shared], help="run the invariant suite")
    p.add_argument("--filter", default=None, help="group (e.g. spectral) or group.check")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("toy", parents=[shared], help="spiral-in-D parameterization comparison")
    p.add_argument("--dims", type=_ints, default=None, help="comma list of ambient dimensions")
    p.add_argument("--heads", type=_strs, default=None, help="comma list of heads (x, v, eps)")
    p.add_argument("--seeds", type=_ints, default=None, help="comma list (default: seed, seed+1, seed+2)")
    p.add_argument("--steps", type=int, default=None, help="training steps for every cell")
    p.add_argument("--timings", action="store_true", help="fill the wall_seconds column")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("spectrum", parents=[shared], help="frequency-ratio curves of analytic paths")
    p.add_argument("--images", default=None, help="image directory (default: synthetic textures)")
    p.add_argument("--n", type=int, default=None, help="number of samples")
    p.add_argument("--points", type=int, default=None, help="time grid size")
    p.add_argument("--blur-strengths", dest="blur_strengths", type=_floats, default=None, help="comma list of r")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("traj", parents=[shared], help="chord/arc straightness in data and DCT space")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--particles", type=int, default=None)
    p.add_argument("--checkpoint", default=None, help="use learned trajectories from this model")
    p.set_defaults(func=cmd_traj)

    p = sub.add_parser("train", parents=[shared], help="train an MLP and save a checkpoint")
    p.add_argument("--data", default=None, help="toy, textures, or an image directory")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--head", choices=["x", "v", "eps"], default=None)
    p.add_argument("--kind", choices=["hdfm", "noise_fm", "pure_blur"], default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[shared], help="integrate the sampling ODE")
    p.add_argument("--checkpoint", default=None, help="model directory written by train")
    p.add_argument("--oracle", default=None, help="tensor file with the clean field; bypasses the network")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--solver", choices=["euler", "heun"], default=None)
    p.add_argument("--kind", choices=["hdfm", "noise_fm", "pure_blur"], default=None)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from .tensorio import TensorFormatError

    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"hdfm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TensorFormatError, ValueError) as exc:
        print(f"hdfm {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
