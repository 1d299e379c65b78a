import csv

import numpy as np
import pytest

import hdfm.checks
from hdfm.cli import main
from hdfm.spectral import EigenGrid, eigen_grid
from hdfm.tensorio import read_tensor, write_tensor


def flipped_eigen_grid(shape, blur_strength=1.0):
    """A grid with the eigenvalue sign inverted, built around the validator."""
    good = eigen_grid(shape, blur_strength)
    bad = object.__new__(EigenGrid)
    object.__setattr__(bad, "lam", -good.lam)
    object.__setattr__(bad, "blur_strength", blur_strength)
    return bad


def test_check_passes(tmp_path, capsys):
    assert main(["check", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "check.csv")))
    assert rows[0] == ["group", "check", "ok", "value"]
    assert all(r[2] == "1" for r in rows[1:])
    assert "checks passed" in capsys.readouterr().out


def test_check_reports_corrupted_eigenvalues(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(hdfm.checks, "eigen_grid", flipped_eigen_grid)
    assert main(["check", "--filter", "spectral", "--out-dir", str(tmp_path)]) == 1
    out = capsys.readouterr().out
    assert "FAIL spectral.semigroup" in out


def test_check_filter(tmp_path):
    assert main(["check", "--filter", "path", "--out-dir", str(tmp_path)]) == 0
    groups = {r[0] for r in list(csv.reader(open(tmp_path / "check.csv")))[1:]}
    assert groups == {"path"}
    assert main(["check", "--filter", "nothing", "--out-dir", str(tmp_path)]) == 2


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["toy", "--dims", "two"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["spectrum", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2


def test_toy_tiny_run_is_byte_identical(tmp_path):
    args = ["toy", "--dims", "2", "--seeds", "0", "--steps", "30", "--seed", "0"]
    cfg = tmp_path / "toy.cfg"
    cfg.write_text("hidden = 16\ndepth = 3\nn_samples = 64\nsampler_steps = 5\nbatch_size = 32\n")
    for name in ("a", "b"):
        assert main(args + ["--config", str(cfg), "--out-dir", str(tmp_path / name)]) == 0
    for f in ("toy.csv", "scatter_D2_x_s0.csv", "scatter_D2_v_s0.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_spectrum_writes_three_curves(tmp_path):
    assert main(["spectrum", "--n", "8", "--points", "40", "--out-dir", str(tmp_path)]) == 0
    for scheme in ("noise_fm", "hdfm", "pure_blur"):
        rows = list(csv.reader(open(tmp_path / f"ratio_{scheme}.csv")))
        assert len(rows) == 41


def test_spectrum_blur_sweep(tmp_path):
    assert main(["spectrum", "--n", "4", "--points", "5", "--blur-strengths", "1,0.5", "--out-dir", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.glob("*.csv"))
    assert names == ["ratio_hdfm_r0.5.csv", "ratio_hdfm_r1.csv", "ratio_noise_fm.csv", "ratio_pure_blur_r0.5.csv", "ratio_pure_blur_r1.csv"]


def test_traj(tmp_path, capsys):
    assert main(["traj", "--dim", "2", "--particles", "10", "--out-dir", str(tmp_path)]) == 0
    assert len((tmp_path / "straightness.csv").read_text().splitlines()) == 11
    assert "DCT space" in capsys.readouterr().out


def test_sample_with_oracle(tmp_path, capsys):
    x = np.random.default_rng(0).uniform(-1, 1, (6, 6, 3))
    write_tensor(tmp_path / "x.hdt", x)
    out = tmp_path / "out"
    cfg = tmp_path / "s.cfg"
    cfg.write_text("beta_mode = fixed\n")
    assert main(["sample", "--oracle", str(tmp_path / "x.hdt"), "--n", "2", "--steps", "200", "--config", str(cfg), "--out-dir", str(out)]) == 0
    samples = read_tensor(out / "samples.hdt")
    assert samples.shape == (2, 6, 6, 3)
    assert np.linalg.norm(samples - x) / np.linalg.norm(np.broadcast_to(x, samples.shape)) < 1e-2
    assert (out / "sample_000.ppm").is_file() and (out / "trajectory.csv").is_file()
    assert "relative L2 error" in capsys.readouterr().out


def test_sample_pure_blur_with_oracle(tmp_path):
    write_tensor(tmp_path / "x.hdt", np.random.default_rng(1).standard_normal((8, 8)))
    assert main(["sample", "--oracle", str(tmp_path / "x.hdt"), "--kind", "pure_blur", "--n", "1", "--steps", "64", "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "sample_000.pgm").is_file()


def test_train_then_sample(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("hidden = 16\ndepth = 3\nbatch_size = 16\nn_data = 64\nsize = 4\n")
    assert main(["train", "--data", "textures", "--steps", "5", "--config", str(cfg), "--out-dir", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "model" / "manifest.json").is_file()
    assert (tmp_path / "run" / "loss.csv").is_file()
    assert main(["sample", "--checkpoint", str(tmp_path / "run" / "model"), "--n", "2", "--steps", "4", "--out-dir", str(tmp_path / "s")]) == 0
    assert read_tensor(tmp_path / "s" / "samples.hdt").shape == (2, 4, 4, 1)


def test_sample_errors(tmp_path):
    assert main(["sample", "--out-dir", str(tmp_path)]) == 2
    assert main(["sample", "--checkpoint", str(tmp_path / "missing"), "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.hdt"
    bad.write_bytes(b"HDT1\x01\x01\x05\x00\x00\x00" + b"\x00" * 8)
    assert main(["sample", "--oracle", str(bad), "--out-dir", str(tmp_path)]) == 1


def test_version(capsys):
    with pytest.raises(SystemExit):
        from hdfm.cli import build_parser

        build_parser().parse_args(["--version"])
    assert "hdfm" in capsys.readouterr().out
