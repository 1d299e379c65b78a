import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdfm.neural import TrainConfig
from hdfm.sampler import SamplerConfig
from hdfm.toyverse import (
    SpiralSpec,
    default_toy_steps,
    make_embedding,
    manifold_metrics,
    run_toy_comparison,
    toy_corruption,
    toy_schedule,
    write_scatter_csv,
    write_toy_csv,
    TOY_COLUMNS,
)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([2, 3, 8, 16, 512]), st.integers(0, 1000))
def test_embedding_is_isometric(D, seed):
    emb = make_embedding(D, seed)
    assert np.max(np.abs(emb.P.T @ emb.P - np.eye(2))) < 1e-12
    xhat = np.random.default_rng(seed).standard_normal((5, 2))
    x = emb.embed(xhat)
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), np.linalg.norm(xhat, axis=1), rtol=1e-10)
    np.testing.assert_allclose(emb.project(x), xhat, atol=1e-10)
    assert np.max(emb.offplane(x)) < 1e-10


def test_embedding_is_seeded_and_validated():
    np.testing.assert_array_equal(make_embedding(8, 3).P, make_embedding(8, 3).P)
    assert not np.array_equal(make_embedding(8, 3).P, make_embedding(8, 4).P)
    with pytest.raises(ValueError):
        make_embedding(1, 0)


def test_projector_is_idempotent():
    emb = make_embedding(16, 0)
    proj = emb.P @ emb.P.T
    np.testing.assert_allclose(proj @ proj, proj, atol=1e-12)


def test_random_ambient_point_is_off_plane():
    emb = make_embedding(512, 0)
    assert emb.offplane(np.random.default_rng(0).standard_normal(512)) > 0


def test_spiral_sampling():
    spiral = SpiralSpec()
    a = spiral.sample(0)
    assert a.shape == (10_000, 2)
    np.testing.assert_array_equal(a, spiral.sample(0))
    r = np.linalg.norm(spiral.curve(np.array([0.0, 4 * np.pi])), axis=1)
    np.testing.assert_allclose(r, [0.1, 0.1 + 0.32 * np.pi])


def test_metrics_of_clean_spiral_are_zero():
    spiral = SpiralSpec()
    emb = make_embedding(8, 1)
    off, dist = manifold_metrics(emb.embed(spiral.dense()), emb, spiral)
    assert off < 1e-8 and dist < 1e-8


def test_offplane_matches_chi_mean():
    # isotropic noise of scale s leaves s * chi_{D-2} off the plane, mean ~ s sqrt(D - 2)
    D, s = 512, 0.05
    emb = make_embedding(D, 2)
    rng = np.random.default_rng(2)
    x = emb.embed(SpiralSpec().sample(2, 2000)) + s * rng.standard_normal((2000, D))
    off, _ = manifold_metrics(x, emb, SpiralSpec())
    assert abs(off - s * np.sqrt(D - 2)) < 0.1 * s * np.sqrt(D - 2)


def test_metrics_in_two_dimensions():
    emb = make_embedding(2, 0)
    x = np.random.default_rng(3).standard_normal((50, 2))
    off, dist = manifold_metrics(x, emb, SpiralSpec())
    assert off < 1e-12 and dist > 0
    with pytest.raises(ValueError):
        manifold_metrics(np.zeros((0, 2)), emb, SpiralSpec())


def test_toy_corruption_endpoint_and_two_point_grid():
    sched = toy_schedule(2)
    np.testing.assert_allclose(sched.eigen.lam, [0.0, -np.pi**2 / 4])
    x, e = np.random.default_rng(4).standard_normal((2, 3, 2))
    np.testing.assert_allclose(toy_corruption(x, 1.0, e, sched).z_t, x, atol=1e-14)


def test_toy_corruption_velocity_finite_difference():
    sched = toy_schedule(8)
    x, e = np.random.default_rng(5).standard_normal((2, 8))
    h = 1e-5
    fd = (toy_corruption(x, 0.4 + h, e, sched).z_t - toy_corruption(x, 0.4 - h, e, sched).z_t) / (2 * h)
    v = toy_corruption(x, 0.4, e, sched).v_star
    assert np.linalg.norm(fd - v) / np.linalg.norm(v) < 1e-6


def test_default_budget_by_dimension():
    assert default_toy_steps(2) > default_toy_steps(8) > default_toy_steps(512)


def test_tiny_comparison_is_reproducible(tmp_path):
    kw = dict(
        train_cfg=TrainConfig(steps=20, batch_size=32),
        sampler_cfg=SamplerConfig(steps=5, solver="euler", beta_mode="fixed", cfg_scale=1.0),
        hidden=16,
        depth=3,
        n_samples=50,
    )
    a = run_toy_comparison([2, 8], ["x", "v"], [0], **kw)
    b = run_toy_comparison([2, 8], ["x", "v"], [0], **kw)
    pa, pb = write_toy_csv(a, tmp_path / "a.csv"), write_toy_csv(b, tmp_path / "b.csv")
    assert pa.read_bytes() == pb.read_bytes()
    rows = list(csv.reader(open(pa)))
    assert rows[0] == TOY_COLUMNS and len(rows) == 5
    assert all(r[-1] == "" for r in rows[1:])
    sc = list(csv.reader(open(write_scatter_csv(a[0], tmp_path / "s.csv"))))
    assert sc[0] == ["xhat1", "xhat2"] and len(sc) == 51
