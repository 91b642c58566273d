import io

import numpy as np
import pytest

from diswaps.simulate import (
    JumpParams,
    ModelKind,
    ModelSpec,
    Partition,
    SimulationError,
    make_partition,
    parse_partition,
    raw_moments_from_cumulants,
    read_panel_binary,
    simulate_paths,
    write_panel_binary,
    write_panel_csv,
)


def test_regular_partitions():
    assert np.array_equal(make_partition("regular", 1, 1.0).times, [0.0, 1.0])
    assert np.allclose(make_partition("regular", 4, 1.0).times, [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(SimulationError):
        make_partition("regular", 0, 1.0)


def test_partition_invariants():
    with pytest.raises(SimulationError):
        Partition(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(SimulationError):
        Partition(np.array([0.1, 1.0]))
    with pytest.raises(SimulationError):
        Partition(np.array([0.0]))


def test_refine_contains_base():
    base = make_partition("regular", 12, 1.0)
    fine = make_partition("refine", 252, 1.0, base=base)
    assert fine.N == 252
    assert base.is_subset_of(fine)
    odd = make_partition("refine", 100, 1.0, base=base)
    assert base.is_subset_of(odd)


def test_irregular_deterministic():
    a = make_partition("irregular", 100, 1.0, seed=7)
    b = make_partition("irregular", 100, 1.0, seed=7)
    c = make_partition("irregular", 100, 1.0, seed=8)
    assert a == b and a != c
    assert a.N == 100 and np.all(np.diff(a.times) > 0)


def test_parse_partition():
    assert parse_partition("daily").N == 252
    assert parse_partition("trivial").N == 1
    assert parse_partition("irregular:7").label == "irregular-seed7"
    assert parse_partition("irregular:7:20").N == 20
    with pytest.raises(SimulationError):
        parse_partition("sometimes")


def test_model_domain():
    with pytest.raises(SimulationError):
        ModelSpec(ModelKind.GBM, -1.0, 0.2)
    with pytest.raises(SimulationError):
        ModelSpec(ModelKind.MertonJump, 100.0, 0.2)
    with pytest.raises(SimulationError):
        ModelSpec(ModelKind.MertonJump, 100.0, 0.2, jump=JumpParams(-1.0, 0.0, 0.1))


def test_gbm_martingale_and_variance(gbm):
    p = make_partition("regular", 252, 1.0)
    pan = simulate_paths(gbm, p, 100_000, 11)
    r = pan.F[:, -1] / 100.0
    assert abs(r.mean() - 1) < 3 * r.std(ddof=1) / np.sqrt(r.size)
    dx = pan.x[:, -1] - pan.x[:, 0]
    v = dx.var(ddof=1)
    se_v = np.sqrt(2.0 / (dx.size - 1)) * 0.04
    assert abs(v - 0.04) < 3 * se_v


def test_merton_martingale_every_time(merton):
    p = make_partition("regular", 12, 1.0)
    pan = simulate_paths(merton, p, 100_000, 5)
    r = pan.F[:, 1:] / 100.0
    se = r.std(axis=0, ddof=1) / np.sqrt(r.shape[0])
    assert np.all(np.abs(r.mean(axis=0) - 1) < 4 * se)


def test_heston_martingale(heston):
    p = make_partition("regular", 12, 1.0)
    pan = simulate_paths(heston, p, 50_000, 5)
    r = pan.F[:, 1:] / 100.0
    se = r.std(axis=0, ddof=1) / np.sqrt(r.shape[0])
    assert np.all(np.abs(r.mean(axis=0) - 1) < 4 * se)
    assert "_v" in pan.aux


def test_restriction_is_pathwise_exact(gbm):
    fine = make_partition("regular", 252, 1.0)
    coarse = make_partition("regular", 12, 1.0)
    pan = simulate_paths(gbm, fine, 3000, 3)
    sub = pan.restrict(coarse)
    assert sub.F.shape == (3000, 13)
    assert np.array_equal(sub.x[:, -1], pan.x[:, -1])


def test_refinement_consistency_in_law(gbm):
    fine = make_partition("regular", 252, 1.0)
    coarse = make_partition("regular", 12, 1.0)
    a = simulate_paths(gbm, fine, 50_000, 3).restrict(coarse).x[:, -1]
    b = simulate_paths(gbm, coarse, 50_000, 4).x[:, -1]
    se = np.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) < 4 * se
    assert abs(a.var() - b.var()) < 4 * 0.04 * np.sqrt(4.0 / a.size)


def test_determinism_and_threads(merton):
    p = make_partition("irregular", 50, 1.0, seed=3)
    a = simulate_paths(merton, p, 5000, 99, threads=1)
    b = simulate_paths(merton, p, 5000, 99, threads=4)
    assert np.array_equal(a.x, b.x)
    c = simulate_paths(merton, p, 3000, 99)
    assert np.array_equal(a.x[:3000], c.x)


def test_cumulant_moments():
    mu = raw_moments_from_cumulants([None, 0.5, 2.0, 0.0, 0.0], 4)
    assert mu[:5] == pytest.approx([1.0, 0.5, 2.25, 3.125, 3 * 4 + 6 * 0.25 * 2 + 0.0625])


def test_panel_exports(tmp_path, gbm):
    pan = simulate_paths(gbm, make_partition("regular", 4, 1.0), 3, 1)
    write_panel_binary(pan, tmp_path / "p.bin")
    back = read_panel_binary(tmp_path / "p.bin")
    assert back["seed"] == 1
    assert np.array_equal(back["components"]["F"], pan.F)
    write_panel_csv(pan, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "path,time,component,value"
    assert len(lines) == 1 + 3 * 5 * 2
