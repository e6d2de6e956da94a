import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdiversity.assigner import GroupAssignment
from qdiversity.mixing import (
    MAJ_MIN,
    MIN_MIN,
    EmptyMinorityError,
    MixSpec,
    build_mixed_groups,
    effective_coef,
    mix_pair,
    sample_lambda,
)
from conftest import tiny_dataset


def _assignment(rng, n, minority_rate=0.3):
    p = np.where(rng.uniform(size=n) < minority_rate, 0.9, 0.1)
    p[0] = 0.9
    return GroupAssignment.from_probs(p)


def test_uniform_beta_mean():
    lam = sample_lambda(1.0, np.random.default_rng(0), size=100_000)
    assert abs(lam.mean() - 0.5) <= 0.01


def test_beta9_variance():
    lam = sample_lambda(9.0, np.random.default_rng(1), size=100_000)
    want = 1.0 / (4 * 19)
    assert abs(want - 0.01316) < 1e-5
    assert abs(lam.var() - want) <= 0.1 * want


@pytest.mark.parametrize("alpha", [0.01, 0.1, 1.0, 50.0])
def test_draws_strictly_inside(alpha):
    lam = sample_lambda(alpha, np.random.default_rng(2), size=50_000)
    assert lam.min() > 0.0 and lam.max() < 1.0


def test_scalar_draw_is_float():
    assert isinstance(sample_lambda(2.0, np.random.default_rng(0)), float)


def test_bad_alpha():
    with pytest.raises(ValueError):
        sample_lambda(0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        MixSpec(alpha=-1.0)
    with pytest.raises(ValueError, match="mix_fraction"):
        MixSpec(mix_fraction=1.5)


def test_min_min_endpoint():
    xi, xj = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
    x, _ = mix_pair(xi, [1, 0], xj, [0, 1], 0.999, MIN_MIN)
    assert np.linalg.norm(x - xi) <= 0.001 * np.linalg.norm(xi - xj) + 1e-15


def test_maj_min_gives_minority_larger_share():
    xi, xj = np.array([10.0]), np.array([0.0])
    x, y = mix_pair(xi, [1, 0], xj, [0, 1], 0.9, MAJ_MIN)
    assert np.isclose(x[0], 1.0)  # 0.1 on the majority example
    assert np.allclose(y, [0.1, 0.9])


def test_unknown_kind():
    with pytest.raises(ValueError):
        mix_pair([0], [1], [0], [1], 0.5, "other")


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.sampled_from([MAJ_MIN, MIN_MIN]), st.integers(0, 10_000))
def test_mixed_label_on_simplex(lam, kind, seed):
    rng = np.random.default_rng(seed)
    yi, yj = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
    _, y = mix_pair(rng.standard_normal(2), yi, rng.standard_normal(2), yj, lam, kind)
    assert abs(y.sum() - 1.0) <= 1e-12 and (y >= 0).all()
    c = float(effective_coef(lam, kind))
    if kind == MAJ_MIN:
        assert c <= 0.5


def test_zero_fraction_is_empty(rng):
    data = tiny_dataset(rng)
    out = build_mixed_groups(data, _assignment(rng, data.n), MixSpec(mix_fraction=0.0))
    assert len(out) == 0 and out.features.shape == (0, data.dim)


def test_empty_minority(rng):
    data = tiny_dataset(rng)
    with pytest.raises(EmptyMinorityError):
        build_mixed_groups(data, GroupAssignment.from_probs(np.zeros(data.n)), MixSpec())


def test_all_minority_keeps_sampled_coefficients(rng):
    data = tiny_dataset(rng, n=4000)
    spec = MixSpec(alpha=2.0, mix_fraction=1.0, seed=5)
    out = build_mixed_groups(data, GroupAssignment.from_probs(np.ones(data.n)), spec)
    assert set(out.kinds) == {MIN_MIN}
    # unfolded Beta(2, 2) draws: about half land above 0.5
    assert abs(np.mean(out.coef_i > 0.5) - 0.5) < 0.03
    assert abs(out.coef_i.var() - 1 / 20) < 0.005


def test_batch_size_and_sources(rng):
    data = tiny_dataset(rng, n=41)
    a = _assignment(rng, data.n)
    out = build_mixed_groups(data, a, MixSpec(mix_fraction=0.5))
    assert len(out) == round(0.5 * 41)
    assert np.all(a.hard[out.src_j] == 0)
    maj = out.kinds == MAJ_MIN
    assert np.array_equal(maj, a.hard[out.src_i] == 1)
    assert np.all(out.coef_i[maj] <= 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_rows_reconstruct_from_sources(seed):
    rng = np.random.default_rng(seed)
    data = tiny_dataset(rng, n=50, C=3)
    out = build_mixed_groups(data, _assignment(rng, data.n), MixSpec(mix_fraction=0.8, seed=seed))
    Y = np.eye(3)[data.labels]
    c = out.coef_i[:, None]
    X = c * data.features[out.src_i] + (1 - c) * data.features[out.src_j]
    T = c * Y[out.src_i] + (1 - c) * Y[out.src_j]
    assert np.max(np.abs(X - out.features)) <= 1e-12
    assert np.max(np.abs(T - out.soft_labels)) <= 1e-12
    assert np.max(np.abs(out.soft_labels.sum(axis=1) - 1)) <= 1e-12


def test_group_ids_follow_argmax_label(rng):
    data = tiny_dataset(rng, n=50)
    out = build_mixed_groups(data, _assignment(rng, data.n), MixSpec(), minority_cell=[7, 9])
    want = np.array([7, 9])[out.soft_labels.argmax(axis=1)]
    assert np.array_equal(out.group_ids, want)


def test_single_pair_is_new_point(rng):
    data = tiny_dataset(rng, n=20)
    p = np.zeros(data.n)
    p[[3, 4]] = 1.0
    for seed in range(50):
        out = build_mixed_groups(data, GroupAssignment.from_probs(p), MixSpec(mix_fraction=0.05, seed=seed))
        assert len(out) == 1 and out.src_i[0] != out.src_j[0]


def test_deterministic(rng):
    data = tiny_dataset(rng, n=30)
    a = _assignment(rng, data.n)
    x = build_mixed_groups(data, a, MixSpec(seed=3))
    y = build_mixed_groups(data, a, MixSpec(seed=3))
    assert np.array_equal(x.features, y.features)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.02, 1.0))
def test_unique_points_grow(seed, frac):
    rng = np.random.default_rng(seed)
    data = tiny_dataset(rng, n=30)
    out = build_mixed_groups(data, _assignment(rng, data.n), MixSpec(mix_fraction=frac, seed=seed))
    assert len(out) >= 1
    rows = np.vstack([data.features, out.features])
    assert len(np.unique(rows, axis=0)) > data.n
