import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import space
from cospacemine.cospace import (
    CoSpace,
    FeatureSpace,
    FileSequenceProvider,
    InMemoryProvider,
    RankDeficiencyWarning,
    fix_signs,
    make_cospace,
    pca_fit,
    reduce,
    reduce_cospace,
)
from cospacemine.dataset import write_features


def test_feature_space_validates_ids_and_values():
    with pytest.raises(ValueError):
        FeatureSpace(("a", "a"), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        FeatureSpace(("a", "b"), np.array([[0.0], [np.nan]]))
    with pytest.raises(ValueError):
        FeatureSpace(("a",), np.zeros((2, 1)))


def test_feature_space_is_read_only_copy():
    x = np.zeros((2, 2))
    fs = FeatureSpace(("a", "b"), x)
    x[0, 0] = 5
    assert fs.vectors[0, 0] == 0
    with pytest.raises(ValueError):
        fs.vectors[0, 0] = 1


def test_identical_spaces_give_identical_sides():
    fs = space(np.arange(6.0).reshape(3, 2))
    cs = make_cospace(fs, fs)
    assert cs.before == cs.after


def test_permuted_after_is_aligned_by_id():
    fs = space(np.arange(8.0).reshape(4, 2))
    order = [2, 0, 3, 1]
    perm = FeatureSpace(tuple(fs.ids[i] for i in order), fs.vectors[order])
    cs = make_cospace(fs, perm)
    assert cs.after.ids == fs.ids
    np.testing.assert_array_equal(cs.after.vectors, fs.vectors)


def test_missing_id_is_rejected():
    fs = space(np.arange(6.0).reshape(3, 2))
    short = FeatureSpace(fs.ids[:2], fs.vectors[:2])
    with pytest.raises(ValueError):
        make_cospace(fs, short)
    with pytest.raises(ValueError):
        CoSpace(fs, FeatureSpace(fs.ids[::-1], fs.vectors))


def test_identity_reduce_returns_input():
    fs = space(np.random.default_rng(0).normal(size=(5, 3)))
    assert reduce(fs, 3, "identity") is fs
    with pytest.raises(ValueError):
        reduce(fs, 2, "identity")


def test_rank_one_pca():
    direction = np.array([3.0, -4.0, 12.0]) / 13.0
    x = np.outer(np.linspace(-2, 5, 11), direction)
    model = pca_fit(x, 1)
    assert model.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)
    centered = x - x.mean(axis=0)
    residual = centered - model.transform(x) @ model.components
    assert np.abs(residual).max() < 1e-12
    with pytest.warns(RankDeficiencyWarning):
        padded = pca_fit(x, 2)
    assert padded.explained_variance[1] == 0.0
    assert not np.any(padded.components[1])


def test_full_rank_reconstruction_matches_eigendecomposition(rng):
    x = rng.normal(size=(50, 10)) @ rng.normal(size=(10, 10))
    model = pca_fit(x, 10)
    centered = x - x.mean(axis=0)
    recon = model.transform(x) @ model.components
    np.testing.assert_allclose(recon, centered, atol=1e-8)
    # eigendecomposition oracle: same variances and the same subspaces
    evals, evecs = np.linalg.eigh(np.cov(centered, rowvar=False))
    order = np.argsort(evals)[::-1]
    np.testing.assert_allclose(model.explained_variance, evals[order], rtol=1e-9)
    for i, j in enumerate(order):
        assert abs(abs(model.components[i] @ evecs[:, j]) - 1.0) < 1e-8


def test_sign_convention():
    comps = fix_signs(np.array([[0.1, -0.9, 0.2], [0.0, 0.0, 0.0], [-0.5, 0.5, 0.1]]))
    assert comps[0, 1] > 0
    assert not np.any(comps[1])
    assert comps[2, 0] > 0  # magnitude tie goes to the lower coordinate


def test_reduce_to_15_from_wide_sides(rng):
    ids = tuple(f"i{k}" for k in range(40))
    cs = CoSpace(FeatureSpace(ids, rng.normal(size=(40, 4096))), FeatureSpace(ids, rng.normal(size=(40, 4096))))
    out = reduce_cospace(cs, 15)
    assert out.before.dim == out.after.dim == 15


def test_target_dim_too_large():
    fs = space(np.random.default_rng(1).normal(size=(6, 3)))
    with pytest.raises(ValueError):
        reduce(fs, 4)
    with pytest.raises(ValueError):
        reduce_cospace(make_cospace(fs, fs), 4)


def test_random_projection_is_seeded(rng):
    fs = space(rng.normal(size=(8, 6)))
    a = reduce(fs, 3, "random-projection", seed=7)
    b = reduce(fs, 3, "random-projection", seed=7)
    c = reduce(fs, 3, "random-projection", seed=8)
    assert a == b
    assert not np.array_equal(a.vectors, c.vectors)


@settings(max_examples=40, deadline=None)
@given(
    x=arrays(np.float64, st.tuples(st.integers(3, 20), st.integers(1, 6)), elements=st.floats(-100, 100)),
    frac=st.floats(0.2, 1.0),
)
def test_pca_properties(x, frac):
    target = max(1, int(round(frac * x.shape[1])))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        fs = FeatureSpace(tuple(str(i) for i in range(x.shape[0])), x)
        a = reduce(fs, target)
        b = reduce(fs, target)
        model = pca_fit(x, target)
    assert np.array_equal(a.vectors, b.vectors)
    scale = max(1.0, float(np.abs(x).max()))
    assert np.abs(a.vectors.mean(axis=0)).max() < 1e-8 * scale
    live = model.components[np.any(model.components != 0, axis=1)]
    np.testing.assert_allclose(live @ live.T, np.eye(live.shape[0]), atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(7))))
def test_make_cospace_ignores_after_row_order(perm):
    rng = np.random.default_rng(3)
    before = space(rng.normal(size=(7, 2)))
    after = space(rng.normal(size=(7, 2)))
    shuffled = FeatureSpace(tuple(after.ids[i] for i in perm), after.vectors[perm])
    assert make_cospace(before, shuffled).after == make_cospace(before, after).after


def test_providers(tmp_path, rng):
    spaces = [space(rng.normal(size=(4, 2))) for _ in range(3)]
    assert list(InMemoryProvider(spaces)) == spaces
    (tmp_path / "sub").mkdir()
    for t, fs in enumerate(spaces):
        write_features(fs, tmp_path / "sub" / f"f{t}.tsv")
    manifest = tmp_path / "m.txt"
    manifest.write_text("# iteration order\nsub/f0.tsv\n\nsub/f1.tsv\n" + str(tmp_path / "sub" / "f2.tsv") + "\n")
    prov = FileSequenceProvider(manifest)
    assert len(prov) == 3
    assert list(prov) == spaces
