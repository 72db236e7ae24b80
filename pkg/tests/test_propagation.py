import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import space
from cospacemine.cospace import CoSpace, FeatureSpace, make_cospace
from cospacemine.dataset import Partition, load_features, load_labels
from cospacemine.graph import transition_from_space
from cospacemine.propagation import dump_soft_labels, intrinsic_variation, propagate
from oracles import dense_propagate


def _random_case(seed, n, m, k):
    rng = np.random.default_rng(seed)
    fs = space(rng.normal(size=(n, 3)))
    n_lab = max(1, n // 5)
    labeled = rng.choice(n, size=n_lab, replace=False)
    labels = {fs.ids[i]: int(rng.integers(m)) for i in labeled}
    return fs, Partition(fs.ids, labels, m), transition_from_space(fs, k, 1.0, 0.9)


def test_all_labeled_is_fixed():
    fs = space(np.arange(10.0))
    part = Partition(fs.ids, {sid: i % 3 for i, sid in enumerate(fs.ids)}, 3)
    for T in (1, 7, 50):
        soft = propagate(transition_from_space(fs, 2), part, T)
        np.testing.assert_array_equal(soft.values, part.label_matrix(fs.ids))


def test_matches_dense_oracle_on_30_nodes():
    fs, part, tm = _random_case(7, 30, 3, 4)
    soft = propagate(tm, part, 50)
    y0 = part.label_matrix(fs.ids)
    lab = np.array([part.is_labeled(i) for i in fs.ids])
    np.testing.assert_allclose(soft.values, dense_propagate(tm.toarray(), y0, lab, 50), atol=1e-12, rtol=0)


def test_golden_n30(data_dir):
    d = data_dir / "propagate30"
    before, after = load_features(d / "before.tsv"), load_features(d / "after.tsv")
    part = Partition(before.ids, load_labels(d / "labels.tsv", 3), 3)
    soft_b, soft_a = intrinsic_variation(make_cospace(before, after), part, K=5, mu=1.0, delta=0.9, T=50)
    for soft, name in ((soft_b, "before"), (soft_a, "after")):
        rows = [line.split("\t") for line in (d / f"soft_{name}.golden").read_text().splitlines()]
        assert [r[0] for r in rows] == list(soft.ids)
        golden = np.array([[float(v) for v in r[1:]] for r in rows])
        np.testing.assert_allclose(soft.values, golden, atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(6, 80), m=st.integers(1, 5), k=st.integers(1, 5))
def test_clamping_bounds_and_monotone_mass(seed, n, m, k):
    fs, part, tm = _random_case(seed, n, m, min(k, n - 1))
    lab = np.array([part.is_labeled(i) for i in fs.ids])
    y0 = part.label_matrix(fs.ids)
    prev = None
    for T in range(1, 12):
        y = propagate(tm, part, T).values
        np.testing.assert_array_equal(y[lab], y0[lab])
        assert y.min() >= 0.0 and y.max() <= 1.0 + 1e-12
        mass = y[~lab].sum(axis=1)
        if prev is not None:
            assert np.all(mass >= prev - 1e-12)
        prev = mass


def test_fixed_point_is_stable():
    fs, part, tm = _random_case(3, 40, 3, 4)
    y = propagate(tm, part, 2000).values
    y2 = propagate(tm, part, 2001).values
    assert np.abs(y2 - y).max() < 1e-12
    early = propagate(tm, part, 5000, tol=1e-13)
    assert early.iterations_run < 5000
    np.testing.assert_allclose(early.values, y, atol=1e-11)


def test_unreached_rows():
    fs = space([[0.0], [0.1], [0.2], [10.0], [10.1], [10.2]])
    part = Partition(fs.ids, {fs.ids[0]: 0}, 2)
    soft = propagate(transition_from_space(fs, 2), part, 50)
    assert list(soft.reached) == [True, True, True, False, False, False]
    assert not np.any(soft.normalized()[3:])
    np.testing.assert_allclose(soft.normalized()[1], [1.0, 0.0])


def test_identity_transformation_and_scale():
    fs, part, _ = _random_case(11, 50, 3, 5)
    b, a = intrinsic_variation(CoSpace(fs, fs), part)
    np.testing.assert_array_equal(b.values, a.values)
    b, a = intrinsic_variation(CoSpace(fs, fs.scaled(2.0)), part)
    np.testing.assert_allclose(b.values, a.values, atol=1e-9)


def test_threads_do_not_change_output():
    fs, part, _ = _random_case(5, 60, 4, 5)
    other = FeatureSpace(fs.ids, fs.vectors + 0.2)
    one = intrinsic_variation(CoSpace(fs, other.scaled(1.5)), part, threads=1)
    many = intrinsic_variation(CoSpace(fs, other.scaled(1.5)), part, threads=4)
    for x, y in zip(one, many):
        np.testing.assert_array_equal(x.values, y.values)


def test_migrating_point_has_low_cosine():
    rng = np.random.default_rng(2)
    per = 30
    a = rng.normal(size=(per, 2)) * 0.5
    b = rng.normal(size=(per, 2)) * 0.5 + [6.0, 0.0]
    before = np.vstack([a, b])
    after = before + rng.normal(size=before.shape) * 0.05
    mover = 5  # starts in cluster A, ends in cluster B
    after[mover] = [6.0, 0.1]
    fs_b = space(before)
    fs_a = FeatureSpace(fs_b.ids, after)
    labels = {fs_b.ids[i]: 0 for i in range(0, per, 3) if i != mover}
    labels.update({fs_b.ids[per + i]: 1 for i in range(0, per, 3)})
    part = Partition(fs_b.ids, labels, 2)
    sb, sa = intrinsic_variation(CoSpace(fs_b, fs_a), part, K=5)
    yb, ya = sb.normalized(), sa.normalized()
    unl = [i for i, sid in enumerate(fs_b.ids) if not part.is_labeled(sid)]
    cos = {i: yb[i] @ ya[i] / (np.linalg.norm(yb[i]) * np.linalg.norm(ya[i])) for i in unl}
    assert cos[mover] < np.median(list(cos.values()))


def test_shape_errors_and_dump(tmp_path):
    fs, part, tm = _random_case(1, 10, 2, 2)
    with pytest.raises(ValueError):
        propagate(tm, Partition(tuple(reversed(fs.ids))[:9], {}, 2), 5)
    with pytest.raises(ValueError):
        propagate(tm, part, 0)
    soft = propagate(tm, part, 3)
    dump_soft_labels(soft, tmp_path / "s.tsv")
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert len(lines) == 10 and all(len(line.split("\t")) == 3 for line in lines)
