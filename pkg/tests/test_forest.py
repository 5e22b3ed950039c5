import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadsig import forest as fo
from roadsig.forest import DecisionTree, ForestConfig, ForestModel


def leaf(cls):
    return DecisionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([cls]))


def forest_of(classes, n_classes=8, n_features=2):
    return ForestModel([leaf(c) for c in classes], n_classes, n_features, ForestConfig(n_trees=len(classes)))


def separable(n=50, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2 * n, 5))
    x[:n, 0] = -rng.uniform(0.1, 2, n)
    x[n:, 0] = 1 + rng.uniform(0.1, 2, n)
    return x, np.repeat([1, 2], n)


class TestPredict:
    def test_single_leaf(self):
        assert fo.predict(forest_of([3]), [0.0, 0.0]) == (3, {3: 1})

    def test_majority(self):
        cls, hist = fo.predict(forest_of([2] * 60 + [5] * 40), [0.0, 0.0])
        assert cls == 2 and hist == {2: 60, 5: 40}

    def test_tie_goes_low(self):
        assert fo.predict(forest_of([7] * 50 + [4] * 50), [0.0, 0.0])[0] == 4

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            fo.predict(forest_of([1]), [0.0, 0.0, 0.0])

    def test_histogram_sums_to_trees(self):
        x, y = separable()
        m = fo.fit_forest(x, y, ForestConfig(n_trees=13, seed=1))
        assert sum(fo.predict(m, x[0])[1].values()) == 13


class TestFit:
    def test_separable_memorized(self):
        x, y = separable()
        m = fo.fit_forest(x, y, ForestConfig(n_trees=20, seed=2))
        assert np.mean(m.predict_batch(x) == y) == 1.0

    def test_single_class(self):
        x = np.random.default_rng(0).normal(size=(30, 4))
        m = fo.fit_forest(x, np.full(30, 3), ForestConfig(n_trees=5), n_classes=3)
        assert fo.depth_stats(m) == (1.0, 1, 1)
        assert set(m.predict_batch(x)) == {3}

    def test_conflicting_duplicates(self):
        x = np.zeros((4, 2))
        m = fo.fit_forest(x, [2, 1, 2, 1], ForestConfig(n_trees=1, bootstrap=False))
        assert m.trees[0].n_nodes == 1 and m.predict_batch(x[:1])[0] == 1
        m = fo.fit_forest(x[:3], [2, 1, 2], ForestConfig(n_trees=1, bootstrap=False))
        assert m.predict_batch(x[:1])[0] == 2

    def test_stump_depth(self):
        x = np.array([[0.0], [1.0]])
        m = fo.fit_forest(x, [1, 2], ForestConfig(n_trees=3, bootstrap=False))
        assert fo.depth_stats(m) == (2.0, 2, 2)
        assert m.trees[0].threshold[0] == 0.5

    def test_depth_order(self):
        x, y = separable(seed=3)
        y = y + (x[:, 1] > 0)  # three classes, harder
        mean, lo, hi = fo.depth_stats(fo.fit_forest(x, y, ForestConfig(n_trees=10)))
        assert lo <= mean <= hi

    @pytest.mark.parametrize("x,y", [(np.zeros((0, 3)), []), (np.zeros((3, 2)), [1, 2]),
                                     (np.zeros((2, 2)), [0, 1]), (np.full((2, 2), np.nan), [1, 2])])
    def test_errors(self, x, y):
        with pytest.raises(ValueError):
            fo.fit_forest(x, y)

    def test_deterministic_and_parallel(self):
        x, y = separable(seed=4)
        a = fo.fit_forest(x, y, ForestConfig(n_trees=8, seed=9))
        b = fo.fit_forest(x, y, ForestConfig(n_trees=8, seed=9, n_jobs=2))
        for ta, tb in zip(a.trees, b.trees):
            for k in ("feature", "threshold", "left", "right", "value"):
                np.testing.assert_array_equal(getattr(ta, k), getattr(tb, k))

    def test_tree_structure(self):
        x, y = separable(seed=5)
        y = y + (x[:, 2] > 0.3)
        for t in fo.fit_forest(x, y, ForestConfig(n_trees=5)).trees:
            internal = t.feature >= 0
            assert np.all((t.left[internal] > 0) & (t.right[internal] > 0))
            assert np.all(np.isfinite(t.threshold))
            children = np.concatenate([t.left[internal], t.right[internal]])
            assert sorted(children) == list(range(1, t.n_nodes))  # every node reached once
            assert np.all((t.value >= 1) & (t.value <= 3))


@given(st.lists(st.tuples(st.floats(-100, 100, allow_nan=False), st.integers(1, 4)),
                min_size=2, max_size=40, unique_by=lambda p: p[0]),
       st.sampled_from([np.exp, np.arctan, lambda v: v**3 + 5 * v]))
@settings(max_examples=50, deadline=None)
def test_monotone_invariance_on_training_points(data, transform):
    x = np.array([[v, 0.0] for v, _ in data])
    y = np.array([c for _, c in data])
    cfg = ForestConfig(n_trees=5, seed=3, bootstrap=False)  # every tree sees every point
    a = fo.fit_forest(x, y, cfg, n_classes=4).predict_batch(x)
    xt = x.copy()
    xt[:, 0] = transform(x[:, 0])
    if len(np.unique(xt[:, 0])) < len(xt):
        return  # transform collapsed distinct values in floating point
    b = fo.fit_forest(xt, y, cfg, n_classes=4).predict_batch(xt)
    np.testing.assert_array_equal(a, b)


@given(st.integers(2, 30), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_consistent_data_memorized(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = rng.integers(1, 4, n)
    m = fo.fit_forest(x, y, ForestConfig(n_trees=1, bootstrap=False), n_classes=3)
    np.testing.assert_array_equal(m.predict_batch(x), y)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        x, y = separable(seed=6)
        m = fo.fit_forest(x, y, ForestConfig(n_trees=6, seed=1), layout_hash="abc")
        m.meta["route_segments"] = 2
        fo.save_forest(m, tmp_path / "f.npz")
        back = fo.load_forest(tmp_path / "f.npz")
        assert back.layout_hash == "abc" and back.config == m.config and back.meta == m.meta
        probe = np.random.default_rng(0).normal(size=(50, 5)) * 3
        np.testing.assert_array_equal(back.votes(probe), m.votes(probe))

    def test_corrupt(self, tmp_path):
        (tmp_path / "bad.npz").write_bytes(b"nope")
        with pytest.raises(fo.ModelFileError):
            fo.load_forest(tmp_path / "bad.npz")

    def test_newer_version(self, tmp_path, monkeypatch):
        monkeypatch.setattr(fo, "FOREST_VERSION", 2)
        fo.save_forest(forest_of([1]), tmp_path / "f.npz")
        monkeypatch.setattr(fo, "FOREST_VERSION", 1)
        with pytest.raises(fo.ModelFileError, match="version 2"):
            fo.load_forest(tmp_path / "f.npz")
