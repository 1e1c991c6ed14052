from __future__ import annotations

import numpy as np
import pytest

from echt.core import Snippet
from echt.forests import (
    ClassForest,
    ForestParams,
    RegForest,
    SplitTest,
    _class_entropy,
    _gauss_entropy_from_moments,
    _RegObjective,
    train_class_forest,
    train_reg_forest,
)
from oracles import gaussian_entropy_2d


def blob_snippets(rng, num_classes, per_class, dim=8, sep=6.0, noise=1.0):
    centers = rng.normal(0, sep, size=(num_classes, dim))
    snippets, labels = [], []
    for k in range(num_classes):
        feats = centers[k] + rng.normal(0, noise, size=(per_class, dim))
        for f in feats:
            snippets.append(Snippet(0, f))
            labels.append(k)
    return snippets, np.array(labels), centers


def nearest_centroid_accuracy(x, y, centers):
    d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(d.argmin(axis=1) == y))


class TestSplitTest:
    def test_pair_diff_routing(self):
        t = SplitTest("pair-diff", 0, 2, 1.5)
        assert t.goes_left(np.array([1.0, 9.0, 2.0]))  # |1-2| = 1 < 1.5
        assert not t.goes_left(np.array([5.0, 9.0, 2.0]))

    def test_threshold_routing(self):
        t = SplitTest("threshold", 1, -1, 0.0)
        assert t.goes_left(np.array([5.0, -0.5]))
        assert not t.goes_left(np.array([5.0, 0.5]))


class TestValidation:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            train_class_forest([], [], 4)

    def test_rejects_single_class(self):
        sn = [Snippet(0, np.zeros(4)), Snippet(1, np.ones(4))]
        with pytest.raises(ValueError):
            train_class_forest(sn, [2, 2], 4)

    def test_rejects_mismatched_dims(self):
        sn = [Snippet(0, np.zeros(4)), Snippet(1, np.ones(5))]
        with pytest.raises(ValueError):
            train_class_forest(sn, [0, 1], 4)

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            ForestParams(num_trees=0)
        with pytest.raises(ValueError):
            ForestParams(min_leaf_samples=0)

    def test_reg_rejects_bad_lengths(self):
        sn = [Snippet(0, np.zeros(4)), Snippet(1, np.ones(4))]
        with pytest.raises(ValueError):
            train_reg_forest(sn, [0, 1], [0.0, 0.0], [1.0, 1.0], [5], 4)
        with pytest.raises(ValueError):
            train_reg_forest(sn, [0, 1], [0.0, 0.0], [1.0, 1.0], [5, 0], 4)


class TestClassForest:
    def test_separable_blobs_beat_centroid_oracle(self):
        rng = np.random.default_rng(100)
        snippets, labels, centers = blob_snippets(rng, 4, 60)
        held_sn, held_y, _ = blob_snippets(rng, 4, 25, sep=0.0)
        # held-out points drawn around the same centers
        held_x = centers[held_y] + rng.normal(0, 1.0, size=(held_y.size, 8))
        forest = train_class_forest(
            snippets, labels, 4, ForestParams(num_trees=10, min_leaf_samples=2), seed=1
        )
        pred = forest.predict_posterior(held_x).argmax(axis=1)
        acc = float(np.mean(pred == held_y))
        oracle = nearest_centroid_accuracy(held_x, held_y, centers)
        assert oracle >= 0.99
        assert acc >= 0.99

    def test_leaf_hists_normalized(self):
        rng = np.random.default_rng(101)
        snippets, labels, _ = blob_snippets(rng, 3, 30)
        forest = train_class_forest(snippets, labels, 3,
                                    ForestParams(num_trees=5), seed=2)
        for hists in forest.leaf_hists:
            np.testing.assert_allclose(hists.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(hists >= 0)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(102)
        snippets, labels, _ = blob_snippets(rng, 3, 20)
        x = rng.normal(size=(10, 8))
        a = train_class_forest(snippets, labels, 3, ForestParams(num_trees=4), seed=9)
        b = train_class_forest(snippets, labels, 3, ForestParams(num_trees=4), seed=9)
        np.testing.assert_array_equal(a.predict_posterior(x), b.predict_posterior(x))

    def test_single_tree_vote_is_leaf_payload(self):
        rng = np.random.default_rng(103)
        snippets, labels, _ = blob_snippets(rng, 3, 20)
        forest = train_class_forest(
            snippets, labels, 3,
            ForestParams(num_trees=1, bootstrap=False), seed=3,
        )
        assert isinstance(forest, ClassForest)
        x = snippets[5].features[None, :]
        leaf = forest.trees[0].apply(x)[0]
        np.testing.assert_array_equal(
            forest.predict_posterior(x)[0], forest.leaf_hists[0][leaf]
        )

    def test_rejects_wrong_dim_at_predict(self):
        rng = np.random.default_rng(104)
        snippets, labels, _ = blob_snippets(rng, 3, 10)
        forest = train_class_forest(snippets, labels, 3, ForestParams(num_trees=2), seed=4)
        with pytest.raises(ValueError):
            forest.predict_posterior(np.zeros((2, 5)))


class TestRegForest:
    def make_offset_data(self, rng, n=120, dim=6):
        # feature dim 0 carries the phase: low values sit near the action
        # start (small |start offset|), high values near the end
        phase = rng.integers(0, 2, size=n)
        x = rng.normal(0, 0.5, size=(n, dim))
        x[:, 0] += phase * 8.0
        length = 20
        start_off = np.where(phase == 0, -2.0, -16.0)
        end_off = np.where(phase == 0, 17.0, 3.0)
        snippets = [Snippet(0, x[i]) for i in range(n)]
        labels = rng.integers(0, 2, size=n)
        lengths = np.full(n, length)
        return snippets, labels, start_off, end_off, lengths

    def test_cluster_split_found_in_most_trials(self):
        hits = 0
        trials = 60
        for trial in range(trials):
            rng = np.random.default_rng(200 + trial)
            sn, labels, s_off, e_off, lens = self.make_offset_data(rng)
            forest = train_reg_forest(
                sn, labels, s_off, e_off, lens, 2,
                params=ForestParams(num_trees=1, max_depth=1, bootstrap=False,
                                    min_leaf_samples=10),
                seed=trial,
            )
            tree = forest.trees[0]
            if tree.num_leaves != 2:
                continue
            x = np.stack([s.features for s in sn])
            leaves = tree.apply(x)
            # split separates the offset clusters when each leaf is >=90% one cluster
            cluster = np.array([1 if so < -9 else 0 for so in s_off])
            pure = all(
                max(np.mean(cluster[leaves == l]), 1 - np.mean(cluster[leaves == l])) >= 0.9
                for l in np.unique(leaves)
            )
            hits += pure
        assert hits / trials >= 0.95

    def test_constant_offsets_give_one_hot_leaves(self):
        rng = np.random.default_rng(300)
        n = 40
        x = rng.normal(size=(n, 4))
        sn = [Snippet(0, x[i]) for i in range(n)]
        labels = np.array([0, 1] * (n // 2))
        s_off = np.full(n, -3.0)
        e_off = np.full(n, 12.0)
        lens = np.full(n, 16)
        forest = train_reg_forest(sn, labels, s_off, e_off, lens, 2,
                                  vote_bins=8, dev_range=0.75,
                                  params=ForestParams(num_trees=3), seed=5)
        hs, he = forest.predict_hists(x[:3])
        from echt.core import quantize_offset

        sbin = quantize_offset(-3.0, 16, 8, 0.75)
        ebin = quantize_offset(12.0, 16, 8, 0.75)
        for k in (0, 1):
            np.testing.assert_allclose(hs[:, k, sbin], 1.0)
            np.testing.assert_allclose(he[:, k, ebin], 1.0)

    def test_absent_class_predicts_uniform(self):
        rng = np.random.default_rng(301)
        n = 30
        x = rng.normal(size=(n, 4))
        sn = [Snippet(0, x[i]) for i in range(n)]
        labels = np.array([0, 1] * (n // 2))
        forest = train_reg_forest(sn, labels, rng.normal(size=n), rng.normal(size=n),
                                  np.full(n, 10), 5, vote_bins=4,
                                  params=ForestParams(num_trees=2), seed=6)
        hs, he = forest.predict_hists(x[:2])
        for k in (2, 3, 4):  # never in training
            np.testing.assert_allclose(hs[:, k, :], 0.25)
            np.testing.assert_allclose(he[:, k, :], 0.25)

    def test_prediction_hists_normalized(self):
        rng = np.random.default_rng(302)
        n = 50
        x = rng.normal(size=(n, 5))
        sn = [Snippet(0, x[i]) for i in range(n)]
        forest = train_reg_forest(
            sn, rng.integers(0, 3, size=n), rng.normal(size=n) * 5,
            rng.normal(size=n) * 5, rng.integers(7, 30, size=n), 3,
            params=ForestParams(num_trees=4), seed=7,
        )
        assert isinstance(forest, RegForest)
        hs, he = forest.predict_hists(rng.normal(size=(20, 5)))
        np.testing.assert_allclose(hs.sum(axis=2), 1.0, atol=1e-9)
        np.testing.assert_allclose(he.sum(axis=2), 1.0, atol=1e-9)


class TestEntropy:
    def test_class_entropy_gain_nonnegative(self):
        rng = np.random.default_rng(400)
        for _ in range(1000):
            n = int(rng.integers(2, 40))
            counts = rng.integers(0, 10, size=(1, 5)).astype(float)
            labels = rng.integers(0, 4, size=n)
            onehot = np.eye(4)[labels]
            mask = rng.random(n) < rng.random()
            counts_l = onehot[mask].sum(axis=0)
            counts_r = onehot[~mask].sum(axis=0)
            parent = _class_entropy(onehot.sum(axis=0))[0]
            child = (mask.sum() * _class_entropy(counts_l)[0]
                     + (~mask).sum() * _class_entropy(counts_r)[0]) / n
            assert parent - child >= -1e-9

    def test_gaussian_entropy_gain_nonnegative(self):
        rng = np.random.default_rng(401)
        for _ in range(1000):
            n = int(rng.integers(4, 30))
            pts = rng.normal(0, rng.uniform(0.5, 5), size=(n, 2))
            obj = _RegObjective(pts[:, 0], pts[:, 1])
            idx = np.arange(n)
            mask = np.zeros((n, 1))
            cut = int(rng.integers(1, n))
            mask[rng.permutation(n)[:cut], 0] = 1.0
            child, _, _ = obj.children_entropy(idx, mask)
            assert obj.node_entropy(idx) - child[0] >= -1e-9

    def test_gaussian_entropy_matches_covariance_oracle(self):
        rng = np.random.default_rng(402)
        for _ in range(200):
            n = int(rng.integers(2, 50))
            pts = rng.normal(0, 3, size=(n, 2))
            s1 = pts.sum(axis=0)[None, :]
            s2 = (pts**2).sum(axis=0)[None, :]
            sxy = np.array([(pts[:, 0] * pts[:, 1]).sum()])
            got = _gauss_entropy_from_moments(np.array([n]), s1, s2, sxy)[0]
            want = gaussian_entropy_2d(pts)
            assert got == pytest.approx(want, rel=1e-8, abs=1e-8)
