"""Random forests that turn snippets into local votes.

Two forests share the split machinery: a classification forest whose leaves
hold class histograms, and a conditional regression forest whose leaves hold
per-class quantized start/end offset histograms. Split candidates are random
feature-pair differences or single-feature thresholds, scored by Shannon
entropy gain (class counts) or by the differential entropy of a 2-D Gaussian
fit to the (start, end) offset pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from echt.core import Snippet, quantize_offsets

__all__ = [
    "ClassForest",
    "ForestParams",
    "RegForest",
    "SplitTest",
    "train_class_forest",
    "train_reg_forest",
]

KIND_PAIR = 0
KIND_THRESHOLD = 1
_LEAF = -1
_COV_FLOOR = 1e-6
_LOG_2PIE = float(np.log(2.0 * np.pi * np.e))


@dataclass(frozen=True)
class SplitTest:
    """One binary node test; routes left when the value is below threshold."""

    kind: Literal["pair-diff", "threshold"]
    dim_a: int
    dim_b: int
    threshold: float

    def value(self, features: np.ndarray) -> float:
        if self.kind == "pair-diff":
            return abs(float(features[self.dim_a]) - float(features[self.dim_b]))
        return float(features[self.dim_a])

    def goes_left(self, features: np.ndarray) -> bool:
        return self.value(features) < self.threshold


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 20
    max_depth: int = 20
    min_leaf_samples: int = 5
    num_split_candidates: int = 100
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.num_trees < 1:
            raise ValueError(f"num_trees must be >= 1, got {self.num_trees}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_leaf_samples < 1:
            raise ValueError(
                f"min_leaf_samples must be >= 1, got {self.min_leaf_samples}"
            )
        if self.num_split_candidates < 1:
            raise ValueError(
                f"num_split_candidates must be >= 1, got {self.num_split_candidates}"
            )


@dataclass
class Tree:
    """Flat node arrays; leaf nodes have kind == -1 and leaf_idx >= 0."""

    kind: np.ndarray = field(repr=False)
    dim_a: np.ndarray = field(repr=False)
    dim_b: np.ndarray = field(repr=False)
    threshold: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    leaf_idx: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.kind.shape[0]

    @property
    def num_leaves(self) -> int:
        return int(np.sum(self.kind == _LEAF))

    def split_test(self, node: int) -> SplitTest:
        name = "pair-diff" if self.kind[node] == KIND_PAIR else "threshold"
        return SplitTest(name, int(self.dim_a[node]), int(self.dim_b[node]),
                         float(self.threshold[node]))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index per row of x."""
        n = x.shape[0]
        node = np.zeros(n, dtype=np.int64)
        internal = self.kind[node] != _LEAF
        while np.any(internal):
            idx = np.flatnonzero(internal)
            cur = node[idx]
            va = x[idx, self.dim_a[cur]]
            vals = np.where(
                self.kind[cur] == KIND_PAIR,
                np.abs(va - x[idx, self.dim_b[cur]]),
                va,
            )
            go_left = vals < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            internal[idx] = self.kind[node[idx]] != _LEAF
        return self.leaf_idx[node]


class _TreeBuilder:
    def __init__(self) -> None:
        self.kind: list[int] = []
        self.dim_a: list[int] = []
        self.dim_b: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf_idx: list[int] = []
        self.leaf_members: list[np.ndarray] = []

    def add_leaf(self, members: np.ndarray) -> int:
        node = len(self.kind)
        self.kind.append(_LEAF)
        self.dim_a.append(-1)
        self.dim_b.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_idx.append(len(self.leaf_members))
        self.leaf_members.append(members)
        return node

    def add_internal(self, kind: int, a: int, b: int, thr: float) -> int:
        node = len(self.kind)
        self.kind.append(kind)
        self.dim_a.append(a)
        self.dim_b.append(b)
        self.threshold.append(thr)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_idx.append(-1)
        return node

    def finish(self) -> Tree:
        return Tree(
            kind=np.array(self.kind, dtype=np.int8),
            dim_a=np.array(self.dim_a, dtype=np.int32),
            dim_b=np.array(self.dim_b, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            leaf_idx=np.array(self.leaf_idx, dtype=np.int32),
        )


def _draw_candidates(rng: np.random.Generator, dim: int, count: int):
    kinds = rng.integers(0, 2, size=count)
    if dim < 2:
        kinds[:] = KIND_THRESHOLD
    a = rng.integers(0, dim, size=count)
    shift = rng.integers(1, max(dim, 2), size=count)
    b = (a + shift) % dim
    return kinds, a, b


def _candidate_values(x: np.ndarray, kinds, a, b) -> np.ndarray:
    """(n_samples, n_candidates) test values."""
    va = x[:, a]
    vals = np.where(kinds == KIND_PAIR, np.abs(va - x[:, b]), va)
    return vals


def _class_entropy(counts: np.ndarray) -> np.ndarray:
    """Shannon entropy rows from count rows (natural log)."""
    counts = np.atleast_2d(counts)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(totals > 0, counts / totals, 0.0)
        logp = np.where(p > 0, np.log(p), 0.0)
    return -(p * logp).sum(axis=1)


def _gauss_entropy_from_moments(n, s1, s2, sxy) -> np.ndarray:
    """Differential entropy of the floored 2-D Gaussian fit, per column set.

    n: (m,) counts; s1: (m,2) sums; s2: (m,2) sums of squares; sxy: (m,) sum
    of start*end products. The maximum-likelihood covariance (divide by n) is
    required here: with the n-1 normalization the parent covariance no longer
    dominates the weighted child covariances and split gains can go negative.
    """
    n = np.asarray(n, dtype=np.float64)
    safe_n = np.maximum(n, 1.0)
    mean = s1 / safe_n[:, None]
    var = np.maximum(s2 / safe_n[:, None] - mean**2, 0.0)
    cov = sxy / safe_n - mean[:, 0] * mean[:, 1]
    det = (var[:, 0] + _COV_FLOOR) * (var[:, 1] + _COV_FLOOR) - cov**2
    det = np.maximum(det, _COV_FLOOR**2 * 1e-3)
    return _LOG_2PIE + 0.5 * np.log(det)


class _ClassObjective:
    """Entropy bookkeeping for class-histogram splits."""

    def __init__(self, labels: np.ndarray, num_classes: int) -> None:
        self.labels = labels
        self.onehot = np.eye(num_classes)[labels]

    def node_entropy(self, idx: np.ndarray) -> float:
        return float(_class_entropy(self.onehot[idx].sum(axis=0))[0])

    def is_pure(self, idx: np.ndarray) -> bool:
        return bool(np.all(self.labels[idx] == self.labels[idx[0]]))

    def children_entropy(self, idx, left_masks):
        counts_l = left_masks.T @ self.onehot[idx]
        counts_all = self.onehot[idx].sum(axis=0)
        counts_r = counts_all[None, :] - counts_l
        n_l = counts_l.sum(axis=1)
        n_r = counts_r.sum(axis=1)
        h = (n_l * _class_entropy(counts_l) + n_r * _class_entropy(counts_r)) / idx.shape[0]
        return h, n_l, n_r


class _RegObjective:
    """Gaussian differential-entropy bookkeeping for offset splits."""

    def __init__(self, start: np.ndarray, end: np.ndarray) -> None:
        self.p = np.stack([start, end], axis=1).astype(np.float64)
        self.p2 = self.p**2
        self.pxy = self.p[:, 0] * self.p[:, 1]

    def node_entropy(self, idx: np.ndarray) -> float:
        n = np.array([idx.shape[0]])
        s1 = self.p[idx].sum(axis=0)[None, :]
        s2 = self.p2[idx].sum(axis=0)[None, :]
        sxy = np.array([self.pxy[idx].sum()])
        return float(_gauss_entropy_from_moments(n, s1, s2, sxy)[0])

    def is_pure(self, idx: np.ndarray) -> bool:
        return bool(np.all(self.p[idx] == self.p[idx][0]))

    def children_entropy(self, idx, left_masks):
        s1_l = left_masks.T @ self.p[idx]
        s2_l = left_masks.T @ self.p2[idx]
        sxy_l = left_masks.T @ self.pxy[idx]
        n_l = left_masks.sum(axis=0)
        s1_all = self.p[idx].sum(axis=0)
        s2_all = self.p2[idx].sum(axis=0)
        sxy_all = self.pxy[idx].sum()
        n_r = idx.shape[0] - n_l
        h_l = _gauss_entropy_from_moments(n_l, s1_l, s2_l, sxy_l)
        h_r = _gauss_entropy_from_moments(n_r, s1_all - s1_l, s2_all - s2_l, sxy_all - sxy_l)
        h = (n_l * h_l + n_r * h_r) / idx.shape[0]
        return h, n_l, n_r


def _grow_tree(x, objective, params: ForestParams, rng: np.random.Generator,
               sample_idx: np.ndarray) -> tuple[Tree, list[np.ndarray]]:
    builder = _TreeBuilder()
    dim = x.shape[1]

    def grow(idx: np.ndarray, depth: int) -> int:
        if (
            depth >= params.max_depth
            or idx.shape[0] < 2 * params.min_leaf_samples
            or objective.is_pure(idx)
        ):
            return builder.add_leaf(idx)
        kinds, a, b = _draw_candidates(rng, dim, params.num_split_candidates)
        vals = _candidate_values(x[idx], kinds, a, b)
        vmin = vals.min(axis=0)
        vmax = vals.max(axis=0)
        spread = vmax > vmin
        thr = vmin + rng.random(params.num_split_candidates) * (vmax - vmin)
        left_masks = (vals < thr[None, :]).astype(np.float64)
        h_children, n_l, n_r = objective.children_entropy(idx, left_masks)
        gain = objective.node_entropy(idx) - h_children
        valid = spread & (n_l >= params.min_leaf_samples) & (n_r >= params.min_leaf_samples)
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))
        if not np.isfinite(gain[best]) or gain[best] <= 0.0:
            return builder.add_leaf(idx)
        node = builder.add_internal(int(kinds[best]), int(a[best]), int(b[best]),
                                    float(thr[best]))
        mask = left_masks[:, best].astype(bool)
        builder.left[node] = grow(idx[mask], depth + 1)
        builder.right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(sample_idx, 0)
    return builder.finish(), builder.leaf_members


def _stack_features(snippets: Sequence[Snippet]) -> np.ndarray:
    if len(snippets) == 0:
        raise ValueError("need at least one snippet")
    dims = {s.features.shape[0] for s in snippets}
    if len(dims) != 1:
        raise ValueError(f"snippets have mismatched feature dims: {sorted(dims)}")
    return np.stack([s.features for s in snippets])


@dataclass(frozen=True)
class ClassForest:
    """Class-posterior voter: leaves store normalized class histograms."""

    num_classes: int
    feature_dim: int
    params: ForestParams
    trees: tuple[Tree, ...] = field(repr=False)
    leaf_hists: tuple[np.ndarray, ...] = field(repr=False)  # per tree (n_leaves, K)

    def predict_posterior(self, features: np.ndarray) -> np.ndarray:
        """(n, K) class posterior averaged over trees."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.feature_dim:
            raise ValueError(
                f"expected feature dim {self.feature_dim}, got {x.shape[1]}"
            )
        out = np.zeros((x.shape[0], self.num_classes))
        for tree, hists in zip(self.trees, self.leaf_hists):
            out += hists[tree.apply(x)]
        return out / len(self.trees)


@dataclass(frozen=True)
class RegForest:
    """Offset voter: leaves store per-class start/end bin histograms.

    Classes absent from a leaf contribute the uniform histogram at
    prediction time.
    """

    num_classes: int
    vote_bins: int
    dev_range: float
    feature_dim: int
    params: ForestParams
    trees: tuple[Tree, ...] = field(repr=False)
    leaf_present: tuple[np.ndarray, ...] = field(repr=False)  # (n_leaves, K) bool
    leaf_start: tuple[np.ndarray, ...] = field(repr=False)  # (n_leaves, K, D)
    leaf_end: tuple[np.ndarray, ...] = field(repr=False)

    def predict_hists(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-class (n, K, D) start and end histograms averaged over trees."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.feature_dim:
            raise ValueError(
                f"expected feature dim {self.feature_dim}, got {x.shape[1]}"
            )
        n = x.shape[0]
        uniform = 1.0 / self.vote_bins
        start = np.zeros((n, self.num_classes, self.vote_bins))
        end = np.zeros_like(start)
        for tree, present, hs, he in zip(
            self.trees, self.leaf_present, self.leaf_start, self.leaf_end
        ):
            leaves = tree.apply(x)
            miss = ~present[leaves]  # (n, K)
            start += hs[leaves] + miss[:, :, None] * uniform
            end += he[leaves] + miss[:, :, None] * uniform
        t = len(self.trees)
        return start / t, end / t


def _bootstrap(rng: np.random.Generator, n: int, enabled: bool) -> np.ndarray:
    if enabled:
        return np.sort(rng.integers(0, n, size=n))
    return np.arange(n)


def train_class_forest(
    snippets: Sequence[Snippet],
    labels: Sequence[int],
    num_classes: int,
    params: ForestParams = ForestParams(),
    seed: int = 0,
) -> ClassForest:
    """Fit the classification forest on labeled snippets."""
    x = _stack_features(snippets)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"{x.shape[0]} snippets but {y.shape[0]} labels")
    present = np.unique(y)
    if present.size < 2:
        raise ValueError("training labels cover a single class; need >= 2")
    if present.min() < 0 or present.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")

    objective = _ClassObjective(y, num_classes)
    trees = []
    hists = []
    for child_seed in np.random.SeedSequence(seed).spawn(params.num_trees):
        rng = np.random.default_rng(child_seed)
        tree, members = _grow_tree(x, objective, params, rng,
                                   _bootstrap(rng, x.shape[0], params.bootstrap))
        leaf_hist = np.zeros((len(members), num_classes))
        for li, m in enumerate(members):
            counts = np.bincount(y[m], minlength=num_classes).astype(np.float64)
            leaf_hist[li] = counts / counts.sum()
        trees.append(tree)
        hists.append(leaf_hist)
    return ClassForest(
        num_classes=num_classes,
        feature_dim=x.shape[1],
        params=params,
        trees=tuple(trees),
        leaf_hists=tuple(hists),
    )


def train_reg_forest(
    snippets: Sequence[Snippet],
    labels: Sequence[int],
    start_offsets: Sequence[float],
    end_offsets: Sequence[float],
    action_lengths: Sequence[int],
    num_classes: int,
    vote_bins: int = 8,
    dev_range: float = 0.75,
    params: ForestParams = ForestParams(),
    seed: int = 0,
) -> RegForest:
    """Fit the conditional regression forest on snippet offset targets.

    Offsets are in frames relative to the snippet location; leaf histograms
    quantize them with the true action length of each snippet as the window.
    """
    x = _stack_features(snippets)
    y = np.asarray(labels, dtype=np.int64)
    s_off = np.asarray(start_offsets, dtype=np.float64)
    e_off = np.asarray(end_offsets, dtype=np.float64)
    lens = np.asarray(action_lengths, dtype=np.int64)
    n = x.shape[0]
    for name, arr in (("labels", y), ("start_offsets", s_off),
                      ("end_offsets", e_off), ("action_lengths", lens)):
        if arr.shape[0] != n:
            raise ValueError(f"{name} length {arr.shape[0]} != {n} snippets")
    if np.any(lens < 1):
        raise ValueError("action_lengths must be >= 1")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")

    # per-snippet target bins, window = that snippet's true action length
    s_bins = np.empty(n, dtype=np.int64)
    e_bins = np.empty(n, dtype=np.int64)
    for length in np.unique(lens):
        mask = lens == length
        s_bins[mask] = quantize_offsets(s_off[mask], int(length), vote_bins, dev_range)
        e_bins[mask] = quantize_offsets(e_off[mask], int(length), vote_bins, dev_range)

    objective = _RegObjective(s_off, e_off)
    trees = []
    presents = []
    starts = []
    ends = []
    for child_seed in np.random.SeedSequence(seed).spawn(params.num_trees):
        rng = np.random.default_rng(child_seed)
        tree, members = _grow_tree(x, objective, params, rng,
                                   _bootstrap(rng, n, params.bootstrap))
        n_leaves = len(members)
        present = np.zeros((n_leaves, num_classes), dtype=bool)
        hist_s = np.zeros((n_leaves, num_classes, vote_bins))
        hist_e = np.zeros((n_leaves, num_classes, vote_bins))
        for li, m in enumerate(members):
            for k in np.unique(y[m]):
                rows = m[y[m] == k]
                cs = np.bincount(s_bins[rows], minlength=vote_bins).astype(np.float64)
                ce = np.bincount(e_bins[rows], minlength=vote_bins).astype(np.float64)
                present[li, k] = True
                hist_s[li, k] = cs / cs.sum()
                hist_e[li, k] = ce / ce.sum()
        trees.append(tree)
        presents.append(present)
        starts.append(hist_s)
        ends.append(hist_e)
    return RegForest(
        num_classes=num_classes,
        vote_bins=vote_bins,
        dev_range=dev_range,
        feature_dim=x.shape[1],
        params=params,
        trees=tuple(trees),
        leaf_present=tuple(presents),
        leaf_start=tuple(starts),
        leaf_end=tuple(ends),
    )
