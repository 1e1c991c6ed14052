"""Error-correcting score maps over accumulated vote cubes.

A candidate interval collects the votes of the snippets it covers into a
two-block cube indexed by (deviation bin, vote bin, class): the start block
bins each snippet's deviation from the candidate start against its voted
start offsets, the end block does the same for the end. Candidate scores are
linear in the flattened cube. The weights are either learned per class by
epsilon-insensitive regression (which lets them undo systematic vote errors)
or fixed to the classic diagonal Hough kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from echt.core import CubeGeometry, Interval, iou, quantize_offsets
from echt.svr import SvrProblem, solve
from echt.voter import LocalVote, VotedSequence, stack_votes

__all__ = [
    "ECFeature",
    "ECModel",
    "SamplerConfig",
    "TrainingSet",
    "Variant",
    "accumulate",
    "assemble_training_set",
    "score",
    "score_all",
    "standard_ht_weights",
    "train",
    "variant_mask",
]


class Variant(str, Enum):
    """Weight families: full learned cube, class-selective (cells of the
    candidate's own class only), consistency-selective (vote bin equal to
    deviation bin only), and the fixed diagonal Hough kernel."""

    ECHT = "echt"
    ECHT_T = "echt-t"
    ECHT_C = "echt-c"
    STANDARD_HT = "standard-ht"


@dataclass(frozen=True)
class ECFeature:
    """Flattened vote cube accumulated for one candidate interval."""

    phi: np.ndarray = field(repr=False)
    candidate: Interval

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=np.float64)
        if phi.ndim != 1:
            raise ValueError(f"phi must be 1-D, got shape {phi.shape}")
        object.__setattr__(self, "phi", phi)


def accumulate(
    votes: Sequence[LocalVote], candidate: Interval, geometry: CubeGeometry
) -> ECFeature:
    """Scatter the votes inside a candidate window into its cube.

    Only votes located within [candidate.start, candidate.end] take part.
    The deviation axis is referenced to each block's own boundary: the start
    block bins candidate.start - location, the end block candidate.end -
    location, both normalized by the candidate length. A vote whose offset
    histogram points exactly at the candidate boundary therefore lands on
    the deviation == vote diagonal of its block.
    """
    cube = np.zeros(geometry.cube_shape())
    length = candidate.length
    for v in votes:
        if v.num_classes != geometry.num_classes or v.vote_bins != geometry.vote_bins:
            raise ValueError(
                f"vote shape ({v.num_classes}, {v.vote_bins}) does not match "
                f"geometry ({geometry.num_classes}, {geometry.vote_bins})"
            )
        t = v.snippet_location
        if not candidate.start <= t <= candidate.end:
            continue
        u_s, u_e = quantize_offsets(
            np.array([candidate.start - t, candidate.end - t], dtype=np.float64),
            length,
            geometry.dev_bins,
            geometry.dev_range,
        )
        cube[0, u_s] += (v.class_posterior[:, None] * v.start_offset_hist).T
        cube[1, u_e] += (v.class_posterior[:, None] * v.end_offset_hist).T
    return ECFeature(phi=cube.ravel(), candidate=candidate)


def standard_ht_weights(geometry: CubeGeometry, ht_sigma: float = 1.0) -> np.ndarray:
    """Fixed Hough weights: 0.5 * [class == candidate class] * g(vote - dev).

    g is a unit-height Gaussian of width ht_sigma in bin units, so a vote
    aligned with the candidate in both blocks scores exactly 1.
    """
    if not ht_sigma > 0:
        raise ValueError(f"ht_sigma must be > 0, got {ht_sigma}")
    u = np.arange(geometry.dev_bins)
    v = np.arange(geometry.vote_bins)
    g = np.exp(-((v[None, :] - u[:, None]) ** 2) / (2.0 * ht_sigma**2))
    w = np.zeros((geometry.num_classes, *geometry.cube_shape()))
    for y in range(geometry.num_classes):
        w[y, :, :, :, y] = 0.5 * g[None, :, :]
    return w.reshape(geometry.num_classes, geometry.feature_dim)


def variant_mask(variant: Variant, geometry: CubeGeometry) -> np.ndarray:
    """(K, feature_dim) 0/1 mask of the cube cells a variant may weight."""
    k = geometry.num_classes
    mask = np.zeros((k, *geometry.cube_shape()))
    if variant is Variant.ECHT:
        mask[:] = 1.0
    elif variant in (Variant.ECHT_T, Variant.STANDARD_HT):
        for y in range(k):
            mask[y, ..., y] = 1.0
    elif variant is Variant.ECHT_C:
        diag = np.arange(min(geometry.dev_bins, geometry.vote_bins))
        mask[:, :, diag, diag, :] = 1.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return mask.reshape(k, geometry.feature_dim)


@dataclass(frozen=True)
class ECModel:
    """Per-class linear score maps over the flattened vote cube.

    converged flags which per-class regressions reached their tolerance;
    fixed-weight models are trivially converged.
    """

    geometry: CubeGeometry
    variant: Variant
    weights: np.ndarray = field(repr=False)
    ht_sigma: float = 1.0
    converged: np.ndarray | None = field(repr=False, default=None)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        want = (self.geometry.num_classes, self.geometry.feature_dim)
        if w.shape != want:
            raise ValueError(f"weights must have shape {want}, got {w.shape}")
        conv = self.converged
        if conv is None:
            conv = np.ones(self.geometry.num_classes, dtype=bool)
        conv = np.asarray(conv, dtype=bool)
        if conv.shape != (self.geometry.num_classes,):
            raise ValueError(f"converged must be ({self.geometry.num_classes},)")
        support = variant_mask(self.variant, self.geometry)
        if np.any(w[support == 0.0] != 0.0):
            raise ValueError(f"weights fall outside the {self.variant.value} support")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "converged", conv)

    def weight_cube(self, y: int) -> np.ndarray:
        """Class y's weights reshaped to (block, dev_bin, vote_bin, class)."""
        return self.weights[y].reshape(self.geometry.cube_shape())


def score(model: ECModel, feature: ECFeature, y: int) -> float:
    """Candidate score for class y; linear in the accumulated cube."""
    if not 0 <= y < model.geometry.num_classes:
        raise ValueError(f"class {y} outside [0, {model.geometry.num_classes})")
    return float(score_all(model, feature)[y])


def score_all(model: ECModel, feature: ECFeature) -> np.ndarray:
    """All per-class scores of one candidate, shape (K,)."""
    if feature.phi.shape != (model.geometry.feature_dim,):
        raise ValueError(
            f"feature dim {feature.phi.shape[0]} does not match "
            f"geometry dim {model.geometry.feature_dim}"
        )
    return model.weights @ feature.phi


@dataclass(frozen=True)
class SamplerConfig:
    """Candidate sampling around each annotation for training.

    Per annotation: the exact interval, samples_per_annotation copies with
    start and end jittered uniformly within +-jitter_frac of the action
    length, and for each scale_lengths entry a sweep of windows of that
    length over every placement that overlaps the annotation, strided by one
    deviation bin (start-aligned, centered, and end-aligned placements always
    included). The sweep pins down the scores of the off-scale windows a
    scanning detector will evaluate near real actions; without it those
    scores are unconstrained extrapolations. Background windows (overlap
    below background_iou with every annotation) are added at
    negative_fraction times the per-annotation row count.
    """

    samples_per_annotation: int = 20
    jitter_frac: float = 0.5
    negative_fraction: float = 1.0
    scale_lengths: tuple[int, ...] = ()
    background_iou: float = 0.25

    def __post_init__(self) -> None:
        if self.samples_per_annotation < 0:
            raise ValueError("samples_per_annotation must be >= 0")
        if not 0.0 <= self.jitter_frac <= 1.0:
            raise ValueError(f"jitter_frac must be in [0, 1], got {self.jitter_frac}")
        if self.negative_fraction < 0:
            raise ValueError("negative_fraction must be >= 0")
        if not 0.0 <= self.background_iou < 1.0:
            raise ValueError(f"background_iou must be in [0, 1), got {self.background_iou}")
        if any(l < 1 for l in self.scale_lengths):
            raise ValueError("scale_lengths must be positive")
        object.__setattr__(self, "scale_lengths", tuple(self.scale_lengths))


@dataclass(frozen=True)
class TrainingSet:
    """Columnar candidate rows: sparse cube features plus targets and labels.

    Rows are cubes divided by their in-window vote count, mirroring the
    detector's score normalization; a raw cube's mass grows with the window
    length, which no single linear map could square with equal targets.
    labels holds the class id of the generating annotation, -1 for background
    rows. targets is the overlap of the candidate with that annotation.
    Per-class training keeps a row's target only when its label matches.
    """

    x: sp.csr_matrix = field(repr=False)
    targets: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    seq_index: np.ndarray = field(repr=False)
    starts: np.ndarray = field(repr=False)
    ends: np.ndarray = field(repr=False)
    geometry: CubeGeometry = field(default_factory=CubeGeometry)

    def __post_init__(self) -> None:
        n = self.x.shape[0]
        for name in ("targets", "labels", "seq_index", "starts", "ends"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
        if self.x.shape[1] != self.geometry.feature_dim:
            raise ValueError(
                f"feature matrix has {self.x.shape[1]} columns, geometry "
                f"needs {self.geometry.feature_dim}"
            )
        if np.any(self.targets < 0) or np.any(self.targets > 1):
            raise ValueError("targets must lie in [0, 1]")

    def __len__(self) -> int:
        return self.x.shape[0]

    def row_feature(self, i: int) -> ECFeature:
        """Densified row i, for inspection and tests."""
        phi = np.asarray(self.x[i].todense()).ravel()
        return ECFeature(phi=phi, candidate=Interval(int(self.starts[i]), int(self.ends[i])))


def _window_cube(
    counts: np.ndarray,
    joint_s: np.ndarray,
    joint_e: np.ndarray,
    occupied: np.ndarray,
    start: int,
    end: int,
    geometry: CubeGeometry,
) -> np.ndarray:
    """Vote-count-normalized cube for one candidate from per-frame mass.

    The division by the in-window vote count matches the detector's score
    normalization, so regression targets transfer to scan-time scores.
    """
    cube = np.zeros(geometry.cube_shape())
    ts = occupied[(occupied >= start) & (occupied <= end)]
    if ts.size == 0:
        return cube
    length = end - start + 1
    u_s = quantize_offsets(start - ts, length, geometry.dev_bins, geometry.dev_range)
    u_e = quantize_offsets(end - ts, length, geometry.dev_bins, geometry.dev_range)
    np.add.at(cube[0], u_s, joint_s[ts].transpose(0, 2, 1))
    np.add.at(cube[1], u_e, joint_e[ts].transpose(0, 2, 1))
    return cube / counts[ts].sum()


def assemble_training_set(
    sequences: Sequence[VotedSequence],
    geometry: CubeGeometry,
    config: SamplerConfig,
    seed: int = 0,
) -> TrainingSet:
    """Sample candidate rows from voted sequences.

    Jittered candidates are redrawn until valid (non-empty, inside the
    sequence); background windows are rejection-sampled away from every
    annotation. Row order and contents are fully determined by the seed.
    """
    rng = np.random.default_rng(seed)
    data_parts: list[np.ndarray] = []
    index_parts: list[np.ndarray] = []
    row_nnz: list[int] = []
    targets: list[float] = []
    labels: list[int] = []
    seq_index: list[int] = []
    starts: list[int] = []
    ends: list[int] = []

    def add_row(
        seq_i: int,
        cand: Interval,
        target: float,
        label: int,
        joint_s: np.ndarray,
        joint_e: np.ndarray,
        occupied: np.ndarray,
    ) -> None:
        cube = _window_cube(
            counts, joint_s, joint_e, occupied, cand.start, cand.end, geometry
        )
        phi = cube.ravel()
        nz = np.flatnonzero(phi)
        data_parts.append(phi[nz])
        index_parts.append(nz)
        row_nnz.append(nz.size)
        targets.append(target)
        labels.append(label)
        seq_index.append(seq_i)
        starts.append(cand.start)
        ends.append(cand.end)

    for seq_i, seq in enumerate(sequences):
        counts, joint_s, joint_e = stack_votes(
            seq.votes, geometry.num_classes, geometry.vote_bins, seq.length
        )
        occupied = np.flatnonzero(counts)
        positives_before = len(targets)
        for ann in seq.annotations:
            true = ann.interval
            add_row(seq_i, true, 1.0, ann.label, joint_s, joint_e, occupied)
            span = max(int(np.floor(config.jitter_frac * true.length)), 0)
            for _ in range(config.samples_per_annotation):
                for _attempt in range(100):
                    ds, de = rng.integers(-span, span + 1, size=2)
                    s, e = true.start + int(ds), true.end + int(de)
                    if 0 <= s <= e < seq.length:
                        break
                else:
                    s, e = true.start, true.end
                cand = Interval(s, e)
                add_row(seq_i, cand, iou(cand, true), ann.label, joint_s, joint_e, occupied)
            for wl in config.scale_lengths:
                if wl > seq.length:
                    continue
                step = max(1, wl // geometry.dev_bins)
                offsets = set(range(-((wl - 1) // step) * step, true.length, step))
                offsets.update((0, true.length - wl, (true.length - wl) // 2))
                for d in sorted(offsets):
                    s = true.start + d
                    if s < 0 or s + wl > seq.length:
                        continue
                    cand = Interval(s, s + wl - 1)
                    add_row(
                        seq_i, cand, iou(cand, true), ann.label, joint_s, joint_e, occupied
                    )
        n_pos = len(targets) - positives_before
        n_neg = int(round(config.negative_fraction * n_pos))
        neg_lengths = config.scale_lengths or tuple(
            a.interval.length for a in seq.annotations
        )
        if not neg_lengths:
            continue
        drawn = 0
        for _attempt in range(50 * n_neg if n_neg else 0):
            if drawn >= n_neg:
                break
            wl = int(rng.choice(neg_lengths))
            if wl > seq.length:
                continue
            s = int(rng.integers(0, seq.length - wl + 1))
            cand = Interval(s, s + wl - 1)
            if any(iou(cand, a.interval) >= config.background_iou for a in seq.annotations):
                continue
            add_row(seq_i, cand, 0.0, -1, joint_s, joint_e, occupied)
            drawn += 1

    indptr = np.zeros(len(targets) + 1, dtype=np.int64)
    np.cumsum(row_nnz, out=indptr[1:])
    x = sp.csr_matrix(
        (
            np.concatenate(data_parts) if data_parts else np.zeros(0),
            np.concatenate(index_parts) if index_parts else np.zeros(0, dtype=np.int64),
            indptr,
        ),
        shape=(len(targets), geometry.feature_dim),
    )
    return TrainingSet(
        x=x,
        targets=np.asarray(targets),
        labels=np.asarray(labels, dtype=np.int64),
        seq_index=np.asarray(seq_index, dtype=np.int64),
        starts=np.asarray(starts, dtype=np.int64),
        ends=np.asarray(ends, dtype=np.int64),
        geometry=geometry,
    )


def train(
    training_set: TrainingSet,
    variant: Variant,
    *,
    ht_sigma: float = 1.0,
    epsilon: float = 0.01,
    c: float = 1.0,
    tol: float = 5e-3,
    max_iter: int = 20000,
    seed: int = 0,
) -> ECModel:
    """Fit one score map per class; the Hough variant needs no fitting.

    Every class must contribute at least one positive-target row, otherwise
    its regression would silently collapse to the zero map. Non-convergence
    is reported through a warning and the model's converged flags.
    """
    geometry = training_set.geometry
    k = geometry.num_classes
    if variant is Variant.STANDARD_HT:
        return ECModel(
            geometry=geometry,
            variant=variant,
            weights=standard_ht_weights(geometry, ht_sigma),
            ht_sigma=ht_sigma,
        )
    present = np.unique(training_set.labels[training_set.targets > 0])
    missing = np.setdiff1d(np.arange(k), present)
    if missing.size:
        raise ValueError(
            f"classes {missing.tolist()} have no positive training row"
        )
    mask = variant_mask(variant, geometry)
    weights = np.zeros((k, geometry.feature_dim))
    converged = np.zeros(k, dtype=bool)
    children = np.random.SeedSequence(seed).spawn(k)
    for y in range(k):
        cols = np.flatnonzero(mask[y])
        x_y = training_set.x if cols.size == geometry.feature_dim else training_set.x[:, cols]
        t_y = np.where(training_set.labels == y, training_set.targets, 0.0)
        problem = SvrProblem(
            features=x_y, targets=t_y, epsilon=epsilon, c=c, tol=tol, max_iter=max_iter
        )
        sol = solve(problem, seed=int(children[y].generate_state(1)[0]))
        weights[y, cols] = sol.weights
        converged[y] = sol.converged
    if not converged.all():
        bad = np.flatnonzero(~converged).tolist()
        warnings.warn(
            f"{variant.value} regression did not converge for classes {bad}",
            RuntimeWarning,
            stacklevel=2,
        )
    return ECModel(
        geometry=geometry,
        variant=variant,
        weights=weights,
        ht_sigma=ht_sigma,
        converged=converged,
    )
