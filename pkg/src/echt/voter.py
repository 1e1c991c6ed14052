"""Local votes: what one snippet says about class and start/end positions.

A vote couples a class posterior with per-class histograms over quantized
start and end offsets. Votes come either from the trained forests or from
the scripted corruption model used by the synthetic experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from echt.core import Annotation, CubeGeometry, Interval, Snippet, quantize_offset
from echt.forests import ClassForest, RegForest

__all__ = [
    "CorruptionParams",
    "LocalVote",
    "VotedSequence",
    "dirac_class",
    "forest_votes",
    "scripted_vote",
    "stack_votes",
    "vote",
]

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class LocalVote:
    """One snippet's vote: class posterior plus per-class offset histograms.

    start_offset_hist and end_offset_hist are (K, D): row k is the offset
    distribution conditioned on class k. All three distributions are
    non-negative and normalized.
    """

    snippet_location: int
    class_posterior: np.ndarray = field(repr=False)
    start_offset_hist: np.ndarray = field(repr=False)
    end_offset_hist: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        post = np.asarray(self.class_posterior, dtype=np.float64)
        hs = np.asarray(self.start_offset_hist, dtype=np.float64)
        he = np.asarray(self.end_offset_hist, dtype=np.float64)
        if post.ndim != 1:
            raise ValueError(f"class_posterior must be 1-D, got shape {post.shape}")
        k = post.shape[0]
        for name, h in (("start_offset_hist", hs), ("end_offset_hist", he)):
            if h.ndim != 2 or h.shape[0] != k:
                raise ValueError(f"{name} must be (K, D) with K={k}, got {h.shape}")
        if np.any(post < 0) or np.any(hs < 0) or np.any(he < 0):
            raise ValueError("vote entries must be non-negative")
        if abs(post.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"class posterior sums to {post.sum()}, not 1")
        for name, h in (("start_offset_hist", hs), ("end_offset_hist", he)):
            sums = h.sum(axis=1)
            if np.max(np.abs(sums - 1.0)) > _SUM_TOL:
                raise ValueError(f"{name} rows must each sum to 1")
        object.__setattr__(self, "class_posterior", post)
        object.__setattr__(self, "start_offset_hist", hs)
        object.__setattr__(self, "end_offset_hist", he)

    @property
    def num_classes(self) -> int:
        return self.class_posterior.shape[0]

    @property
    def vote_bins(self) -> int:
        return self.start_offset_hist.shape[1]


@dataclass(frozen=True)
class CorruptionParams:
    """Scripted vote corruption: temporal left-shift + jitter, class rotation
    + simplex noise. Sigma values of 0 make the script fully deterministic."""

    temporal_bias: float = 0.0
    temporal_sigma: float = 0.0
    class_rotation: int = 0
    class_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temporal_sigma < 0:
            raise ValueError(f"temporal_sigma must be >= 0, got {self.temporal_sigma}")
        if self.class_sigma < 0:
            raise ValueError(f"class_sigma must be >= 0, got {self.class_sigma}")
        if self.class_rotation < 0:
            raise ValueError(f"class_rotation must be >= 0, got {self.class_rotation}")


@dataclass(frozen=True)
class VotedSequence:
    """A sequence's votes alongside its ground-truth annotations."""

    seq_id: str
    length: int
    votes: tuple[LocalVote, ...]
    annotations: tuple[Annotation, ...]

    def __post_init__(self) -> None:
        votes = tuple(self.votes)
        anns = tuple(self.annotations)
        for v in votes:
            if not 0 <= v.snippet_location < self.length:
                raise ValueError(
                    f"vote at {v.snippet_location} outside sequence of length {self.length}"
                )
        for a in anns:
            if a.interval.end >= self.length:
                raise ValueError("annotation extends past the sequence end")
        object.__setattr__(self, "votes", votes)
        object.__setattr__(self, "annotations", anns)


def vote(
    class_forest: ClassForest, reg_forest: RegForest, snippet: Snippet
) -> LocalVote:
    """Forest vote for a single snippet."""
    return forest_votes(class_forest, reg_forest, [snippet])[0]


def forest_votes(
    class_forest: ClassForest, reg_forest: RegForest, snippets: Sequence[Snippet]
) -> list[LocalVote]:
    """Batched forest votes; one LocalVote per snippet."""
    if class_forest.num_classes != reg_forest.num_classes:
        raise ValueError(
            f"forest class counts differ: {class_forest.num_classes} vs "
            f"{reg_forest.num_classes}"
        )
    if not snippets:
        return []
    feats = np.stack([s.features for s in snippets])
    post = class_forest.predict_posterior(feats)
    hist_s, hist_e = reg_forest.predict_hists(feats)
    return [
        LocalVote(
            snippet_location=s.location,
            class_posterior=post[i],
            start_offset_hist=hist_s[i],
            end_offset_hist=hist_e[i],
        )
        for i, s in enumerate(snippets)
    ]


def scripted_vote(
    true_label: int,
    true_interval: Interval,
    snippet_location: int,
    params: CorruptionParams,
    num_classes: int,
    geometry: CubeGeometry,
    rng: np.random.Generator,
) -> LocalVote:
    """Vote generated from ground truth under the corruption script.

    Start/end offsets are the true ones left-shifted by temporal_bias with
    Gaussian jitter of temporal_sigma, one-hot quantized against the true
    action length. The class one-hot is rotated by class_rotation, perturbed
    entrywise by Gaussian noise of class_sigma, clamped at zero, renormalized
    (uniform when everything clamps away), and a single class id is sampled
    from the result. Draw order: start jitter, end jitter, class noise,
    class sample.
    """
    if not 0 <= true_label < num_classes:
        raise ValueError(f"label {true_label} outside [0, {num_classes})")
    length = true_interval.length
    bins = geometry.vote_bins

    start_off = (true_interval.start - snippet_location) - params.temporal_bias
    end_off = (true_interval.end - snippet_location) - params.temporal_bias
    if params.temporal_sigma > 0:
        start_off += rng.normal(0.0, params.temporal_sigma)
        end_off += rng.normal(0.0, params.temporal_sigma)
    s_bin = quantize_offset(start_off, length, bins, geometry.dev_range)
    e_bin = quantize_offset(end_off, length, bins, geometry.dev_range)
    hist_s = np.zeros((num_classes, bins))
    hist_s[:, s_bin] = 1.0
    hist_e = np.zeros((num_classes, bins))
    hist_e[:, e_bin] = 1.0

    rotated = np.zeros(num_classes)
    rotated[(true_label + params.class_rotation) % num_classes] = 1.0
    if params.class_sigma > 0:
        noisy = rotated + rng.normal(0.0, params.class_sigma, size=num_classes)
        np.clip(noisy, 0.0, None, out=noisy)
        total = noisy.sum()
        dist = noisy / total if total > 0 else np.full(num_classes, 1.0 / num_classes)
        sampled = int(rng.choice(num_classes, p=dist))
    else:
        sampled = int(np.argmax(rotated))
    posterior = np.zeros(num_classes)
    posterior[sampled] = 1.0

    return LocalVote(
        snippet_location=snippet_location,
        class_posterior=posterior,
        start_offset_hist=hist_s,
        end_offset_hist=hist_e,
    )


def dirac_class(v: LocalVote) -> LocalVote:
    """Replace the posterior with a one-hot at its argmax (ties: smallest id)."""
    post = np.zeros_like(v.class_posterior)
    post[int(np.argmax(v.class_posterior))] = 1.0
    return LocalVote(
        snippet_location=v.snippet_location,
        class_posterior=post,
        start_offset_hist=v.start_offset_hist,
        end_offset_hist=v.end_offset_hist,
    )


def stack_votes(
    votes: Sequence[LocalVote], num_classes: int, vote_bins: int, length: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame vote mass: (counts (T,), joint_start (T,K,D), joint_end).

    joint[t, k, d] sums posterior[k] * hist[k, d] over votes located at t,
    which is exactly what accumulation scatters into the cube.
    """
    counts = np.zeros(length)
    joint_s = np.zeros((length, num_classes, vote_bins))
    joint_e = np.zeros((length, num_classes, vote_bins))
    for v in votes:
        if v.num_classes != num_classes or v.vote_bins != vote_bins:
            raise ValueError("vote shape does not match the requested geometry")
        t = v.snippet_location
        if not 0 <= t < length:
            raise ValueError(f"vote location {t} outside [0, {length})")
        counts[t] += 1.0
        joint_s[t] += v.class_posterior[:, None] * v.start_offset_hist
        joint_e[t] += v.class_posterior[:, None] * v.end_offset_hist
    return counts, joint_s, joint_e
