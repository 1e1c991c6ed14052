"""Shared domain types and frame-level primitives.

Frames are integer indices, intervals are closed on both ends, and all
offsets are normalized by a window length before quantization so that the
same bin grid serves windows of any scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ActionLabel",
    "Annotation",
    "CubeGeometry",
    "Interval",
    "Snippet",
    "f1",
    "iou",
    "make_labels",
    "quantize_offset",
]


@dataclass(frozen=True)
class ActionLabel:
    """One action class: dense integer id plus a display name."""

    id: int
    name: str

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"label id must be >= 0, got {self.id}")
        if not self.name:
            raise ValueError("label name must be non-empty")


def make_labels(num_classes: int) -> tuple[ActionLabel, ...]:
    """Dense label set 0..K-1 with generated names."""
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    return tuple(ActionLabel(i, f"action-{i:02d}") for i in range(num_classes))


@dataclass(frozen=True)
class Interval:
    """Closed frame interval [start, end], both ends inclusive."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ValueError(f"interval start must be >= 0, got {self.start}")
        if self.end < self.start:
            raise ValueError(f"interval end {self.end} < start {self.start}")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2.0

    def contains(self, frame: int) -> bool:
        return self.start <= frame <= self.end


@dataclass(frozen=True)
class Annotation:
    """Ground-truth action instance: class id plus its interval."""

    label: int
    interval: Interval

    def __post_init__(self) -> None:
        if self.label < 0:
            raise ValueError(f"annotation label must be >= 0, got {self.label}")


@dataclass(frozen=True)
class Snippet:
    """A short feature chunk centered at one frame of a sequence."""

    location: int
    features: np.ndarray = field(repr=False)
    snippet_len: int = 5

    def __post_init__(self) -> None:
        if self.snippet_len < 1:
            raise ValueError(f"snippet_len must be >= 1, got {self.snippet_len}")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise ValueError(f"features must be 1-D, got shape {feats.shape}")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class CubeGeometry:
    """Bin layout of the vote cube.

    dev_bins quantize the snippet-to-candidate deviation, vote_bins quantize
    the voted offset, and dev_range is the half-width of both grids in units
    of the window length.
    """

    dev_bins: int = 8
    vote_bins: int = 8
    num_classes: int = 16
    dev_range: float = 0.75

    def __post_init__(self) -> None:
        if self.dev_bins < 1:
            raise ValueError(f"dev_bins must be >= 1, got {self.dev_bins}")
        if self.vote_bins < 1:
            raise ValueError(f"vote_bins must be >= 1, got {self.vote_bins}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.dev_range > 0:
            raise ValueError(f"dev_range must be > 0, got {self.dev_range}")

    @property
    def feature_dim(self) -> int:
        """Length of the flattened two-block cube vector."""
        return 2 * self.dev_bins * self.vote_bins * self.num_classes

    def cube_shape(self) -> tuple[int, int, int, int]:
        """(block, dev_bin, vote_bin, class); block 0 = start, 1 = end."""
        return (2, self.dev_bins, self.vote_bins, self.num_classes)


def quantize_offset(
    offset_frames: float, window_len: int, bins: int, dev_range: float = 0.75
) -> int:
    """Map a frame offset to a bin index on a uniform normalized grid.

    The offset is divided by window_len and dropped into one of `bins`
    half-open cells [lo, hi) tiling [-dev_range, +dev_range). Values outside
    the grid clamp to the edge bins, which also closes the top boundary.
    """
    if window_len == 0:
        raise ValueError("window_len must be a positive frame count")
    if window_len < 0:
        raise ValueError(f"window_len must be > 0, got {window_len}")
    if bins == 0:
        raise ValueError("bins must be >= 1")
    if bins < 0:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if not dev_range > 0:
        raise ValueError(f"dev_range must be > 0, got {dev_range}")
    normalized = offset_frames / window_len
    idx = math.floor((normalized + dev_range) * bins / (2.0 * dev_range))
    if idx < 0:
        return 0
    if idx >= bins:
        return bins - 1
    return idx


def quantize_offsets(
    offsets: np.ndarray, window_len: int, bins: int, dev_range: float = 0.75
) -> np.ndarray:
    """Vectorized quantize_offset over an array of frame offsets."""
    if window_len <= 0:
        raise ValueError(f"window_len must be > 0, got {window_len}")
    if bins <= 0:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if not dev_range > 0:
        raise ValueError(f"dev_range must be > 0, got {dev_range}")
    normalized = np.asarray(offsets, dtype=np.float64) / window_len
    idx = np.floor((normalized + dev_range) * bins / (2.0 * dev_range)).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def iou(a: Interval, b: Interval) -> float:
    """Intersection over union in whole frames; 0 for disjoint intervals."""
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def f1(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    for name, value in (("precision", precision), ("recall", recall)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {value}")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
