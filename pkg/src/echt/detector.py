"""Sliding-window detection and fixed-interval recognition.

scan evaluates every candidate placement of every configured window length
on a stride grid, entirely through matrix products against per-frame vote
mass, which is algebraically the same as accumulating each candidate's cube
and scoring it. Raw cube scores grow with the number of votes in a window,
so every candidate's score is divided by that count before thresholding.
This makes one threshold meaningful across window lengths and keeps scores
on the scale of the overlap targets the learned maps are trained against
(training rows are normalized the same way).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from echt.core import Interval, iou, quantize_offsets
from echt.scoremap import ECModel, Variant, accumulate, score_all
from echt.voter import LocalVote, stack_votes

__all__ = [
    "Detection",
    "RecognitionResult",
    "ScanConfig",
    "nms",
    "recognize",
    "scan",
]


@dataclass(frozen=True)
class Detection:
    """One scored candidate: class id, placement, and its model score."""

    label: int
    interval: Interval
    score: float


@dataclass(frozen=True)
class RecognitionResult:
    """Classification of a known interval; no_votes flags an empty window."""

    label: int
    score: float
    no_votes: bool = False


@dataclass(frozen=True)
class ScanConfig:
    """Candidate grid and filtering for scan."""

    window_lengths: tuple[int, ...] = (8, 12, 16, 24, 32, 48)
    stride: int = 2
    threshold: float = 0.5
    nms_iou: float = 0.5

    def __post_init__(self) -> None:
        lengths = tuple(int(l) for l in self.window_lengths)
        if not lengths:
            raise ValueError("window_lengths must not be empty")
        if any(l < 1 for l in lengths):
            raise ValueError(f"window lengths must be >= 1, got {lengths}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must be in (0, 1], got {self.nms_iou}")
        object.__setattr__(self, "window_lengths", lengths)


def nms(detections: Sequence[Detection], nms_iou: float) -> list[Detection]:
    """Greedy same-class suppression.

    Detections are visited by score descending, ties broken toward the
    earlier start, then the smaller class id, then the longer window; each
    is dropped when it overlaps an already-kept detection of its class at
    IoU >= nms_iou.
    """
    if not 0.0 < nms_iou <= 1.0:
        raise ValueError(f"nms_iou must be in (0, 1], got {nms_iou}")
    order = sorted(
        detections,
        key=lambda d: (-d.score, d.interval.start, d.label, -d.interval.length),
    )
    kept: list[Detection] = []
    for d in order:
        if any(
            k.label == d.label and iou(k.interval, d.interval) >= nms_iou
            for k in kept
        ):
            continue
        kept.append(d)
    return kept


def _block_responses(
    model: ECModel, joint: np.ndarray, block: int
) -> np.ndarray:
    """(K, dev_bins, T) response of one cube block against per-frame mass."""
    geom = model.geometry
    k, u, v = geom.num_classes, geom.dev_bins, geom.vote_bins
    w_block = model.weights.reshape(k, 2, u, v, k)[:, block]
    flat_w = w_block.reshape(k * u, v * k)
    flat_j = joint.transpose(0, 2, 1).reshape(joint.shape[0], v * k)
    return (flat_w @ flat_j.T).reshape(k, u, joint.shape[0])


def scan(
    model: ECModel,
    votes: Sequence[LocalVote],
    length: int,
    config: ScanConfig,
) -> list[Detection]:
    """Score every candidate on the grid, threshold, and suppress overlaps.

    Windows extending past either sequence end are not evaluated. Every
    returned detection carries exactly the score that accumulating its cube,
    applying the model, and dividing by the window's vote count would give.
    """
    if length < 1:
        raise ValueError(f"sequence length must be >= 1, got {length}")
    geom = model.geometry
    counts, joint_s, joint_e = stack_votes(
        votes, geom.num_classes, geom.vote_bins, length
    )
    m_start = _block_responses(model, joint_s, 0)
    m_end = _block_responses(model, joint_e, 1)
    cum = np.concatenate([[0.0], np.cumsum(counts)])

    detections: list[Detection] = []
    for win in sorted(set(config.window_lengths)):
        if win > length:
            continue
        starts = np.arange(0, length - win + 1, config.stride)
        offs = np.arange(win)
        u_s = quantize_offsets(-offs, win, geom.dev_bins, geom.dev_range)
        u_e = quantize_offsets(win - 1 - offs, win, geom.dev_bins, geom.dev_range)
        scores = np.zeros((geom.num_classes, starts.size))
        for j in range(win):
            scores += m_start[:, u_s[j], starts + j]
            scores += m_end[:, u_e[j], starts + j]
        vote_counts = cum[starts + win] - cum[starts]
        scores = np.where(vote_counts > 0, scores / np.maximum(vote_counts, 1.0), 0.0)
        for y, p in zip(*np.nonzero(scores >= config.threshold)):
            s0 = int(starts[p])
            detections.append(
                Detection(int(y), Interval(s0, s0 + win - 1), float(scores[y, p]))
            )
    return nms(detections, config.nms_iou)


def recognize(
    model: ECModel, votes: Sequence[LocalVote], interval: Interval
) -> RecognitionResult:
    """Classify one known placement: argmax class of its candidate scores.

    Applies the same vote-count division as scan, so the result equals what
    a scan restricted to this placement would report. A window holding no
    votes cannot be scored; it returns class 0 with score 0, flagged.
    """
    inside = [
        v for v in votes if interval.start <= v.snippet_location <= interval.end
    ]
    if not inside:
        return RecognitionResult(label=0, score=0.0, no_votes=True)
    feat = accumulate(inside, interval, model.geometry)
    scores = score_all(model, feat) / len(inside)
    y = int(np.argmax(scores))
    return RecognitionResult(label=y, score=float(scores[y]), no_votes=False)
