"""Detection and recognition scoring.

Matching is greedy: detections claim ground-truth annotations of their own
class in score order, at overlap strictly above 0.5. Leftover detections and
annotations are then paired once more across classes to populate the
confusion matrix's off-diagonal (a wrong-class detection on top of an action
is a confusion, not just two unrelated errors); those pairs still count as
false positives and false negatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from echt.core import Annotation, f1, iou
from echt.detector import Detection

__all__ = ["EvalReport", "match", "report"]

_MATCH_IOU = 0.5


def _greedy_order(detections: Sequence[Detection]) -> list[int]:
    return sorted(
        range(len(detections)),
        key=lambda i: (
            -detections[i].score,
            detections[i].interval.start,
            detections[i].label,
            -detections[i].interval.length,
        ),
    )


def match(
    detections: Sequence[Detection], annotations: Sequence[Annotation]
) -> list[tuple[int, int]]:
    """Greedy same-class assignment at IoU strictly above 0.5.

    Detections are visited by score descending (ties: earlier start, smaller
    class, longer window); each claims the still-unmatched annotation of its
    class it overlaps most. Returns (detection index, annotation index)
    pairs into the inputs.
    """
    taken = np.zeros(len(annotations), dtype=bool)
    pairs: list[tuple[int, int]] = []
    for i in _greedy_order(detections):
        det = detections[i]
        best_j, best_ov = -1, _MATCH_IOU
        for j, ann in enumerate(annotations):
            if taken[j] or ann.label != det.label:
                continue
            ov = iou(det.interval, ann.interval)
            if ov > best_ov:
                best_j, best_ov = j, ov
        if best_j >= 0:
            taken[best_j] = True
            pairs.append((i, best_j))
    return pairs


@dataclass(frozen=True)
class EvalReport:
    """Aggregated matching outcome.

    confusion[g, p] counts annotations of class g claimed by a detection of
    class p; the diagonal holds the true positives. A row sums to the class's
    annotation count minus the annotations no detection overlapped at all,
    so in a recognition protocol (one prediction per annotation, identical
    placement) rows sum to the ground-truth counts exactly.
    mean_start_deviation averages |predicted - true| start over true
    positives and is NaN when there are none.
    """

    num_classes: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_class_f1: np.ndarray = field(repr=False)
    confusion: np.ndarray = field(repr=False)
    mean_start_deviation: float = float("nan")


def _safe_ratio(num: int, denom: int) -> float:
    return num / denom if denom else 0.0


def report(
    groups: Sequence[tuple[Sequence[Detection], Sequence[Annotation]]],
    num_classes: int,
) -> EvalReport:
    """Evaluate detection/annotation groups (one per sequence) jointly.

    Matching never crosses group boundaries. Labels must lie in
    [0, num_classes).
    """
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    tp_c = np.zeros(num_classes, dtype=np.int64)
    fp_c = np.zeros(num_classes, dtype=np.int64)
    fn_c = np.zeros(num_classes, dtype=np.int64)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    deviations: list[int] = []

    for dets, anns in groups:
        for d in dets:
            if not 0 <= d.label < num_classes:
                raise ValueError(f"detection label {d.label} outside [0, {num_classes})")
        for a in anns:
            if not 0 <= a.label < num_classes:
                raise ValueError(f"annotation label {a.label} outside [0, {num_classes})")
        pairs = match(dets, anns)
        matched_d = {i for i, _ in pairs}
        matched_a = {j for _, j in pairs}
        for i, j in pairs:
            tp_c[dets[i].label] += 1
            confusion[anns[j].label, dets[i].label] += 1
            deviations.append(abs(dets[i].interval.start - anns[j].interval.start))
        for label in (d.label for i, d in enumerate(dets) if i not in matched_d):
            fp_c[label] += 1
        for label in (a.label for j, a in enumerate(anns) if j not in matched_a):
            fn_c[label] += 1
        # cross-class pass: remaining overlaps become confusion entries
        for i in _greedy_order(dets):
            if i in matched_d:
                continue
            best_j, best_ov = -1, _MATCH_IOU
            for j, ann in enumerate(anns):
                if j in matched_a:
                    continue
                ov = iou(dets[i].interval, ann.interval)
                if ov > best_ov:
                    best_j, best_ov = j, ov
            if best_j >= 0:
                matched_a.add(best_j)
                confusion[anns[best_j].label, dets[i].label] += 1

    tp, fp, fn = int(tp_c.sum()), int(fp_c.sum()), int(fn_c.sum())
    precision = _safe_ratio(tp, tp + fp)
    recall = _safe_ratio(tp, tp + fn)
    per_class = np.array(
        [
            f1(
                _safe_ratio(tp_c[k], tp_c[k] + fp_c[k]),
                _safe_ratio(tp_c[k], tp_c[k] + fn_c[k]),
            )
            for k in range(num_classes)
        ]
    )
    return EvalReport(
        num_classes=num_classes,
        tp=tp,
        fp=fp,
        fn=fn,
        precision=precision,
        recall=recall,
        f1=f1(precision, recall),
        per_class_f1=per_class,
        confusion=confusion,
        mean_start_deviation=float(np.mean(deviations)) if deviations else float("nan"),
    )
