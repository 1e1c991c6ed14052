"""Independent reference implementations used to pin expected test values.

Everything here is deliberately written with a different algorithm than the
package code it checks: explicit edge scans, frame-set enumeration, brute
force over candidates, and a projected-subgradient optimizer. Keep these slow
and obvious.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def bin_by_edge_scan(offset: float, window_len: int, bins: int, dev_range: float) -> int:
    """Quantization oracle: walk the explicit edge list instead of flooring."""
    norm = offset / window_len
    edges = [-dev_range + 2.0 * dev_range * i / bins for i in range(bins + 1)]
    if norm < edges[0]:
        return 0
    if norm >= edges[-1]:
        return bins - 1
    for i in range(bins):
        if edges[i] <= norm < edges[i + 1]:
            return i
    raise AssertionError("edge scan failed to place a finite offset")


def iou_by_enumeration(a_start: int, a_end: int, b_start: int, b_end: int) -> float:
    """IoU oracle: count frames in explicit python sets."""
    a = set(range(a_start, a_end + 1))
    b = set(range(b_start, b_end + 1))
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def svr_primal(w: np.ndarray, x: np.ndarray, t: np.ndarray, eps: float, c: float) -> float:
    """Objective 0.5||w||^2 + c * sum(max(0, |t - Xw| - eps))."""
    w = np.asarray(w, dtype=np.float64)
    resid = np.abs(t - x @ w) - eps
    return 0.5 * float(w @ w) + c * float(np.sum(np.maximum(resid, 0.0)))


@njit(cache=True)
def _subgrad_loop(
    x: np.ndarray,
    t: np.ndarray,
    eps: float,
    c: float,
    iters: int,
) -> np.ndarray:
    """Projected subgradient on the primal with 1/(mu*k) steps.

    The 0.5||w||^2 term makes the primal 1-strongly convex, so the classic
    step gamma_k = 1/k converges at O(1/k) on the best iterate. Tracks and
    returns the best w seen.
    """
    n, d = x.shape
    w = np.zeros(d)
    best_w = np.zeros(d)
    best_obj = 1e300
    for k in range(1, iters + 1):
        # subgradient of the hinge residual part
        g = w.copy()
        for i in range(n):
            r = t[i]
            for j in range(d):
                r -= x[i, j] * w[j]
            if r > eps:
                for j in range(d):
                    g[j] -= c * x[i, j]
            elif r < -eps:
                for j in range(d):
                    g[j] += c * x[i, j]
        step = 1.0 / k
        for j in range(d):
            w[j] -= step * g[j]
        obj = 0.0
        for j in range(d):
            obj += 0.5 * w[j] * w[j]
        for i in range(n):
            r = t[i]
            for j in range(d):
                r -= x[i, j] * w[j]
            slack = abs(r) - eps
            if slack > 0.0:
                obj += c * slack
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()
    return best_w


def svr_by_subgradient(
    x: np.ndarray, t: np.ndarray, eps: float, c: float, iters: int = 400_000
) -> tuple[np.ndarray, float]:
    """High-precision projected-subgradient solve of the SVR primal."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    w = _subgrad_loop(x, t, eps, c, iters)
    return w, svr_primal(w, x, t, eps, c)


def rotate_one_hot(true_class: int, rotation: int, num_classes: int) -> int:
    """Class-corruption oracle: rotate an explicit one-hot list."""
    hist = [0.0] * num_classes
    hist[true_class] = 1.0
    rotated = [0.0] * num_classes
    for k in range(num_classes):
        rotated[(k + rotation) % num_classes] = hist[k]
    return int(np.argmax(rotated))


def gaussian_entropy_2d(points: np.ndarray, floor: float = 1e-6) -> float:
    """Differential entropy of a 2-D Gaussian ML fit, diagonal-floored."""
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    cov = cov + floor * np.eye(2)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(np.log(2.0 * np.pi * np.e) + 0.5 * logdet)
