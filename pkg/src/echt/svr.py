"""Linear epsilon-insensitive support vector regression, no bias term.

Minimizes 0.5*||w||^2 + c * sum_i max(0, |t_i - w.x_i| - epsilon) by dual
coordinate descent. The paired box-constrained dual variables (alpha+,
alpha-) in [0, c]^2 reduce to a single beta_i = alpha+ - alpha- in [-c, c]
per row, which is the form iterated here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

__all__ = ["SvrProblem", "SvrSolution", "primal_objective", "solve"]


@dataclass(frozen=True)
class SvrProblem:
    """Feature rows, targets, and solver settings for one regression."""

    features: sp.csr_matrix = field(repr=False)
    targets: np.ndarray = field(repr=False)
    epsilon: float = 0.01
    c: float = 1.0
    tol: float = 1e-4
    max_iter: int = 1000

    def __post_init__(self) -> None:
        x = self.features
        if not sp.issparse(x):
            x = sp.csr_matrix(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        x = x.tocsr().astype(np.float64)
        t = np.asarray(self.targets, dtype=np.float64).ravel()
        if x.shape[0] == 0:
            raise ValueError("problem needs at least one row")
        if x.shape[0] != t.shape[0]:
            raise ValueError(f"{x.shape[0]} rows but {t.shape[0]} targets")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", t)

    @property
    def num_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SvrSolution:
    weights: np.ndarray
    converged: bool
    iterations: int
    primal_objective: float


def primal_objective(weights: np.ndarray, problem: SvrProblem) -> float:
    """Exact primal value at the given weight vector."""
    w = np.asarray(weights, dtype=np.float64)
    resid = np.abs(problem.targets - problem.features @ w) - problem.epsilon
    return 0.5 * float(w @ w) + problem.c * float(np.sum(np.maximum(resid, 0.0)))


@njit(cache=True, nogil=True)
def _cd_epoch(data, indices, indptr, targets, qii, eps, cbox, w, beta, order):
    """One dual pass over `order`; updates w/beta in place.

    cbox holds the per-row box bound (the base cost times the row's
    multiplicity when duplicates were folded). Returns the maximal
    projected-gradient violation seen before each update.
    """
    max_viol = 0.0
    for pos in range(order.shape[0]):
        i = order[pos]
        lo = indptr[i]
        hi = indptr[i + 1]
        g = -targets[i]
        for p in range(lo, hi):
            g += data[p] * w[indices[p]]
        b = beta[i]
        ci = cbox[i]
        # KKT violation for f(b) = 0.5*q*b^2 + (g - q*b)*b' ... + eps*|b'| on [-ci, ci]
        if b == 0.0:
            viol = 0.0
            if -(g + eps) > viol:
                viol = -(g + eps)
            if g - eps > viol:
                viol = g - eps
        elif b >= ci:
            viol = g + eps if g + eps > 0.0 else 0.0
        elif b <= -ci:
            viol = -(g - eps) if -(g - eps) > 0.0 else 0.0
        elif b > 0.0:
            viol = abs(g + eps)
        else:
            viol = abs(g - eps)
        if viol > max_viol:
            max_viol = viol
        q = qii[i]
        if q <= 0.0:
            continue
        # exact single-coordinate minimizer: soft threshold then clip
        z = q * b - g
        if z > eps:
            b_new = (z - eps) / q
        elif z < -eps:
            b_new = (z + eps) / q
        else:
            b_new = 0.0
        if b_new > ci:
            b_new = ci
        elif b_new < -ci:
            b_new = -ci
        delta = b_new - b
        if delta != 0.0:
            beta[i] = b_new
            for p in range(lo, hi):
                w[indices[p]] += delta * data[p]
    return max_viol


def _fold_duplicate_rows(
    x: sp.csr_matrix, targets: np.ndarray
) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Merge identical (row, target) pairs into one row with a multiplicity.

    m copies of a row contribute m times its hinge loss, which is the same
    problem as one copy with cost (and dual box) scaled by m. Returns the
    representative rows, their targets, and the multiplicities.
    """
    slots: dict[tuple[bytes, bytes, float], int] = {}
    reps: list[int] = []
    mult: list[float] = []
    for i in range(x.shape[0]):
        lo, hi = x.indptr[i], x.indptr[i + 1]
        key = (x.indices[lo:hi].tobytes(), x.data[lo:hi].tobytes(), float(targets[i]))
        slot = slots.get(key)
        if slot is None:
            slots[key] = len(reps)
            reps.append(i)
            mult.append(1.0)
        else:
            mult[slot] += 1.0
    if len(reps) == x.shape[0]:
        return x, targets, np.ones(x.shape[0])
    idx = np.asarray(reps)
    return x[idx], targets[idx], np.asarray(mult)


def solve(problem: SvrProblem, seed: int = 0) -> SvrSolution:
    """Dual coordinate descent with a seeded per-epoch row shuffle.

    Duplicate rows are folded into weighted representatives first (an exact
    reformulation). Converged means the maximal projected-gradient violation
    of an epoch dropped to tol or below. Rows with an all-zero feature vector
    cannot move w and are excluded from the sweep (their loss is constant).
    """
    x, targets, mult = _fold_duplicate_rows(problem.features, problem.targets)
    data = np.ascontiguousarray(x.data, dtype=np.float64)
    indices = np.ascontiguousarray(x.indices, dtype=np.int32)
    indptr = np.ascontiguousarray(x.indptr, dtype=np.int32)
    qii = np.asarray(x.multiply(x).sum(axis=1), dtype=np.float64).ravel()
    active = np.flatnonzero(qii > 0.0).astype(np.int32)
    cbox = problem.c * mult

    w = np.zeros(problem.dim, dtype=np.float64)
    beta = np.zeros(x.shape[0], dtype=np.float64)
    rng = np.random.default_rng(seed)
    converged = False
    epochs = 0
    for _ in range(problem.max_iter):
        epochs += 1
        order = rng.permutation(active).astype(np.int32)
        viol = _cd_epoch(
            data, indices, indptr, targets, qii,
            problem.epsilon, cbox, w, beta, order,
        )
        if viol <= problem.tol:
            converged = True
            break
    return SvrSolution(
        weights=w,
        converged=converged,
        iterations=epochs,
        primal_objective=primal_objective(w, problem),
    )
