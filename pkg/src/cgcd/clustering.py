"""k-means clustering and optimally-matched clustering accuracy.

Accuracy follows the standard protocol: build the cluster-vs-class
contingency table, solve a min-cost assignment on its negation (one
shared permutation), and score every sample under that single matching.
Old/New splits reuse the permutation found on the full set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError


@dataclass
class Clustering:
    centroids: np.ndarray  # [k, d]
    assignment: np.ndarray  # [n] int
    objective: float  # sum of squared distances to assigned centroid
    n_iter: int
    objective_trace: list[float] = field(repr=False, default_factory=list)


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all mass already covered; fall back to a uniform pick
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float, int, list[float]]:
    n, k = x.shape[0], centroids.shape[0]
    assign = None
    trace: list[float] = []
    for it in range(max_iter):
        d2 = _sq_dists(x, centroids)
        new_assign = np.argmin(d2, axis=1)  # ties -> lowest centroid id

        # any centroid that lost all members moves to the farthest point
        counts = np.bincount(new_assign, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            cur = d2[np.arange(n), new_assign]
            order = np.argsort(-cur)
            for slot, cid in enumerate(empties):
                centroids[cid] = x[order[slot]]
            d2 = _sq_dists(x, centroids)
            new_assign = np.argmin(d2, axis=1)

        obj = float(d2[np.arange(n), new_assign].sum())
        if trace:
            assert obj <= trace[-1], f"Lloyd objective rose: {trace[-1]} -> {obj}"
        trace.append(obj)

        if assign is not None and np.array_equal(new_assign, assign):
            return centroids, assign, obj, it + 1, trace
        assign = new_assign
        for c in range(k):
            members = x[assign == c]
            if len(members):
                centroids[c] = members.sum(axis=0) / len(members)
    d2 = _sq_dists(x, centroids)
    assign = np.argmin(d2, axis=1)
    obj = float(d2[np.arange(n), assign].sum())
    trace.append(obj)
    return centroids, assign, obj, max_iter, trace


def kmeans(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    restarts: int = 10,
    max_iter: int = 300,
) -> Clustering:
    """Best of ``restarts`` k-means++ seeded Lloyd runs (ties keep the earliest)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"kmeans needs a non-empty 2-D array, got {x.shape}")
    if not 1 <= k <= x.shape[0]:
        raise ValidationError(f"k must be in [1, n_samples], got k={k}, n={x.shape[0]}")
    if restarts < 1 or max_iter < 1:
        raise ValidationError("restarts and max_iter must be >= 1")
    best: Clustering | None = None
    for _ in range(restarts):
        centroids = _kmeanspp_init(x, k, rng)
        centroids, assign, obj, n_iter, trace = _lloyd(x, centroids.copy(), max_iter)
        if best is None or obj < best.objective:
            best = Clustering(centroids, assign, obj, n_iter, trace)
    return best


# ---------------------------------------------------------------------------
# assignment + accuracy


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Min-cost perfect matching on a square cost matrix.

    Returns (perm, total) where row i is matched to column perm[i].
    Shortest-augmenting-path implementation with potentials, O(n^3).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeError(f"hungarian needs a square matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValidationError("hungarian needs finite costs")
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[col 1..n] = row, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    total = float(sum(cost[i, perm[i]] for i in range(n)))
    return perm, total


@dataclass
class MatchResult:
    """Clustering accuracy under one shared optimal cluster->class matching."""

    acc: float
    mapping: dict[int, int]  # predicted cluster id -> matched true class id (real pairs only)
    y_true: np.ndarray = field(repr=False)
    y_pred: np.ndarray = field(repr=False)
    correct: np.ndarray = field(repr=False)  # per-sample bool under the matching


@dataclass
class SessionMetrics:
    acc_all: float
    acc_old: float
    acc_new: float
    n_all: int
    n_old: int
    n_new: int
    new_empty: bool  # True when no new-class samples existed (acc_new pinned to 1.0)
    mapping: dict[int, int]


def contingency(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts[i, j] = |{samples with true class t_vals[i] and cluster p_vals[j]}|."""
    t_vals = np.unique(y_true)
    p_vals = np.unique(y_pred)
    t_idx = np.searchsorted(t_vals, y_true)
    p_idx = np.searchsorted(p_vals, y_pred)
    counts = np.zeros((len(t_vals), len(p_vals)), dtype=np.int64)
    np.add.at(counts, (t_idx, p_idx), 1)
    return counts, t_vals, p_vals


def clustering_acc(y_true, y_pred) -> MatchResult:
    """Fraction of samples whose cluster maps to their class under the
    best one-to-one matching (contingency padded square, min-cost on -counts)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ShapeError("y_true and y_pred must be equal-length 1-D arrays")
    if y_true.size == 0:
        raise ValidationError("clustering_acc on empty input")
    counts, t_vals, p_vals = contingency(y_true, y_pred)
    n = max(len(t_vals), len(p_vals))
    padded = np.zeros((n, n), dtype=np.float64)
    padded[: len(t_vals), : len(p_vals)] = counts
    perm, _ = hungarian(-padded)
    mapping: dict[int, int] = {}
    for i in range(n):
        j = perm[i]
        if i < len(t_vals) and j < len(p_vals):
            mapping[int(p_vals[j])] = int(t_vals[i])
    matched = np.array([mapping.get(int(c), -1) for c in p_vals])
    correct = matched[np.searchsorted(p_vals, y_pred)] == y_true
    return MatchResult(float(correct.mean()), mapping, y_true, y_pred, correct)


def split_acc(match: MatchResult, old_classes, new_classes) -> SessionMetrics:
    """Old/New accuracy under the matching already found on the full set."""
    old = set(int(c) for c in old_classes)
    new = set(int(c) for c in new_classes)
    observed = set(int(c) for c in np.unique(match.y_true))
    if old & new:
        raise ValidationError(f"old and new class sets overlap: {sorted(old & new)}")
    if not observed <= (old | new):
        raise ValidationError(f"classes {sorted(observed - old - new)} belong to neither split")
    in_old = np.isin(match.y_true, sorted(old))
    in_new = np.isin(match.y_true, sorted(new))
    n_old = int(in_old.sum())
    n_new = int(in_new.sum())
    acc_old = float(match.correct[in_old].mean()) if n_old else 1.0
    acc_new = float(match.correct[in_new].mean()) if n_new else 1.0
    return SessionMetrics(
        acc_all=match.acc,
        acc_old=acc_old,
        acc_new=acc_new,
        n_all=int(match.y_true.size),
        n_old=n_old,
        n_new=n_new,
        new_empty=n_new == 0,
        mapping=dict(match.mapping),
    )


def write_confusion_csv(match: MatchResult, path) -> None:
    """CSV with one row per true class, one column per matched predicted class."""
    counts, t_vals, p_vals = contingency(match.y_true, match.y_pred)
    # order predicted columns by their matched class where one exists
    order = sorted(range(len(p_vals)), key=lambda j: match.mapping.get(int(p_vals[j]), 10 ** 9))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["true_class"] + [
            f"pred_{p_vals[j]}->{match.mapping.get(int(p_vals[j]), 'unmatched')}" for j in order
        ]
        w.writerow(header)
        for i, t in enumerate(t_vals):
            w.writerow([int(t)] + [int(counts[i, j]) for j in order])
