"""k-means, assignment, and matched-accuracy tests against brute-force
oracles: factorial enumeration for the matching, exhaustive assignment
enumeration for the k-means objective."""

import csv
import itertools

import numpy as np
import numpy.testing as npt
import pytest

from cgcd.autodiff import make_rng
from cgcd.clustering import (
    clustering_acc,
    contingency,
    hungarian,
    kmeans,
    split_acc,
    write_confusion_csv,
)
from cgcd.errors import ShapeError, ValidationError

# ---------------------------------------------------------------------------
# oracles


def brute_force_min_assignment(cost):
    n = len(cost)
    best_total, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if total < best_total:
            best_total, best_perm = total, perm
    return np.array(best_perm), float(best_total)


def brute_force_acc(y_true, y_pred):
    counts, t_vals, p_vals = contingency(y_true, y_pred)
    n = max(len(t_vals), len(p_vals))
    padded = np.zeros((n, n), dtype=np.int64)
    padded[: len(t_vals), : len(p_vals)] = counts
    best = max(
        sum(padded[i, perm[i]] for i in range(n))
        for perm in itertools.permutations(range(n))
    )
    return best / len(y_true)


def sse_of_assignment(x, assign, k):
    total = 0.0
    for c in range(k):
        members = x[assign == c]
        if len(members):
            center = members.mean(axis=0)
            total += float(((members - center) ** 2).sum())
    return total


def exhaustive_kmeans_optimum(x, k):
    n = len(x)
    best = np.inf
    for assign in itertools.product(range(k), repeat=n):
        best = min(best, sse_of_assignment(x, np.array(assign), k))
    return best


# ---------------------------------------------------------------------------
# hungarian


def test_hungarian_hand_case():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    perm, total = hungarian(cost)
    assert list(perm) == [1, 0, 2]
    assert total == 5.0


def test_hungarian_identity_and_singleton():
    cost = np.full((4, 4), 5.0) - 5.0 * np.eye(4)  # zeros on the diagonal
    perm, total = hungarian(cost)
    assert list(perm) == [0, 1, 2, 3]
    assert total == 0.0
    perm, total = hungarian(np.array([[2.5]]))
    assert list(perm) == [0] and total == 2.5


def test_hungarian_matches_factorial_enumeration():
    for seed in range(10):
        rng = make_rng(seed)
        for k in range(2, 8):
            cost = rng.normal(size=(k, k)) * 10
            perm, total = hungarian(cost)
            assert sorted(perm) == list(range(k))  # a permutation
            _, want = brute_force_min_assignment(cost)
            assert abs(total - want) < 1e-9, (seed, k)


def test_hungarian_on_integer_costs_is_exact():
    rng = make_rng(11)
    for k in range(2, 7):
        cost = rng.integers(0, 50, size=(k, k)).astype(np.float64)
        _, total = hungarian(cost)
        _, want = brute_force_min_assignment(cost)
        assert total == want


def test_hungarian_validation():
    with pytest.raises(ShapeError):
        hungarian(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        hungarian(np.zeros(4))
    with pytest.raises(ValidationError):
        hungarian(np.array([[0.0, np.inf], [1.0, 2.0]]))


# ---------------------------------------------------------------------------
# k-means


def test_lloyd_objective_trace_never_increases():
    for seed in range(10):
        rng = make_rng(seed)
        x = rng.normal(size=(40, 3))
        out = kmeans(x, 4, rng, restarts=3)
        trace = out.objective_trace
        assert len(trace) >= 1
        for a, b in zip(trace, trace[1:]):
            assert b <= a


def test_kmeans_attains_exhaustive_optimum_on_small_inputs():
    # evaluate both the enumerated assignments and the k-means result with
    # the same SSE routine, so the comparison is exact
    for seed in range(8):
        rng = make_rng(seed)
        n = int(rng.integers(5, 9))
        k = int(rng.integers(2, 4))
        x = rng.normal(size=(n, 2)) * 2.0
        out = kmeans(x, k, rng, restarts=30)
        got = sse_of_assignment(x, out.assignment, k)
        want = exhaustive_kmeans_optimum(x, k)
        assert got <= want + 1e-12, (seed, n, k, got, want)


def test_kmeans_is_deterministic_given_rng_state():
    x = make_rng(5).normal(size=(30, 4))
    a = kmeans(x, 3, make_rng(42))
    b = kmeans(x, 3, make_rng(42))
    npt.assert_array_equal(a.assignment, b.assignment)
    npt.assert_array_equal(a.centroids, b.centroids)
    assert a.objective == b.objective and a.n_iter == b.n_iter


def test_kmeans_k_equals_one_gives_mean_and_total_scatter():
    rng = make_rng(6)
    x = rng.normal(size=(20, 3))
    out = kmeans(x, 1, rng)
    npt.assert_allclose(out.centroids[0], x.mean(axis=0), rtol=1e-12)
    want = float(((x - x.mean(axis=0)) ** 2).sum())
    assert abs(out.objective - want) < 1e-9
    assert np.all(out.assignment == 0)


def test_kmeans_k_equals_n_reaches_zero_objective():
    rng = make_rng(7)
    x = rng.normal(size=(6, 2))
    out = kmeans(x, 6, rng, restarts=10)
    assert out.objective == 0.0
    assert len(set(out.assignment.tolist())) == 6


def test_kmeans_two_tight_pairs_centroids_at_midpoints():
    x = np.array([[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]])
    out = kmeans(x, 2, make_rng(3), restarts=10)
    mids = sorted(out.centroids.tolist())
    assert mids == [[0.0, 1.0], [10.0, 1.0]]


def test_kmeans_handles_duplicate_points():
    x = np.array([[0.0, 0.0]] * 5 + [[3.0, 3.0]] * 5)
    out = kmeans(x, 2, make_rng(8))
    assert out.objective == 0.0


def test_kmeans_validation():
    x = make_rng(0).normal(size=(5, 2))
    with pytest.raises(ValidationError):
        kmeans(x, 0, make_rng(0))
    with pytest.raises(ValidationError):
        kmeans(x, 6, make_rng(0))
    with pytest.raises(ShapeError):
        kmeans(x[0], 1, make_rng(0))
    with pytest.raises(ShapeError):
        kmeans(x[:0], 1, make_rng(0))
    with pytest.raises(ValidationError):
        kmeans(x, 2, make_rng(0), restarts=0)


# ---------------------------------------------------------------------------
# matched accuracy


def random_labelings(rng, n, n_true, n_pred):
    y_true = rng.integers(0, n_true, size=n)
    y_pred = rng.integers(0, n_pred, size=n)
    return y_true, y_pred


def test_clustering_acc_matches_factorial_oracle():
    for seed in range(30):
        rng = make_rng(seed)
        n = int(rng.integers(4, 11))
        y_true, y_pred = random_labelings(rng, n, int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        got = clustering_acc(y_true, y_pred)
        assert got.acc == brute_force_acc(y_true, y_pred), seed
        # the mapping must reproduce the per-sample correctness mask
        mapped = np.array([got.mapping.get(int(c), -1) for c in y_pred])
        npt.assert_array_equal(got.correct, mapped == y_true)


def test_clustering_acc_invariant_under_prediction_relabeling():
    rng = make_rng(9)
    y_true = rng.integers(0, 5, size=60)
    y_pred = rng.integers(0, 6, size=60)
    base = clustering_acc(y_true, y_pred).acc
    for _ in range(50):
        vals = np.unique(y_pred)
        new_ids = rng.choice(10_000, size=len(vals), replace=False)
        table = dict(zip(vals.tolist(), new_ids.tolist()))
        relabeled = np.array([table[int(c)] for c in y_pred])
        assert clustering_acc(y_true, relabeled).acc == base


def test_perfect_and_permuted_predictions_score_one():
    rng = make_rng(10)
    y_true = rng.integers(0, 4, size=40)
    assert clustering_acc(y_true, y_true).acc == 1.0
    shuffled = (y_true + 7) * 13  # injective relabeling
    assert clustering_acc(y_true, shuffled).acc == 1.0


def test_more_clusters_than_classes_and_vice_versa():
    # 3 true classes, 5 clusters: extra clusters stay unmatched
    y_true = np.array([0, 0, 1, 1, 2, 2])
    y_pred = np.array([0, 1, 2, 2, 3, 4])
    got = clustering_acc(y_true, y_pred)
    assert got.acc == brute_force_acc(y_true, y_pred)
    # 4 true classes, 2 clusters
    y_true = np.array([0, 1, 2, 3, 0, 1])
    y_pred = np.array([0, 0, 1, 1, 0, 0])
    got = clustering_acc(y_true, y_pred)
    assert got.acc == brute_force_acc(y_true, y_pred)


def test_clustering_acc_validation():
    with pytest.raises(ShapeError):
        clustering_acc(np.zeros(3, dtype=int), np.zeros(4, dtype=int))
    with pytest.raises(ValidationError):
        clustering_acc(np.zeros(0, dtype=int), np.zeros(0, dtype=int))


# ---------------------------------------------------------------------------
# split accuracy


def test_split_acc_hand_case():
    y_true = np.array([0, 0, 1, 1, 2, 2])
    y_pred = np.array([5, 5, 6, 7, 8, 8])
    match = clustering_acc(y_true, y_pred)
    assert abs(match.acc - 5 / 6) < 1e-15
    m = split_acc(match, old_classes=[0, 1], new_classes=[2])
    assert m.n_old == 4 and m.n_new == 2 and m.n_all == 6
    assert abs(m.acc_old - 3 / 4) < 1e-15
    assert m.acc_new == 1.0
    assert not m.new_empty
    assert m.mapping[5] == 0 and m.mapping[8] == 2


def test_split_acc_weighted_identity():
    for seed in range(10):
        rng = make_rng(seed)
        y_true = rng.integers(0, 6, size=80)
        y_pred = rng.integers(0, 6, size=80)
        match = clustering_acc(y_true, y_pred)
        old = [0, 1, 2]
        new = [3, 4, 5]
        m = split_acc(match, old, new)
        want = (m.n_old * m.acc_old + m.n_new * m.acc_new) / m.n_all
        assert abs(m.acc_all - want) <= 1e-9


def test_split_acc_empty_new_split():
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.array([0, 0, 1, 1])
    m = split_acc(clustering_acc(y_true, y_pred), old_classes=[0, 1], new_classes=[7])
    assert m.new_empty and m.acc_new == 1.0 and m.n_new == 0
    assert m.acc_all == m.acc_old == 1.0


def test_split_acc_validation():
    match = clustering_acc(np.array([0, 1, 2, 0]), np.array([0, 1, 2, 0]))
    with pytest.raises(ValidationError):
        split_acc(match, old_classes=[0, 1], new_classes=[1, 2])  # overlap
    with pytest.raises(ValidationError):
        split_acc(match, old_classes=[0], new_classes=[1])  # class 2 uncovered


# ---------------------------------------------------------------------------
# contingency + confusion output


def test_contingency_matches_double_loop():
    for seed in range(5):
        rng = make_rng(seed)
        y_true = rng.integers(0, 5, size=50)
        y_pred = rng.integers(10, 14, size=50)
        counts, t_vals, p_vals = contingency(y_true, y_pred)
        for i, t in enumerate(t_vals):
            for j, p in enumerate(p_vals):
                want = int(np.sum((y_true == t) & (y_pred == p)))
                assert counts[i, j] == want
        assert counts.sum() == 50


def test_confusion_csv_round_trip(tmp_path):
    rng = make_rng(12)
    y_true = rng.integers(0, 4, size=40)
    y_pred = rng.integers(0, 5, size=40)
    match = clustering_acc(y_true, y_pred)
    path = tmp_path / "confusion.csv"
    write_confusion_csv(match, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert header[0] == "true_class"
    counts, t_vals, p_vals = contingency(y_true, y_pred)
    assert len(body) == len(t_vals)
    assert len(header) == 1 + len(p_vals)
    # every cell must reappear under its pred_{cluster}-> label
    col_cluster = [int(h.split("_")[1].split("-")[0]) for h in header[1:]]
    for row in body:
        t = int(row[0])
        i = int(np.searchsorted(t_vals, t))
        for cell, p in zip(row[1:], col_cluster):
            j = int(np.searchsorted(p_vals, p))
            assert int(cell) == counts[i, j]
    # matched columns come first, ordered by matched class id
    matched_cols = [match.mapping.get(c) for c in col_cluster]
    seen = [m for m in matched_cols if m is not None]
    assert seen == sorted(seen)
