"""Acceptance gate: twelve numbered checks, each at its stated tolerance.

Checks 1-7 are oracle comparisons (finite differences, factorial and
exhaustive enumeration, closed forms). Checks 8-10 share one end-to-end
synthetic benchmark: four ablation arms, five seeds each, default
configuration. Check 11 is bitwise-level determinism, check 12 the
hidden-label firewall. Each test prints a single summary line on pass."""

import dataclasses
import inspect
import itertools
import time

import numpy as np
import pytest

import cgcd.autodiff
import cgcd.clustering
import cgcd.data
import cgcd.losses
import cgcd.model
import cgcd.trainer
from cgcd.autodiff import Tensor, backward, finite_diff_grad, make_rng, zero_grad
from cgcd.clustering import clustering_acc, contingency, hungarian, kmeans, split_acc
from cgcd.config import ExperimentConfig
from cgcd.data import gen_gaussian_mixture
from cgcd.losses import (
    LossConfig,
    ViewBatch,
    candidate_neighbors,
    labeled_loss,
    pair_only_neighbors,
    positiveness,
    scl_loss,
    soft_loss,
    ucl_loss,
    unit_positiveness,
)
from cgcd.model import LinearLayer, ModelParams, embed, init
from cgcd.protocol import Session, TestSplit, hidden_train_labels
from cgcd.trainer import run_pipeline

TestSplit.__test__ = False  # not a test class despite the name

# ---------------------------------------------------------------------------
# check 1: loss gradients vs central finite differences
# batch 2B=8, input dim 8, encoder 8-16-8, projection 8-4, h=1e-5,
# max relative error <= 1e-4 over 20 seeds, under 30 s


def _batch_through_model(params, x):
    b = x.shape[0]
    z = embed(params, np.concatenate([x, x + 0.05], axis=0))
    pair = np.concatenate([np.arange(b) + b, np.arange(b)])
    labels = np.concatenate([np.arange(b) % 2, np.arange(b) % 2])
    return ViewBatch(z, pair, labels)


def _replace_tensor(params, flat_idx, new_data):
    layers = []
    ti = 0
    for layer in params.all_layers():
        w, b = layer.w, layer.b
        if ti == flat_idx:
            w = Tensor(new_data, requires_grad=True)
        if ti + 1 == flat_idx:
            b = Tensor(new_data, requires_grad=True)
        ti += 2
        layers.append(LinearLayer(w, b))
    n_enc = len(params.encoder)
    return ModelParams(params.dims_encoder, params.dims_projection, layers[:n_enc], layers[n_enc:])


def _loss_value(kind, params, x, cfg, frozen=None):
    vb = _batch_through_model(params, x)
    if kind == "ucl":
        return ucl_loss(vb, cfg)
    if kind == "scl":
        return scl_loss(vb, cfg)
    if kind == "labeled":
        return labeled_loss(vb, cfg)
    nbrs, weights = frozen
    return soft_loss(vb, nbrs, weights, cfg)


def test_acceptance_01_loss_gradients_match_finite_differences():
    start = time.perf_counter()
    cfg = LossConfig()  # tau=0.1, lam=0.35, epsilon=0.85
    worst = 0.0
    for seed in range(20):
        rng = make_rng(seed)
        params = init((8, 16, 8), (8, 4), rng)
        x = rng.normal(size=(4, 8))
        base_vb = _batch_through_model(params, x)
        nbrs = candidate_neighbors(base_vb, cfg)
        frozen = (nbrs, positiveness(base_vb, nbrs, cfg))
        for kind in ("ucl", "scl", "labeled", "soft"):
            loss = _loss_value(kind, params, x, cfg, frozen)
            zero_grad(params.all_tensors())
            backward(loss)
            flat_idx = 0
            for layer in params.all_layers():
                for t in (layer.w, layer.b):
                    idx = flat_idx
                    flat_idx += 1

                    def f(p, idx=idx):
                        q = _replace_tensor(params, idx, p)
                        return _loss_value(kind, q, x, cfg, frozen).item()

                    fd = finite_diff_grad(f, t.data, h=1e-5)
                    g = t.grad
                    err = np.abs(g - fd)
                    denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
                    worst = max(worst, float((err / denom).max()))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-4, worst
    assert elapsed < 30.0, elapsed
    print(f"check 01 gradient fidelity: PASS (max rel err {worst:.2e}, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# check 2: assignment solver vs factorial enumeration, 200 matrices, <10 s


def test_acceptance_02_assignment_matches_brute_force():
    start = time.perf_counter()
    rng = make_rng(0)
    for i in range(200):
        k = 2 + (i % 6)
        cost = rng.uniform(-10.0, 10.0, size=(k, k))
        perm, total = hungarian(cost)
        best = min(
            sum(cost[r, p[r]] for r in range(k))
            for p in itertools.permutations(range(k))
        )
        assert total == best, (i, k)
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, elapsed
    print(f"check 02 assignment oracle: PASS (200 matrices, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# check 3: accuracy properties


def test_acceptance_03_accuracy_properties():
    rng = make_rng(1)
    # invariance under 100 random relabelings of the predictions (exact)
    y_true = rng.integers(0, 5, size=60)
    y_pred = rng.integers(0, 6, size=60)
    base = clustering_acc(y_true, y_pred).acc
    for _ in range(100):
        vals = np.unique(y_pred)
        table = dict(zip(vals.tolist(), rng.choice(10_000, size=len(vals), replace=False).tolist()))
        relabeled = np.array([table[int(c)] for c in y_pred])
        assert clustering_acc(y_true, relabeled).acc == base

    # equality with factorial brute force, N <= 10, <= 4 classes (exact)
    for case in range(30):
        n = int(rng.integers(2, 11))
        yt = rng.integers(0, 4, size=n)
        yp = rng.integers(0, 4, size=n)
        counts, t_vals, p_vals = contingency(yt, yp)
        m = max(len(t_vals), len(p_vals))
        padded = np.zeros((m, m), dtype=np.int64)
        padded[: len(t_vals), : len(p_vals)] = counts
        best = max(
            sum(padded[i, p[i]] for i in range(m))
            for p in itertools.permutations(range(m))
        )
        assert clustering_acc(yt, yp).acc == best / n, case

    # weighted-average identity over random splits (<= 1e-9)
    for case in range(20):
        yt = rng.integers(0, 6, size=80)
        yp = rng.integers(0, 6, size=80)
        m = split_acc(clustering_acc(yt, yp), [0, 1, 2], [3, 4, 5])
        want = (m.n_old * m.acc_old + m.n_new * m.acc_new) / m.n_all
        assert abs(m.acc_all - want) <= 1e-9, case
    print("check 03 accuracy properties: PASS (relabeling, factorial oracle, weighted identity)")


# ---------------------------------------------------------------------------
# check 4: reduction identities


def _random_unit_batch(rng, b, d, labels=None):
    x = rng.normal(size=(2 * b, d))
    z = x / np.linalg.norm(x, axis=1, keepdims=True)
    pair = np.concatenate([np.arange(b) + b, np.arange(b)])
    return ViewBatch(Tensor(z), pair, labels)


def test_acceptance_04_reduction_identities():
    for seed in range(10):
        rng = make_rng(seed)
        b = int(rng.integers(2, 6))
        tau = float(rng.uniform(0.1, 1.0))
        cfg = LossConfig(tau=tau)

        vb = _random_unit_batch(rng, b, 6)
        nbrs = pair_only_neighbors(vb)
        gap = abs(soft_loss(vb, nbrs, unit_positiveness(nbrs), cfg).item() - ucl_loss(vb, cfg).item())
        assert gap <= 1e-9, seed

        labels = np.concatenate([np.arange(b), np.arange(b)])  # positives = pair only
        vl = _random_unit_batch(rng, b, 6, labels)
        assert abs(scl_loss(vl, cfg).item() - ucl_loss(vl, cfg).item()) <= 1e-9, seed

        lab = np.concatenate([np.arange(b) % 2, np.arange(b) % 2])
        vm = _random_unit_batch(rng, b, 6, lab)
        lo = LossConfig(tau=tau, lam=0.0)
        hi = LossConfig(tau=tau, lam=1.0)
        assert abs(labeled_loss(vm, lo).item() - ucl_loss(vm, lo).item()) <= 1e-12, seed
        assert abs(labeled_loss(vm, hi).item() - scl_loss(vm, hi).item()) <= 1e-12, seed
    print("check 04 reduction identities: PASS (soft->ucl 1e-9, scl->ucl 1e-9, endpoints 1e-12)")


# ---------------------------------------------------------------------------
# check 5: positiveness weights


def test_acceptance_05_positiveness_closed_forms():
    cfg = LossConfig()
    # single neighbor -> weight exactly 1
    vb = _random_unit_batch(make_rng(2), 4, 5)
    w = positiveness(vb, pair_only_neighbors(vb), cfg)
    assert all(row.shape == (1,) and row[0] == 1.0 for row in w.rows)

    # neighbors at raw dot products 0.9 and 0.5: weight ratio e^{-0.4}
    z = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.9, 0.0, np.sqrt(1 - 0.81)],
            [0.5, np.sqrt(0.75), 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    vb2 = ViewBatch(Tensor(z), np.array([2, 3, 0, 1]))
    cfg_mine = LossConfig(epsilon=0.7)
    nbrs = candidate_neighbors(vb2, cfg_mine)
    assert list(nbrs.indices[0]) == [1, 2]
    w2 = positiveness(vb2, nbrs, cfg_mine)
    ratio = w2.dense[0, 2] / w2.dense[0, 1]
    assert abs(ratio - np.exp(-0.4)) <= 1e-9

    # all weights in (0, 1] with per-row max 1
    for seed in range(10):
        vb3 = _random_unit_batch(make_rng(seed), 5, 4)
        cfg3 = LossConfig(epsilon=0.2)
        w3 = positiveness(vb3, candidate_neighbors(vb3, cfg3), cfg3)
        for row in w3.rows:
            assert np.all(row > 0.0) and np.all(row <= 1.0)
            assert row.max() == 1.0
    print("check 05 positiveness: PASS (unit single neighbor, e^-0.4 ratio, (0,1] max-1 rows)")


# ---------------------------------------------------------------------------
# check 6: neighborhood nesting over the threshold grid


def test_acceptance_06_neighborhoods_nest_over_threshold_grid():
    grid = [-1.0, 0.0, 0.5, 0.85, 0.99, 1.0]
    for seed in range(10):
        vb = _random_unit_batch(make_rng(seed), 6, 4)
        per_eps = [
            [set(ix) for ix in candidate_neighbors(vb, LossConfig(epsilon=e)).indices]
            for e in grid
        ]
        for tighter, looser in zip(per_eps[1:], per_eps[:-1]):
            for i in range(vb.n_rows):
                assert tighter[i] <= looser[i]
    print(f"check 06 neighborhood nesting: PASS (grid {grid})")


# ---------------------------------------------------------------------------
# check 7: k-means descent + exhaustive optimum


def _oracle_sse(x, assign, k):
    total = 0.0
    for c in range(k):
        members = x[assign == c]
        if len(members):
            center = members.mean(axis=0)
            total += float(((members - center) ** 2).sum())
    return total


def test_acceptance_07_kmeans_descent_and_optimality():
    for seed in range(10):
        rng = make_rng(seed)
        out = kmeans(rng.normal(size=(50, 3)), 5, rng, restarts=3)
        trace = out.objective_trace
        assert all(b <= a for a, b in zip(trace, trace[1:]))

    for seed in range(8):
        rng = make_rng(100 + seed)
        n = int(rng.integers(5, 9))
        k = int(rng.integers(2, 4))
        x = rng.normal(size=(n, 2)) * 2.0
        out = kmeans(x, k, rng, restarts=30)
        got = _oracle_sse(x, out.assignment, k)
        best = min(
            _oracle_sse(x, np.array(a), k)
            for a in itertools.product(range(k), repeat=n)
        )
        assert got <= best, (seed, got, best)
    print("check 07 k-means: PASS (monotone descent, exhaustive optimum N<=8 k<=3)")


# ---------------------------------------------------------------------------
# checks 8-10: end-to-end benchmark (shared fixture)


ARMS = ("baseline", "cn", "sp", "meta")


@pytest.fixture(scope="session")
def benchmark():
    cfg0 = ExperimentConfig()  # the default desk-scale benchmark
    dataset = gen_gaussian_mixture(cfg0.synthetic_spec())
    results = {}
    for arm in ARMS:
        per_seed = []
        for seed in range(5):
            cfg = dataclasses.replace(cfg0, ablation=arm, seed=seed)
            t0 = time.perf_counter()
            report, _ = run_pipeline(dataset, cfg.stream_config(), cfg.train_config(), seed)
            per_seed.append((report, time.perf_counter() - t0))
        results[arm] = per_seed
    return results


def _mean_all(per_seed):
    return float(np.mean([rep.mean_of("acc_all") for rep, _ in per_seed]))


def _final_mean(per_seed, name):
    return float(np.mean([getattr(rep.final, name) for rep, _ in per_seed]))


def test_acceptance_08_benchmark_final_accuracy(benchmark):
    per_seed = benchmark["meta"]
    final_all = _final_mean(per_seed, "acc_all")
    slowest = max(t for _, t in per_seed)
    assert final_all >= 0.85, final_all
    assert slowest < 600.0, slowest
    print(
        f"check 08 benchmark: PASS (final acc_all {final_all:.4f} >= 0.85 "
        f"over 5 seeds, slowest seed {slowest:.1f}s)"
    )


def test_acceptance_09_ablation_ordering(benchmark):
    means = {arm: _mean_all(benchmark[arm]) for arm in ARMS}
    chain = ("meta", "sp", "cn", "baseline")
    for hi, lo in zip(chain, chain[1:]):
        gap = means[hi] - means[lo]
        assert gap >= -0.005, (hi, lo, gap, means)
    print(
        "check 09 ablation ordering: PASS (mean-All "
        + " >= ".join(f"{arm} {means[arm]:.4f}" for arm in chain)
        + ", gaps within -0.005)"
    )


def test_acceptance_10_no_forgetting(benchmark):
    meta_old = _final_mean(benchmark["meta"], "acc_old")
    plain_old = _final_mean(benchmark["sp"], "acc_old")
    gap = meta_old - plain_old
    assert gap >= -0.005, (meta_old, plain_old)
    print(
        f"check 10 no-forgetting: PASS (final acc_old meta {meta_old:.4f} vs "
        f"plain {plain_old:.4f}, gap {gap:+.4f})"
    )


# ---------------------------------------------------------------------------
# check 11: determinism of the metric tables


def test_acceptance_11_determinism(tmp_path):
    cfg = ExperimentConfig(
        num_classes=8,
        dim=4,
        separation=8.0,
        train_per_class=24,
        test_per_class=4,
        offline_classes=4,
        sessions=2,
        novel_per_session=1,
        unlabeled_known=8,
        unlabeled_novel=3,
        episodes=1,
        episode_test_per_class=2,
        episode_unlabeled_known=4,
        episode_unlabeled_novel=2,
        warmup_epochs=1,
        inner_steps=1,
        metatest_steps=1,
        batch_size=32,
        tau=0.3,
        epsilon=0.5,
        encoder_widths=(8,),
        projection_widths=(4,),
        kmeans_restarts=3,
        ablation="meta",
        seed=0,
    )
    dataset = gen_gaussian_mixture(cfg.synthetic_spec())
    paths = []
    for tag in ("a", "b"):
        report, _ = run_pipeline(dataset, cfg.stream_config(), cfg.train_config(), cfg.seed)
        path = tmp_path / f"metrics_{tag}.csv"
        report.write_csv(path)
        paths.append(path)
    rows_a = [line.split(",") for line in paths[0].read_text().splitlines()]
    rows_b = [line.split(",") for line in paths[1].read_text().splitlines()]
    assert rows_a[0] == rows_b[0]
    assert len(rows_a) == len(rows_b)
    for ra, rb in zip(rows_a[1:], rows_b[1:]):
        for ca, cb in zip(ra, rb):
            assert abs(float(ca) - float(cb)) <= 1e-12, (ca, cb)
    print("check 11 determinism: PASS (identical metric tables, <=1e-12 per cell)")


# ---------------------------------------------------------------------------
# check 12: hidden-label firewall


def test_acceptance_12_hidden_label_audit():
    # static: no training-reachable module mentions the hidden-label field
    # or its accessor (protocol.py defines them; evaluation calls stay there)
    for mod in (cgcd.trainer, cgcd.losses, cgcd.model, cgcd.autodiff, cgcd.clustering, cgcd.data):
        source = inspect.getsource(mod)
        assert "hidden_train_labels" not in source, mod.__name__
        assert "_train_y_hidden" not in source, mod.__name__

    # interface: the adaptation entry point accepts bare feature arrays only
    sig = inspect.signature(cgcd.trainer.inner_adapt)
    assert "y" not in sig.parameters and "labels" not in sig.parameters

    # a session exposes features and class sets; labels only via the accessor
    s = Session(
        train_x=np.zeros((3, 2)),
        test=TestSplit(np.zeros((0, 2)), np.zeros(0, dtype=int)),
        old_classes=(0,),
        new_classes=(1,),
        _train_y_hidden=np.array([0, 1, 1]),
    )
    public = {name for name in vars(s) if not name.startswith("_")}
    assert public == {"train_x", "test", "old_classes", "new_classes"}
    np.testing.assert_array_equal(hidden_train_labels(s), [0, 1, 1])
    print("check 12 hidden-label audit: PASS (static scan + interface surface)")
