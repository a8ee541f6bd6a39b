"""Training engine: offline warmup, episodic bi-level meta-training, and
per-session test-time adaptation with clustering evaluation.

The bi-level loop follows the usual two-rate scheme: an inner adaptation
produces fast weights from the session's unlabeled batch (soft
neighborhood loss), the accumulated labeled test pool is extended, and
the outer update applies the pool gradient evaluated at the fast weights
back onto the base parameters (first-order). Test-time adaptation reuses
the inner step only.

Everything is functional: parameter containers are never mutated, each
update returns a fresh object, and every random draw flows through an
explicit generator so a seed fully determines a run.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tensor, make_rng, spawn_rngs
from .clustering import clustering_acc, kmeans, split_acc
from .errors import ValidationError
from .model import AdaptedParams, ModelParams, collect_grads, embed, features, init, sgd_step
from .protocol import (
    CumulativeTestSet,
    EpisodeConfig,
    LabeledSet,
    SessionStream,
    StreamConfig,
    accumulate,
    make_benchmark_stream,
    sample_episode,
)


@dataclass(frozen=True)
class AugmentConfig:
    sigma: float = 0.5  # gaussian noise scale in feature units
    mask_prob: float = 0.1  # per-coordinate drop probability (rescaled)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError("augment sigma must be >= 0")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValidationError("mask_prob must be in [0, 1)")


@dataclass
class TrainConfig:
    gamma: float = 0.1  # warmup rate
    alpha: float = 0.001  # inner rate
    beta: float = 0.0001  # outer rate
    warmup_epochs: int = 50
    inner_steps: int = 10
    outer_steps: int = 1
    metatest_steps: int = 20
    batch_size: int = 256
    episodes: int = 12
    use_neighbors: bool = True
    use_soft_positiveness: bool = True
    use_meta: bool = True
    meta_objective: str = "scl"
    encoder_widths: tuple[int, ...] = (128, 64)
    projection_widths: tuple[int, ...] = (32,)
    kmeans_restarts: int = 10
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    episode: EpisodeConfig | None = None

    def __post_init__(self):
        for name in ("gamma", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        for name in ("warmup_epochs", "inner_steps", "outer_steps", "metatest_steps", "episodes"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")
        if self.meta_objective not in ("scl", "ucl"):
            raise ValidationError(f"meta_objective must be scl or ucl, got {self.meta_objective!r}")
        if self.loss.attention_mode != "identity":
            raise ValidationError("the trainer supports identity attention only")
        if not self.encoder_widths or not self.projection_widths:
            raise ValidationError("width lists must be non-empty")

    def model_dims(self, input_dim: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        enc = (input_dim,) + tuple(self.encoder_widths)
        return enc, (enc[-1],) + tuple(self.projection_widths)


def augment_views(x: np.ndarray, rng: np.random.Generator, sigma: float, mask_prob: float = 0.1):
    """Two stochastic feature-space views: add gaussian noise, then drop a
    random coordinate subset and rescale the survivors by 1/(1-p)."""
    x = np.asarray(x, dtype=np.float64)

    def one():
        noisy = x + rng.normal(0.0, 1.0, size=x.shape) * sigma
        keep = (rng.random(size=x.shape) >= mask_prob).astype(np.float64)
        scale = 1.0 / (1.0 - mask_prob) if mask_prob > 0 else 1.0
        return noisy * keep * scale

    return one(), one()


def make_view_batch(params: ModelParams, x: np.ndarray, y, rng: np.random.Generator, aug: AugmentConfig) -> L.ViewBatch:
    """Augment twice, embed the 2B stacked rows, wire up pairing and labels."""
    v1, v2 = augment_views(x, rng, aug.sigma, aug.mask_prob)
    z = embed(params, np.concatenate([v1, v2], axis=0))
    b = x.shape[0]
    pair = np.concatenate([np.arange(b) + b, np.arange(b)])
    labels = np.concatenate([y, y]) if y is not None else None
    return L.ViewBatch(z, pair, labels)


def _apply(params: ModelParams, loss: Tensor, lr: float) -> ModelParams:
    ad.zero_grad(params.all_tensors())
    ad.backward(loss)
    return sgd_step(params, collect_grads(params), lr)


def offline_warmup(
    params: ModelParams,
    d0: LabeledSet,
    cfg: TrainConfig,
    rng: np.random.Generator,
    log: list | None = None,
) -> ModelParams:
    """Epochs of the joint (1-lambda)*ucl + lambda*scl objective at rate gamma."""
    for _ in range(cfg.warmup_epochs):
        order = rng.permutation(d0.n)
        for lo in range(0, d0.n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            if len(idx) < 2:
                continue
            vb = make_view_batch(params, d0.x[idx], d0.y[idx], rng, cfg.augment)
            loss = L.labeled_loss(vb, cfg.loss)
            if log is not None:
                log.append(loss.item())
            params = _apply(params, loss, cfg.gamma)
    return params


def _soft_parts(vb: L.ViewBatch, cfg: TrainConfig):
    nbrs = L.candidate_neighbors(vb, cfg.loss) if cfg.use_neighbors else L.pair_only_neighbors(vb)
    if cfg.use_soft_positiveness:
        weights = L.positiveness(vb, nbrs, cfg.loss)
    else:
        weights = L.unit_positiveness(nbrs)
    return nbrs, weights


def inner_adapt(
    params: ModelParams,
    x_unlabeled: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    steps: int | None = None,
    log: list | None = None,
) -> AdaptedParams:
    """Fast weights from ``steps`` soft-loss updates at rate alpha.

    The input parameters are left untouched; with 0 steps the result is
    value-identical to the input."""
    x_unlabeled = np.asarray(x_unlabeled, dtype=np.float64)
    if x_unlabeled.ndim != 2 or x_unlabeled.shape[0] < 2:
        raise ValidationError("inner_adapt needs at least two unlabeled samples")
    steps = cfg.inner_steps if steps is None else steps
    cur: AdaptedParams = params.as_adapted()
    n = x_unlabeled.shape[0]
    for _ in range(steps):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        vb = make_view_batch(cur, x_unlabeled[idx], None, rng, cfg.augment)
        nbrs, weights = _soft_parts(vb, cfg)
        loss = L.soft_loss(vb, nbrs, weights, cfg.loss)
        if log is not None:
            log.append({"loss": loss.item(), "mean_neighbors": float(nbrs.counts.mean())})
        cur = _apply(cur, loss, cfg.alpha)
    return cur


def outer_meta_update(
    params: ModelParams,
    adapted: AdaptedParams,
    pool: CumulativeTestSet,
    cfg: TrainConfig,
    rng: np.random.Generator,
    log: list | None = None,
) -> ModelParams:
    """Apply the pool objective's gradient, evaluated at the fast weights,
    to the base parameters at rate beta (first-order meta step)."""
    if pool.n < 2:
        raise ValidationError("outer update needs an accumulated pool with >= 2 samples")
    cur = params
    for _ in range(cfg.outer_steps):
        idx = rng.choice(pool.n, size=min(cfg.batch_size, pool.n), replace=False)
        vb = make_view_batch(adapted, pool.x[idx], pool.y[idx], rng, cfg.augment)
        loss = L.scl_loss(vb, cfg.loss) if cfg.meta_objective == "scl" else L.ucl_loss(vb, cfg.loss)
        if log is not None:
            log.append(loss.item())
        ad.zero_grad(adapted.all_tensors())
        ad.backward(loss)
        cur = sgd_step(cur, collect_grads(adapted), cfg.beta)
    return cur


def meta_train(
    s0: LabeledSet,
    cfg: TrainConfig,
    rng: np.random.Generator,
    log: list | None = None,
) -> ModelParams:
    """Episodic bi-level training over pseudo streams sampled inside s0.

    Per episode: fresh pseudo split, warmup at gamma, then for each pseudo
    session an inner adaptation, pool extension, and one outer update. The
    accumulated pool is dropped between episodes."""
    if cfg.episodes > 0 and cfg.episode is None:
        raise ValidationError("meta_train needs an EpisodeConfig when episodes > 0")
    enc_dims, proj_dims = cfg.model_dims(s0.dim)
    params = init(enc_dims, proj_dims, rng)
    for _ in range(cfg.episodes):
        ep = sample_episode(s0, cfg.episode, rng)
        pool = CumulativeTestSet.empty(s0.dim)
        warmup_log: list[float] = []
        params = offline_warmup(params, ep.warmup, cfg, rng, warmup_log)
        pool = accumulate(pool, ep.warmup_test)
        pool_sizes = [pool.n]
        inner_log: list[dict] = []
        outer_log: list[float] = []
        for sess in ep.sessions:
            adapted = inner_adapt(params, sess.train_x, cfg, rng, log=inner_log)
            pool = accumulate(pool, sess.test)
            pool_sizes.append(pool.n)
            params = outer_meta_update(params, adapted, pool, cfg, rng, outer_log)
        if log is not None:
            log.append(
                {
                    "warmup_mean_loss": float(np.mean(warmup_log)) if warmup_log else None,
                    "inner_losses": [d["loss"] for d in inner_log],
                    "outer_losses": outer_log,
                    "pool_sizes": pool_sizes,
                }
            )
    return params


@dataclass
class SessionRow:
    session: int
    k: int
    acc_all: float
    acc_old: float
    acc_new: float
    n_all: int
    n_old: int
    n_new: int
    new_empty: bool
    mean_neighbors: float
    adapt_losses: list[float] = field(default_factory=list)


@dataclass
class RunReport:
    seed: int
    config: dict
    sessions: list[SessionRow]
    train_log: dict = field(default_factory=dict)

    @property
    def final(self) -> SessionRow:
        return self.sessions[-1]

    def mean_of(self, name: str) -> float:
        return float(np.mean([getattr(r, name) for r in self.sessions]))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "sessions": [asdict(r) for r in self.sessions],
            "train_log": self.train_log,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunReport":
        return RunReport(
            seed=d["seed"],
            config=d["config"],
            sessions=[SessionRow(**r) for r in d["sessions"]],
            train_log=d.get("train_log", {}),
        )

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @staticmethod
    def load_json(path) -> "RunReport":
        with open(path) as fh:
            return RunReport.from_dict(json.load(fh))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["session", "k", "acc_all", "acc_old", "acc_new", "n_all", "n_old", "n_new"])
            for r in self.sessions:
                w.writerow(
                    [r.session, r.k]
                    + [format(v, ".17g") for v in (r.acc_all, r.acc_old, r.acc_new)]
                    + [r.n_all, r.n_old, r.n_new]
                )


def meta_test(
    params: ModelParams,
    stream: SessionStream,
    cfg: TrainConfig,
    rng: np.random.Generator,
    kmeans_rng: np.random.Generator | None = None,
) -> RunReport:
    """Per session: adapt with metatest_steps inner updates, extend the
    accumulated test pool, cluster its encoder features with the true
    cumulative class count, and score against the hidden labels."""
    kmeans_rng = kmeans_rng if kmeans_rng is not None else make_rng(0)
    cur = params
    pool = accumulate(CumulativeTestSet.empty(stream.offline.dim), stream.offline_test)
    rows = []
    for t, sess in enumerate(stream.sessions, 1):
        adapt_log: list[dict] = []
        cur = inner_adapt(cur, sess.train_x, cfg, rng, steps=cfg.metatest_steps, log=adapt_log)
        pool = accumulate(pool, sess.test)
        k = len(stream.classes_at(t))
        feats = features(cur, pool.x).data
        km = kmeans(feats, k, kmeans_rng, restarts=cfg.kmeans_restarts)
        metrics = split_acc(clustering_acc(pool.y, km.assignment), stream.classes_at(t - 1), sess.new_classes)
        rows.append(
            SessionRow(
                session=t,
                k=k,
                acc_all=metrics.acc_all,
                acc_old=metrics.acc_old,
                acc_new=metrics.acc_new,
                n_all=metrics.n_all,
                n_old=metrics.n_old,
                n_new=metrics.n_new,
                new_empty=metrics.new_empty,
                mean_neighbors=float(np.mean([d["mean_neighbors"] for d in adapt_log])) if adapt_log else 0.0,
                adapt_losses=[d["loss"] for d in adapt_log],
            )
        )
    return RunReport(seed=0, config={}, sessions=rows)


def run_pipeline(
    dataset: LabeledSet,
    stream_cfg: StreamConfig,
    cfg: TrainConfig,
    seed: int,
) -> tuple[RunReport, ModelParams]:
    """Stream construction + training + per-session evaluation under one seed."""
    stream_rng, train_rng, test_rng, km_rng = spawn_rngs(seed, 4)
    stream = make_benchmark_stream(dataset, stream_cfg, stream_rng)
    train_log: list = []
    if cfg.use_meta:
        params = meta_train(stream.offline, cfg, train_rng, train_log)
    else:
        enc_dims, proj_dims = cfg.model_dims(stream.offline.dim)
        params = init(enc_dims, proj_dims, train_rng)
        warmup_log: list[float] = []
        params = offline_warmup(params, stream.offline, cfg, train_rng, warmup_log)
        train_log.append({"warmup_mean_loss": float(np.mean(warmup_log)) if warmup_log else None})
    report = meta_test(params, stream, cfg, test_rng, km_rng)
    report.seed = seed
    report.config = {
        "stream": asdict(stream_cfg),
        "train": _config_echo(cfg),
    }
    report.train_log = {"episodes" if cfg.use_meta else "warmup": train_log}
    return report, params


def _config_echo(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["encoder_widths"] = list(cfg.encoder_widths)
    d["projection_widths"] = list(cfg.projection_widths)
    return d
