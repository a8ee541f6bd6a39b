"""Session and episode protocol for continual category discovery.

A stream starts with one labeled offline set and continues with
unlabeled sessions, each introducing novel classes on top of everything
seen so far. Session train labels exist but are hidden: training code
receives bare feature arrays, and the ground truth is reachable only
through :func:`hidden_train_labels`, which evaluation/diagnostic code may
call. Episodes replay the same shape inside the offline set by splitting
its classes into pseudo-labeled and pseudo-novel groups.

All sampling is driven by an explicit generator and never reuses a
sample across two splits of the same stream or episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ShapeError, ValidationError


@dataclass(frozen=True)
class LabeledSet:
    """Feature rows with integer labels drawn from a declared class universe."""

    x: np.ndarray
    y: np.ndarray
    classes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ShapeError(f"bad labeled-set shapes: x {self.x.shape}, y {self.y.shape}")
        if self.x.shape[0] == 0:
            raise ValidationError("labeled set must be non-empty")
        if len(set(self.classes)) != len(self.classes):
            raise ValidationError("class universe has duplicates")
        if not set(np.unique(self.y)) <= set(self.classes):
            raise ValidationError("labels outside the declared class universe")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.y == c)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.x[idx], self.y[idx], self.classes)


@dataclass(frozen=True)
class TestSplit:
    """Labeled held-out samples; may be empty (a session can add no classes)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ShapeError("test split shapes disagree")

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class Session:
    """One unlabeled incremental step: train features, held-out test, class sets."""

    train_x: np.ndarray
    test: TestSplit
    old_classes: tuple[int, ...]
    new_classes: tuple[int, ...]
    _train_y_hidden: np.ndarray = field(repr=False)

    def __post_init__(self):
        if set(self.old_classes) & set(self.new_classes):
            raise ValidationError("old and new class sets overlap")
        if self.train_x.shape[0] != self._train_y_hidden.shape[0]:
            raise ShapeError("hidden labels do not align with train features")


def hidden_train_labels(session: Session) -> np.ndarray:
    """Ground-truth labels of a session's unlabeled train features.

    Evaluation-only interface: training code must never call this (the
    acceptance audit checks that trainer/loss/model sources cannot)."""
    return session._train_y_hidden.copy()


@dataclass
class SessionStream:
    offline: LabeledSet
    offline_test: TestSplit
    sessions: list[Session]

    def __post_init__(self):
        seen = set(self.offline.classes)
        for t, s in enumerate(self.sessions, 1):
            if set(s.old_classes) != seen:
                raise ValidationError(f"session {t} old classes != classes seen so far")
            if seen & set(s.new_classes):
                raise ValidationError(f"session {t} reintroduces known classes")
            seen |= set(s.new_classes)

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)

    def classes_at(self, t: int) -> tuple[int, ...]:
        """Cumulative class universe after session t (t=0: offline only)."""
        out = list(self.offline.classes)
        for s in self.sessions[:t]:
            out.extend(s.new_classes)
        return tuple(out)


@dataclass
class EpisodeSession:
    train_x: np.ndarray
    test: TestSplit
    old_classes: tuple[int, ...]
    new_classes: tuple[int, ...]


@dataclass
class EpisodeSequence:
    """Pseudo stream sampled inside the offline set for meta-training."""

    warmup: LabeledSet
    warmup_test: TestSplit
    sessions: list[EpisodeSession]
    pseudo_labeled: tuple[int, ...]
    pseudo_novel: tuple[int, ...]

    def __post_init__(self):
        for s in self.sessions:
            if self.warmup.n <= s.train_x.shape[0]:
                raise ValidationError("warmup split must dominate every session split")


@dataclass(frozen=True)
class CumulativeTestSet:
    """Multiset of labeled test samples accumulated across sessions."""

    x: np.ndarray
    y: np.ndarray

    @staticmethod
    def empty(dim: int) -> "CumulativeTestSet":
        return CumulativeTestSet(np.zeros((0, dim)), np.zeros(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.x.shape[0]


def accumulate(pool: CumulativeTestSet, split: TestSplit) -> CumulativeTestSet:
    """Multiset union: counts add, nothing is deduplicated."""
    if split.n and split.x.shape[1] != pool.x.shape[1]:
        raise ShapeError("test split dim does not match the pool")
    return CumulativeTestSet(np.concatenate([pool.x, split.x]), np.concatenate([pool.y, split.y]))


def split_pseudo_classes(s0: LabeledSet, n_novel: int, rng: np.random.Generator) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Random disjoint partition of the offline classes; last n_novel go novel."""
    classes = list(s0.classes)
    if not 0 <= n_novel < len(classes):
        raise ValidationError(f"need 0 <= pseudo-novel count < {len(classes)}, got {n_novel}")
    order = [classes[i] for i in rng.permutation(len(classes))]
    return tuple(sorted(order[n_novel:])), tuple(sorted(order[:n_novel]))


def _quota(total: int, classes: list[int], rng: np.random.Generator) -> dict[int, int]:
    """Split ``total`` draws across classes as evenly as possible; the
    remainder goes to an rng-permuted prefix so no class is favored."""
    if total < 0:
        raise ValidationError("negative sample quota")
    if not classes:
        if total:
            raise CapacityError(f"no classes available for {total} requested samples")
        return {}
    base, rem = divmod(total, len(classes))
    quota = {c: base for c in classes}
    for i in rng.permutation(len(classes))[:rem]:
        quota[classes[i]] += 1
    return quota


class _ClassPools:
    """Per-class index pools that pop without replacement."""

    def __init__(self, data: LabeledSet, classes, rng: np.random.Generator):
        self.data = data
        self.pools = {}
        for c in classes:
            idx = data.class_indices(c)
            self.pools[c] = list(idx[rng.permutation(len(idx))])

    def take(self, c: int, k: int, what: str) -> list[int]:
        pool = self.pools[c]
        if len(pool) < k:
            raise CapacityError(f"class {c}: {what} needs {k} samples, only {len(pool)} left")
        out = pool[:k]
        del pool[:k]
        return out

    def take_all(self, c: int) -> list[int]:
        out = self.pools[c]
        self.pools[c] = []
        return out


@dataclass(frozen=True)
class EpisodeConfig:
    n_sessions: int
    novel_per_session: int
    unlabeled_known_count: int
    unlabeled_novel_count: int
    test_per_class: int
    n_pseudo_novel: int | None = None  # default: n_sessions * novel_per_session

    def __post_init__(self):
        if self.n_sessions < 0 or self.novel_per_session < 0:
            raise ValidationError("session counts must be >= 0")
        if self.unlabeled_known_count < 0 or self.unlabeled_novel_count < 0:
            raise ValidationError("unlabeled counts must be >= 0")
        if self.test_per_class < 1:
            raise ValidationError("test_per_class must be >= 1")

    @property
    def pseudo_novel_total(self) -> int:
        n = self.n_sessions * self.novel_per_session
        if self.n_pseudo_novel is not None:
            if self.n_pseudo_novel < n:
                raise ValidationError("pseudo-novel pool smaller than the schedule needs")
            return self.n_pseudo_novel
        return n


def sample_episode(s0: LabeledSet, cfg: EpisodeConfig, rng: np.random.Generator) -> EpisodeSequence:
    """Draw one pseudo stream: warmup on pseudo-labeled classes, then
    ``n_sessions`` splits that mix seen-class and fresh pseudo-novel samples.

    Per-session and test quotas are reserved first; the warmup split takes
    every remaining pseudo-labeled sample, so splits never share a sample
    and the warmup split is the largest by construction (checked)."""
    if cfg.pseudo_novel_total == 0 and cfg.n_sessions > 0 and cfg.unlabeled_novel_count > 0:
        raise ValidationError("novel draws requested but no pseudo-novel classes scheduled")
    if cfg.pseudo_novel_total:
        labeled_cls, novel_cls = split_pseudo_classes(s0, cfg.pseudo_novel_total, rng)
    else:
        labeled_cls, novel_cls = tuple(sorted(s0.classes)), ()
    novel_order = [novel_cls[i] for i in rng.permutation(len(novel_cls))]
    schedule = [
        tuple(sorted(novel_order[j * cfg.novel_per_session : (j + 1) * cfg.novel_per_session]))
        for j in range(cfg.n_sessions)
    ]

    # plan every draw before touching the pools
    known: list[int] = sorted(labeled_cls)
    known_quotas, novel_quotas = [], []
    for j in range(cfg.n_sessions):
        known_quotas.append(_quota(cfg.unlabeled_known_count, list(known), rng))
        novel_quotas.append(_quota(cfg.unlabeled_novel_count, list(schedule[j]), rng))
        known = sorted(known + list(schedule[j]))

    pools = _ClassPools(s0, s0.classes, rng)
    test_idx = {c: pools.take(c, cfg.test_per_class, "test split") for c in labeled_cls + novel_cls}
    session_idx: list[list[int]] = []
    for j in range(cfg.n_sessions):
        idx = []
        for c, k in sorted(known_quotas[j].items()):
            idx.extend(pools.take(c, k, f"session {j + 1} known draw"))
        for c, k in sorted(novel_quotas[j].items()):
            idx.extend(pools.take(c, k, f"session {j + 1} novel draw"))
        session_idx.append(idx)

    warmup_idx = []
    for c in labeled_cls:
        warmup_idx.extend(pools.take_all(c))
    if not warmup_idx:
        raise CapacityError("warmup split is empty after reserving quotas")

    warmup = LabeledSet(s0.x[warmup_idx], s0.y[warmup_idx], labeled_cls)
    wt_idx = [i for c in labeled_cls for i in test_idx[c]]
    warmup_test = TestSplit(s0.x[wt_idx], s0.y[wt_idx])
    sessions = []
    seen = list(labeled_cls)
    for j in range(cfg.n_sessions):
        te_idx = [i for c in schedule[j] for i in test_idx[c]]
        sessions.append(
            EpisodeSession(
                train_x=s0.x[session_idx[j]].copy(),
                test=TestSplit(s0.x[te_idx], s0.y[te_idx]),
                old_classes=tuple(seen),
                new_classes=schedule[j],
            )
        )
        seen = sorted(seen + list(schedule[j]))
    return EpisodeSequence(warmup, warmup_test, sessions, labeled_cls, novel_cls)


@dataclass(frozen=True)
class StreamConfig:
    offline_classes: int
    n_sessions: int
    novel_per_session: int
    test_per_class: int
    unlabeled_known_count: int
    unlabeled_novel_count: int
    offline_fraction: float = 0.8

    def __post_init__(self):
        if self.offline_classes < 1:
            raise ValidationError("need at least one offline class")
        if self.n_sessions < 0 or self.novel_per_session < 0:
            raise ValidationError("session counts must be >= 0")
        if self.test_per_class < 1:
            raise ValidationError("test_per_class must be >= 1")
        if self.unlabeled_known_count < 0 or self.unlabeled_novel_count < 0:
            raise ValidationError("unlabeled counts must be >= 0")
        if not 0.0 < self.offline_fraction <= 1.0:
            raise ValidationError("offline_fraction must be in (0, 1]")
        if self.novel_per_session == 0 and self.unlabeled_novel_count > 0:
            raise ValidationError("novel draws requested but novel_per_session is 0")


def make_benchmark_stream(dataset: LabeledSet, cfg: StreamConfig, rng: np.random.Generator) -> SessionStream:
    """Carve a labeled dataset into an offline set plus incremental sessions.

    Offline classes keep ``offline_fraction`` of their train samples for the
    labeled set; the held-back remainder feeds the sessions' known-class
    draws. Each session's test split holds that session's new classes."""
    need = cfg.offline_classes + cfg.n_sessions * cfg.novel_per_session
    if need > len(dataset.classes):
        raise CapacityError(f"stream needs {need} classes, dataset has {len(dataset.classes)}")
    order = [dataset.classes[i] for i in rng.permutation(len(dataset.classes))]
    offline_cls = tuple(sorted(order[: cfg.offline_classes]))
    novel_pool = order[cfg.offline_classes : need]
    schedule = [
        tuple(sorted(novel_pool[j * cfg.novel_per_session : (j + 1) * cfg.novel_per_session]))
        for j in range(cfg.n_sessions)
    ]

    pools = _ClassPools(dataset, offline_cls + tuple(novel_pool), rng)
    test_idx = {c: pools.take(c, cfg.test_per_class, "test split") for c in offline_cls + tuple(novel_pool)}

    offline_idx = []
    for c in offline_cls:
        pool_size = len(pools.pools[c])
        take = int(np.floor(cfg.offline_fraction * pool_size))
        if take < 1:
            raise CapacityError(f"class {c}: offline fraction leaves no labeled samples")
        offline_idx.extend(pools.take(c, take, "offline labeled set"))
    offline = LabeledSet(dataset.x[offline_idx], dataset.y[offline_idx], offline_cls)
    ot_idx = [i for c in offline_cls for i in test_idx[c]]
    offline_test = TestSplit(dataset.x[ot_idx], dataset.y[ot_idx])

    sessions = []
    known = list(offline_cls)
    for j in range(cfg.n_sessions):
        kq = _quota(cfg.unlabeled_known_count, list(known), rng)
        nq = _quota(cfg.unlabeled_novel_count, list(schedule[j]), rng)
        idx = []
        for c, k in sorted(kq.items()):
            idx.extend(pools.take(c, k, f"session {j + 1} known draw"))
        for c, k in sorted(nq.items()):
            idx.extend(pools.take(c, k, f"session {j + 1} novel draw"))
        te_idx = [i for c in schedule[j] for i in test_idx[c]]
        sessions.append(
            Session(
                train_x=dataset.x[idx].copy(),
                test=TestSplit(dataset.x[te_idx], dataset.y[te_idx]),
                old_classes=tuple(known),
                new_classes=schedule[j],
                _train_y_hidden=dataset.y[idx].copy(),
            )
        )
        known = sorted(known + list(schedule[j]))
    return SessionStream(offline, offline_test, sessions)


def write_manifest(stream: SessionStream, path) -> None:
    """Human-readable stream summary: classes and sample counts per session."""
    lines = [
        "cgcd-stream-manifest 1",
        f"offline classes: {' '.join(str(c) for c in stream.offline.classes)}",
        f"offline train samples: {stream.offline.n}",
        f"offline test samples: {stream.offline_test.n}",
    ]
    for t, s in enumerate(stream.sessions, 1):
        lines.append(
            f"session {t}: new classes [{' '.join(str(c) for c in s.new_classes)}] "
            f"train {s.train_x.shape[0]} test {s.test.n} "
            f"cumulative classes {len(stream.classes_at(t))}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
