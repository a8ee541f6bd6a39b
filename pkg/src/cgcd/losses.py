"""Contrastive objectives over paired-view batches.

A batch holds 2B l2-normalized embeddings: B instances, two augmented
views each, linked by ``pair_index``. All losses share the same
temperature-scaled cosine similarity matrix and the same denominator
(every other row in the batch), and all are means over the 2B anchors.

 - ``ucl_loss``: instance discrimination; the only positive is the
   anchor's own second view.
 - ``scl_loss``: supervised; positives are all other rows with the
   anchor's label, averaged per anchor.
 - ``labeled_loss``: (1-lambda) * ucl + lambda * scl.
 - ``candidate_neighbors`` + ``positiveness`` + ``soft_loss``: positives
   are mined by cosine threshold and weighted by a per-anchor softmax
   over neighbor similarities, normalized so the strongest neighbor
   carries weight exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, ValidationError

UNIT_ROW_TOL = 1e-9


@dataclass
class LossConfig:
    tau: float = 0.1
    lam: float = 0.35
    epsilon: float = 0.85
    attention_mode: str = "identity"
    stop_gradient_on_w: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lambda must be in [0, 1], got {self.lam}")
        if not -1.0 <= self.epsilon <= 1.0:
            raise ValidationError(f"epsilon must be in [-1, 1], got {self.epsilon}")
        if self.attention_mode not in ("identity", "learned"):
            raise ValidationError(f"unknown attention_mode {self.attention_mode!r}")


@dataclass
class ViewBatch:
    """2B embedding rows; row i and row pair_index[i] are views of one instance."""

    z: Tensor
    pair_index: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.z.data.ndim != 2:
            raise ShapeError(f"batch embeddings must be 2-D, got {self.z.data.shape}")
        m = self.z.data.shape[0]
        if m < 4 or m % 2 != 0:
            raise ValidationError(f"a paired-view batch needs an even row count >= 4, got {m}")
        self.pair_index = np.asarray(self.pair_index, dtype=np.int64)
        if self.pair_index.shape != (m,):
            raise ShapeError("pair_index length must match row count")
        idx = np.arange(m)
        if np.any(self.pair_index == idx) or np.any(self.pair_index[self.pair_index] != idx):
            raise ValidationError("pair_index must be an involution with no fixed points")
        norms = np.sqrt((self.z.data ** 2).sum(axis=1))
        if np.any(np.abs(norms - 1.0) > UNIT_ROW_TOL):
            raise ValidationError("batch rows must be unit-norm")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (m,):
                raise ShapeError("labels length must match row count")
            if np.any(self.labels != self.labels[self.pair_index]):
                raise ValidationError("paired views must carry the same label")

    @property
    def n_rows(self) -> int:
        return self.z.data.shape[0]


@dataclass
class NeighborSet:
    """Per-anchor candidate neighbor indices and their cosine similarities."""

    indices: list[np.ndarray]
    sims: list[np.ndarray]
    epsilon: float

    def __post_init__(self):
        self.counts = np.array([len(ix) for ix in self.indices], dtype=np.int64)

    @property
    def n_rows(self) -> int:
        return len(self.indices)

    def mask(self) -> np.ndarray:
        m = self.n_rows
        out = np.zeros((m, m), dtype=np.float64)
        for i, ix in enumerate(self.indices):
            out[i, ix] = 1.0
        return out


@dataclass
class Positiveness:
    """Per-anchor neighbor weights in (0, 1], max weight of each row exactly 1."""

    rows: list[np.ndarray]
    dense: np.ndarray = field(repr=False)
    graph: Tensor | None = None  # dense differentiable weights when gradients flow

@dataclass
class AttentionMaps:
    """Trainable linear maps f1, f2 for learned positiveness attention."""

    f1: Tensor
    f2: Tensor


def init_attention(d_z: int, d_attn: int, rng: np.random.Generator) -> AttentionMaps:
    bound = np.sqrt(6.0 / (d_z + d_attn))
    return AttentionMaps(
        Tensor(rng.uniform(-bound, bound, size=(d_z, d_attn)), requires_grad=True),
        Tensor(rng.uniform(-bound, bound, size=(d_z, d_attn)), requires_grad=True),
    )


# ---------------------------------------------------------------------------
# shared pieces


def _offdiag_mask(m: int) -> np.ndarray:
    return 1.0 - np.eye(m)


def _similarity_parts(batch: ViewBatch, cfg: LossConfig) -> tuple[Tensor, Tensor]:
    """Return (S, log_denom): S = z z^T / tau, log_denom_i = log sum_{n != i} exp(S_in).

    The log-sum-exp is stabilized by subtracting each row's off-diagonal max
    as a constant shift, which leaves the gradient untouched.
    """
    s = ad.mul_const(ad.matmul(batch.z, ad.transpose(batch.z)), 1.0 / cfg.tau)
    m = batch.n_rows
    off = _offdiag_mask(m)
    shifted = s.data + np.where(off > 0, 0.0, -np.inf)
    shift = shifted.max(axis=1)  # constant per row
    e = ad.exp(ad.add_const(s, -shift[:, None]))
    denom = ad.rowsum(ad.mul_const(e, off))
    log_denom = ad.add_const(ad.log(denom), shift)
    return s, log_denom


def _anchor_mean(per_anchor: Tensor) -> Tensor:
    return ad.mul_const(ad.sum_all(per_anchor), 1.0 / per_anchor.data.shape[0])


def _pair_mask(batch: ViewBatch) -> np.ndarray:
    m = batch.n_rows
    out = np.zeros((m, m))
    out[np.arange(m), batch.pair_index] = 1.0
    return out


def _positive_mask(batch: ViewBatch) -> np.ndarray:
    """Same-label rows excluding self; falls back to the pair for anchors
    whose label appears nowhere else (always true for the pair itself)."""
    if batch.labels is None:
        raise ValidationError("scl_loss needs labels on the batch")
    same = (batch.labels[:, None] == batch.labels[None, :]).astype(np.float64)
    np.fill_diagonal(same, 0.0)
    if np.any(same.sum(axis=1) == 0):
        # unreachable when pairs share labels; kept as a guard
        raise ValidationError("an anchor has no same-label row and no labeled pair")
    return same


# ---------------------------------------------------------------------------
# losses


def ucl_loss(batch: ViewBatch, cfg: LossConfig) -> Tensor:
    """Pairwise instance-discrimination loss, mean over all 2B anchors."""
    s, log_denom = _similarity_parts(batch, cfg)
    pair_vals = ad.rowsum(ad.mul_const(s, _pair_mask(batch)))
    return _anchor_mean(ad.sub(log_denom, pair_vals))


def scl_loss(batch: ViewBatch, cfg: LossConfig) -> Tensor:
    """Supervised contrastive loss: positives averaged per anchor."""
    pos = _positive_mask(batch)
    counts = pos.sum(axis=1)
    s, log_denom = _similarity_parts(batch, cfg)
    pos_mean = ad.rowsum(ad.mul_const(s, pos / counts[:, None]))
    return _anchor_mean(ad.sub(log_denom, pos_mean))


def labeled_loss(batch: ViewBatch, cfg: LossConfig) -> Tensor:
    """(1 - lambda) * ucl_loss + lambda * scl_loss."""
    return ad.add(
        ad.mul_const(ucl_loss(batch, cfg), 1.0 - cfg.lam),
        ad.mul_const(scl_loss(batch, cfg), cfg.lam),
    )


def candidate_neighbors(batch: ViewBatch, cfg: LossConfig) -> NeighborSet:
    """Rows with cosine >= epsilon, excluding self; the paired view is always kept.

    Selection reads embedding values only (it is not differentiated through).
    """
    sims = batch.z.data @ batch.z.data.T
    m = batch.n_rows
    indices, simrows = [], []
    for i in range(m):
        keep = sims[i] >= cfg.epsilon
        keep[i] = False
        keep[batch.pair_index[i]] = True
        ix = np.flatnonzero(keep)
        indices.append(ix)
        simrows.append(sims[i, ix].copy())
    return NeighborSet(indices, simrows, cfg.epsilon)


def pair_only_neighbors(batch: ViewBatch) -> NeighborSet:
    """Neighbor sets containing only each anchor's paired view (mining disabled)."""
    sims = (batch.z.data * batch.z.data[batch.pair_index]).sum(axis=1)
    return NeighborSet(
        [np.array([j]) for j in batch.pair_index],
        [np.array([v]) for v in sims],
        epsilon=1.0,
    )


def _attention_logits(batch: ViewBatch, cfg: LossConfig, attn: AttentionMaps | None) -> Tensor:
    if cfg.attention_mode == "identity":
        return ad.matmul(batch.z, ad.transpose(batch.z))
    if attn is None:
        raise ValidationError("learned attention_mode needs AttentionMaps")
    return ad.matmul(ad.matmul(batch.z, attn.f1), ad.transpose(ad.matmul(batch.z, attn.f2)))


def positiveness(
    batch: ViewBatch,
    nbrs: NeighborSet,
    cfg: LossConfig,
    attn: AttentionMaps | None = None,
) -> Positiveness:
    """Per-anchor softmax over neighbor logits, divided by the row max.

    Logits are raw dot products f1(z_i) . f2(z_k) (identity maps by
    default); no temperature is applied. After normalization the largest
    weight in every non-empty row is exactly 1.
    """
    if nbrs.n_rows != batch.n_rows:
        raise ShapeError("neighbor set does not match batch size")
    mask = nbrs.mask()
    counts = nbrs.counts
    if cfg.attention_mode == "identity" and cfg.stop_gradient_on_w:
        dense = np.zeros_like(mask)
        rows = []
        for i, (ix, sim) in enumerate(zip(nbrs.indices, nbrs.sims)):
            if len(ix) == 0:
                rows.append(np.zeros(0))
                continue
            e = np.exp(sim - sim.max())
            w = e / e.sum()
            w = w / w.max()
            rows.append(w)
            dense[i, ix] = w
        return Positiveness(rows, dense, graph=None)

    logits = _attention_logits(batch, cfg, attn)
    shifted = np.where(mask > 0, logits.data, -np.inf)
    shift = np.where(counts > 0, shifted.max(axis=1), 0.0)
    e = ad.mul_const(ad.exp(ad.add_const(logits, -shift[:, None])), mask)
    denom = ad.rowsum(e)
    denom = ad.add_const(denom, (counts == 0).astype(np.float64))  # keep empty rows at 0
    w_raw = ad.scale_rows(e, ad.reciprocal(denom))
    top = ad.rowmax(w_raw)
    top = ad.add_const(top, (counts == 0).astype(np.float64))
    w = ad.scale_rows(w_raw, ad.reciprocal(top))
    dense = w.data
    rows = [dense[i, ix].copy() for i, ix in enumerate(nbrs.indices)]
    return Positiveness(rows, dense, graph=w)


def unit_positiveness(nbrs: NeighborSet) -> Positiveness:
    """All neighbor weights fixed at 1 (soft weighting disabled)."""
    rows = [np.ones(len(ix)) for ix in nbrs.indices]
    return Positiveness(rows, nbrs.mask(), graph=None)


def soft_loss(batch: ViewBatch, nbrs: NeighborSet, weights: Positiveness, cfg: LossConfig) -> Tensor:
    """Soft neighborhood contrastive loss, mean over all 2B anchors.

    Per anchor: -(1/|NN_i|) sum_{k in NN_i} log( w_ik exp(s_ik) / sum_{n != i} exp(s_in) )
    with s = z z^T / tau. Weights must be positive on every neighbor edge;
    when ``stop_gradient_on_w`` is set (or no weight graph exists) the
    weights enter as constants.
    """
    m = batch.n_rows
    if nbrs.n_rows != m or len(weights.rows) != m:
        raise ShapeError("batch, neighbors and weights disagree on row count")
    for ix, w in zip(nbrs.indices, weights.rows):
        if len(ix) != len(w):
            raise ShapeError("weights are not aligned with neighbor indices")
        if np.any(w <= 0):
            raise ValidationError("soft_loss needs strictly positive neighbor weights")
    if np.any(nbrs.counts == 0):
        raise ValidationError("soft_loss needs at least one neighbor per anchor")

    mask = nbrs.mask()
    inv_counts = mask / nbrs.counts[:, None]
    s, log_denom = _similarity_parts(batch, cfg)
    sim_term = ad.rowsum(ad.mul_const(s, inv_counts))

    use_graph = weights.graph is not None and not cfg.stop_gradient_on_w
    if use_graph:
        # off-neighbor entries are forced to exactly 1 so log() vanishes there
        safe = ad.add_const(ad.mul_const(weights.graph, mask), 1.0 - mask)
        w_term = ad.rowsum(ad.mul_const(ad.log(safe), inv_counts))
        per_anchor = ad.sub(ad.sub(log_denom, sim_term), w_term)
    else:
        logw = np.zeros_like(mask)
        nz = weights.dense > 0
        logw[nz] = np.log(weights.dense[nz])
        const_term = (logw * inv_counts).sum(axis=1)
        per_anchor = ad.add_const(ad.sub(log_denom, sim_term), -const_term)
    return _anchor_mean(per_anchor)
