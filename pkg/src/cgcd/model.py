"""MLP encoder + projection head operating on the gradient tape.

The network is a stack of linear layers: ``dims_encoder`` defines the
encoder, ``dims_projection`` the projection head, and the head's input
width must equal the encoder's output width. One relu sits after every
linear layer of the full stack except the last, so the projection head
acts on relu(h) while ``features`` exposes the encoder's final pre-relu
linear output. Both exposed embeddings are l2-normalized per row.

Parameter updates are functional: ``sgd_step`` returns a fresh params
object and never mutates its input.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DatasetHeaderError, ShapeError, ValidationError

CHECKPOINT_MAGIC = "cgcd-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class LinearLayer:
    w: Tensor  # [fan_in, fan_out]
    b: Tensor  # [fan_out]


@dataclass
class ModelParams:
    """Encoder + projection parameters. Treat as immutable."""

    dims_encoder: tuple[int, ...]
    dims_projection: tuple[int, ...]
    encoder: list[LinearLayer] = field(repr=False)
    projection: list[LinearLayer] = field(repr=False)

    def all_layers(self) -> list[LinearLayer]:
        return list(self.encoder) + list(self.projection)

    def all_tensors(self) -> list[Tensor]:
        out = []
        for layer in self.all_layers():
            out.append(layer.w)
            out.append(layer.b)
        return out

    def clone(self) -> "ModelParams":
        enc = [LinearLayer(Tensor(l.w.data, requires_grad=True), Tensor(l.b.data, requires_grad=True)) for l in self.encoder]
        proj = [LinearLayer(Tensor(l.w.data, requires_grad=True), Tensor(l.b.data, requires_grad=True)) for l in self.projection]
        return type(self)(self.dims_encoder, self.dims_projection, enc, proj)

    def as_adapted(self) -> "AdaptedParams":
        """View these parameters as an adaptation starting point (shares tensors)."""
        return AdaptedParams(self.dims_encoder, self.dims_projection, list(self.encoder), list(self.projection))


class AdaptedParams(ModelParams):
    """Parameters produced by inner-loop adaptation; same layout as ModelParams."""


def _validate_dims(dims_encoder, dims_projection) -> tuple[tuple[int, ...], tuple[int, ...]]:
    enc = tuple(int(d) for d in dims_encoder)
    proj = tuple(int(d) for d in dims_projection)
    if len(enc) < 1 or len(proj) < 1:
        raise ValidationError("width lists must be non-empty")
    if any(d < 1 for d in enc + proj):
        raise ValidationError(f"layer widths must be >= 1, got {enc} / {proj}")
    if proj[0] != enc[-1]:
        raise ValidationError(f"projection input width {proj[0]} != encoder output width {enc[-1]}")
    return enc, proj


def init(dims_encoder, dims_projection, rng: np.random.Generator) -> ModelParams:
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    enc_dims, proj_dims = _validate_dims(dims_encoder, dims_projection)

    def make(dims):
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append(LinearLayer(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)))
        return layers

    return ModelParams(enc_dims, proj_dims, make(enc_dims), make(proj_dims))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _encoder_out(params: ModelParams, x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"model input must be 2-D, got {x.data.shape}")
    if x.data.shape[1] != params.dims_encoder[0]:
        raise ShapeError(f"input dim {x.data.shape[1]} != encoder input width {params.dims_encoder[0]}")
    t = x
    for i, layer in enumerate(params.encoder):
        t = ad.add_rowvec(ad.matmul(t, layer.w), layer.b)
        if i < len(params.encoder) - 1:
            t = ad.relu(t)
    return t


def features(params: ModelParams, x) -> Tensor:
    """l2-normalized encoder output (projection head not applied)."""
    return ad.l2_normalize_rows(_encoder_out(params, _as_tensor(x)))


def embed(params: ModelParams, x) -> Tensor:
    """l2-normalized output of the full encoder + projection stack."""
    t = _encoder_out(params, _as_tensor(x))
    if params.projection:
        t = ad.relu(t)
        for i, layer in enumerate(params.projection):
            t = ad.add_rowvec(ad.matmul(t, layer.w), layer.b)
            if i < len(params.projection) - 1:
                t = ad.relu(t)
    return ad.l2_normalize_rows(t)


def collect_grads(params: ModelParams) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read accumulated (dW, db) off every layer, in layer order."""
    return [(layer.w.grad, layer.b.grad) for layer in params.all_layers()]


def sgd_step(params: ModelParams, grads, lr: float) -> ModelParams:
    """p <- p - lr * g for every parameter; returns a new object of the same type."""
    layers = params.all_layers()
    if len(grads) != len(layers):
        raise ShapeError(f"got {len(grads)} gradient pairs for {len(layers)} layers")
    new_layers = []
    for layer, (gw, gb) in zip(layers, grads):
        if gw.shape != layer.w.data.shape or gb.shape != layer.b.data.shape:
            raise ShapeError("gradient shape mismatch in sgd_step")
        new_layers.append(
            LinearLayer(
                Tensor(layer.w.data - lr * gw, requires_grad=True),
                Tensor(layer.b.data - lr * gb, requires_grad=True),
            )
        )
    n_enc = len(params.encoder)
    return type(params)(params.dims_encoder, params.dims_projection, new_layers[:n_enc], new_layers[n_enc:])


# ---------------------------------------------------------------------------
# checkpoint file: text header, then raw little-endian float64 payload with
# every layer's W then b, encoder layers first.

_HEADER_END = "end-header"


def save_checkpoint(params: ModelParams, path) -> None:
    buf = io.BytesIO()
    header = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        "encoder " + " ".join(str(d) for d in params.dims_encoder),
        "projection " + " ".join(str(d) for d in params.dims_projection),
        "adapted " + ("1" if isinstance(params, AdaptedParams) else "0"),
        _HEADER_END,
    ]
    buf.write(("\n".join(header) + "\n").encode("ascii"))
    for layer in params.all_layers():
        buf.write(layer.w.data.astype("<f8").tobytes())
        buf.write(layer.b.data.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    lines = []
    rest = blob
    while True:
        nl = rest.find(b"\n")
        if nl < 0:
            raise DatasetHeaderError("checkpoint header never terminated")
        line = rest[:nl].decode("ascii", errors="replace")
        rest = rest[nl + 1 :]
        if line == _HEADER_END:
            break
        lines.append(line)
    if len(lines) != 4:
        raise DatasetHeaderError(f"checkpoint header has {len(lines)} lines, expected 4")
    magic = lines[0].split()
    if magic[0] != CHECKPOINT_MAGIC or magic[1:] != [str(CHECKPOINT_VERSION)]:
        raise DatasetHeaderError(f"bad checkpoint magic line: {lines[0]!r}")
    try:
        enc_dims = tuple(int(t) for t in lines[1].split()[1:])
        proj_dims = tuple(int(t) for t in lines[2].split()[1:])
        adapted = bool(int(lines[3].split()[1]))
    except (ValueError, IndexError) as e:
        raise DatasetHeaderError(f"unparseable checkpoint header: {e}") from e
    enc_dims, proj_dims = _validate_dims(enc_dims, proj_dims)

    offset = 0

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        raw = rest[offset : offset + 8 * n]
        if len(raw) != 8 * n:
            raise DatasetHeaderError("checkpoint payload truncated")
        offset += 8 * n
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

    def make(dims):
        return [
            LinearLayer(Tensor(take((i, o)), requires_grad=True), Tensor(take((o,)), requires_grad=True))
            for i, o in zip(dims[:-1], dims[1:])
        ]

    enc = make(enc_dims)
    proj = make(proj_dims)
    if offset != len(rest):
        raise DatasetHeaderError("checkpoint payload has trailing bytes")
    cls = AdaptedParams if adapted else ModelParams
    return cls(enc_dims, proj_dims, enc, proj)
