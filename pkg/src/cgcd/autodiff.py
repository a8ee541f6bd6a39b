"""Dense float64 tensors with a reverse-mode gradient tape.

Values are numpy arrays. Every operation returns a fresh ``Tensor`` whose
node id is drawn from a global monotonically increasing counter, so the
graph is append-only and iterating reachable nodes by decreasing id is a
valid reverse-topological order. Gradients accumulate into per-node slots
and are read back from leaves after :func:`backward`.

Supported shapes are scalars, 1-D and 2-D arrays; the only broadcasting
is row-bias addition and row scaling, which is all the models here need.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    GradientStateError,
    NonFiniteError,
    ShapeError,
)

_NODE_IDS = itertools.count()

ROW_NORM_FLOOR = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: same seed + same call sequence -> same draws."""
    return np.random.default_rng(seed)


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent deterministic generators from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class Tensor:
    """One node in the computation graph. Immutable once produced."""

    __slots__ = ("data", "node_id", "requires_grad", "_parents", "_vjp", "_grad", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)  # leaf copies its input
        if arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
        _check_finite(arr, "leaf")
        arr.flags.writeable = False
        self.data = arr
        self.node_id = next(_NODE_IDS)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._grad: np.ndarray | None = None
        self._backward_done = False

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], vjp) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "op output")
        arr.flags.writeable = False
        out.data = arr
        out.node_id = next(_NODE_IDS)
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents
        out._vjp = vjp
        out._grad = None
        out._backward_done = False
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zeros if backward never reached this node."""
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, id={self.node_id})"

    # operator sugar
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -np.asarray(other))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_const(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite entries in {where}")


def _accumulate(node: Tensor, g: np.ndarray) -> None:
    if g.shape != node.data.shape:
        raise ShapeError(f"gradient shape {g.shape} != value shape {node.data.shape}")
    if node._grad is None:
        node._grad = g.copy()
    else:
        node._grad = node._grad + g


# ---------------------------------------------------------------------------
# primitive operations


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Tensor._from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def add_const(a: Tensor, c) -> Tensor:
    """a + c for a constant array/scalar; output shape must equal a's shape."""
    c = np.asarray(c, dtype=np.float64)
    try:
        out = a.data + c
    except ValueError as e:
        raise ShapeError(f"add_const: {e}") from e
    if out.shape != a.data.shape:
        raise ShapeError(f"add_const: constant of shape {c.shape} changes shape {a.data.shape}")
    return Tensor._from_op(out, (a,), lambda g: (g,))


def mul_const(a: Tensor, c) -> Tensor:
    """a * c for a constant array/scalar; output shape must equal a's shape."""
    c = np.asarray(c, dtype=np.float64)
    try:
        out = a.data * c
    except ValueError as e:
        raise ShapeError(f"mul_const: {e}") from e
    if out.shape != a.data.shape:
        raise ShapeError(f"mul_const: constant of shape {c.shape} changes shape {a.data.shape}")
    return Tensor._from_op(out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(a.data @ b.data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose needs a 2-D operand")
    return Tensor._from_op(a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at 0 is 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive entry")
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0):
        raise NonFiniteError("reciprocal of zero entry")
    out = 1.0 / a.data
    return Tensor._from_op(out, (a,), lambda g: (-g * out * out,))


def sum_all(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.full(a.data.shape, float(g)),)

    return Tensor._from_op(np.asarray(a.data.sum()), (a,), vjp)


def rowsum(a: Tensor) -> Tensor:
    """Sum each row of a 2-D tensor -> 1-D tensor of length nrows."""
    if a.data.ndim != 2:
        raise ShapeError("rowsum needs a 2-D operand")
    return Tensor._from_op(a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], a.data.shape[1], axis=1),))


def rowmax(a: Tensor) -> Tensor:
    """Max of each row; gradient routes to the first (lowest-index) argmax."""
    if a.data.ndim != 2:
        raise ShapeError("rowmax needs a 2-D operand")
    idx = np.argmax(a.data, axis=1)

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[np.arange(a.data.shape[0]), idx] = g
        return (ga,)

    return Tensor._from_op(a.data[np.arange(a.data.shape[0]), idx], (a,), vjp)


def scale_rows(a: Tensor, v: Tensor) -> Tensor:
    """Multiply row i of 2-D ``a`` by v[i]."""
    if a.data.ndim != 2 or v.data.ndim != 1 or v.data.shape[0] != a.data.shape[0]:
        raise ShapeError(f"scale_rows: shapes {a.data.shape} and {v.data.shape}")

    def vjp(g):
        return g * v.data[:, None], (g * a.data).sum(axis=1)

    return Tensor._from_op(a.data * v.data[:, None], (a, v), vjp)


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add 1-D ``v`` to every row of 2-D ``a`` (bias addition)."""
    if a.data.ndim != 2 or v.data.ndim != 1 or v.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"add_rowvec: shapes {a.data.shape} and {v.data.shape}")
    return Tensor._from_op(a.data + v.data[None, :], (a, v), lambda g: (g, g.sum(axis=0)))


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row of a 2-D tensor to unit euclidean norm."""
    if a.data.ndim != 2:
        raise ShapeError("l2_normalize_rows needs a 2-D operand")
    norms = np.sqrt((a.data * a.data).sum(axis=1))
    if np.any(norms < ROW_NORM_FLOOR):
        raise DegenerateInputError(f"row norm below {ROW_NORM_FLOOR:g} in l2_normalize_rows")
    out = a.data / norms[:, None]

    def vjp(g):
        # d(x/r)/dx^T g = (g - y (y.g)) / r  with y = x/r
        dots = (g * out).sum(axis=1)
        return ((g - out * dots[:, None]) / norms[:, None],)

    return Tensor._from_op(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reverse pass


def _reachable(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.node_id in seen:
            continue
        seen[node.node_id] = node
        stack.extend(node._parents)
    return [seen[i] for i in sorted(seen, reverse=True)]


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into every reachable node's grad slot.

    ``root`` must be a scalar (size-1) tensor. A second call on the same
    graph without :func:`reset` raises, because grads would silently double.
    """
    if root.data.size != 1:
        raise GradientStateError(f"backward root must be scalar, got shape {root.data.shape}")
    if root._backward_done:
        raise GradientStateError("backward already ran on this graph; call reset() first")
    root._backward_done = True
    order = _reachable(root)
    root._grad = np.ones_like(root.data)
    for node in order:
        if node._vjp is None or node._grad is None:
            continue
        grads = node._vjp(node._grad)
        for parent, g in zip(node._parents, grads):
            if g is not None:
                _accumulate(parent, np.asarray(g, dtype=np.float64))


def reset(root: Tensor) -> None:
    """Clear gradient slots and the backward marker on the whole graph."""
    for node in _reachable(root):
        node._grad = None
        node._backward_done = False


def zero_grad(tensors) -> None:
    """Clear gradient slots on an iterable of (leaf) tensors."""
    for t in tensors:
        t._grad = None
        t._backward_done = False


def finite_diff_grad(f, p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at parameter array ``p``.

    ``f`` receives a plain ndarray of p's shape and must return a float.
    Cost is two evaluations per coordinate; intended as a test oracle.
    """
    p = np.asarray(p, dtype=np.float64)
    flat = p.ravel().copy()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        hi = float(f((flat + step).reshape(p.shape)))
        lo = float(f((flat - step).reshape(p.shape)))
        out[i] = (hi - lo) / (2.0 * h)
    return out.reshape(p.shape)
