"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything here is deliberately small and single threaded: operations execute
eagerly on numpy arrays and record themselves on a global tape, and
``backward`` replays adjoints in reverse tape order.  Replaying in tape order
also fixes the order in which gradients accumulate, which keeps repeated runs
with identical seeds bit-identical.

One backward pass per forward pass: intermediate gradients are not cleared
between calls, so build a fresh expression (or ``reset_tape``) before
differentiating again.  Leaf gradients accumulate until ``zero_grad``-style
clearing by the optimizer.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf, expit

from .errors import ContractError, NumericDomainError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A dense float64 array with an optional same-shape gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_tape_index")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._tape_index = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; the actual work lives in the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ContractError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=False)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=True)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)


class Tape:
    """Ordered record of executed differentiable operations.

    Creation order is a topological order by construction: an operation can
    only run after the operations that produced its inputs.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def append(self, node: Tensor) -> None:
        node._tape_index = len(self.nodes)
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes.clear()


_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    _TAPE.reset()


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / evaluation)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def as_tensor(value) -> Tensor:
    """Wrap a scalar or array as a constant Tensor; pass Tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _record(out_data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    tracked = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        out._parents = parents
        out._backward_fn = backward_fn
        _TAPE.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (have, want) in enumerate(zip(grad.shape, shape)):
        if want == 1 and have != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(ancestor) into every reachable requires_grad tensor.

    The loss must be a scalar produced by a recorded operation.  Adjoints are
    replayed in reverse tape order, so every node's gradient is complete
    before its own backward runs.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backward expects a scalar loss tensor")
    if loss._backward_fn is None:
        raise ContractError("loss is not on the active tape (constant, or computed under no_grad)")
    reachable = {id(loss)}
    stack = [loss]
    while stack:
        node = stack.pop()
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in reachable:
                reachable.add(id(parent))
                stack.append(parent)
    loss.grad[...] = 1.0
    for node in reversed(_TAPE.nodes[: loss._tape_index + 1]):
        if node._backward_fn is not None and id(node) in reachable:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _record(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.data.shape)

    return _record(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _record(a.data * b.data, (a, b), backward_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g):
        if a.requires_grad:
            a.grad -= g

    return _record(-a.data, (a,), backward_fn)


def matmul(a, b) -> Tensor:
    """Matrix product.  2-D operands follow the r×k @ k×c contract; higher
    ranks are treated as stacks of matrices with broadcast leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul cannot broadcast shapes {a.shape} and {b.shape}") from exc

    def backward_fn(g):
        if a.requires_grad:
            a.grad += _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return _record(out, (a, b), backward_fn)


def softmax(x) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericDomainError("softmax input contains NaN or Inf")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exped = np.exp(shifted)
    y = exped / exped.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            x.grad += (g - inner) * y

    return _record(y, (x,), backward_fn)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g / x.data

    return _record(out, (x,), backward_fn)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g / (2.0 * y)

    return _record(y, (x,), backward_fn)


def sqrt_clamped(x, floor: float = 1e-12) -> Tensor:
    """Exact elementwise square root whose derivative is evaluated at
    max(x, floor), keeping the backward pass finite at zero."""
    x = as_tensor(x)
    y = np.sqrt(x.data)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g / (2.0 * np.sqrt(np.maximum(x.data, floor)))

    return _record(y, (x,), backward_fn)


def relu(x) -> Tensor:
    x = as_tensor(x)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g * (x.data > 0.0)

    return _record(np.maximum(x.data, 0.0), (x,), backward_fn)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g * np.where(x.data > 0.0, 1.0, slope)

    return _record(np.where(x.data > 0.0, x.data, slope * x.data), (x,), backward_fn)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def backward_fn(g):
        if x.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
            x.grad += g * (cdf + x.data * pdf)

    return _record(x.data * cdf, (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g * y * (1.0 - y)

    return _record(y, (x,), backward_fn)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gamma.data + beta.data
    width = x.shape[-1]

    def backward_fn(g):
        if gamma.requires_grad:
            gamma.grad += (g * xhat).reshape(-1, width).sum(axis=0)
        if beta.requires_grad:
            beta.grad += g.reshape(-1, width).sum(axis=0)
        if x.requires_grad:
            dxhat = g * gamma.data
            term1 = dxhat.mean(axis=-1, keepdims=True)
            term2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.grad += (dxhat - term1 - xhat * term2) * inv_std

    return _record(out, (x, gamma, beta), backward_fn)


def embedding(table, ids) -> Tensor:
    """Row lookup with a scatter-add adjoint.  ``ids`` may have any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding index out of range for table with {table.shape[0]} rows")
    out = table.data[ids]

    def backward_fn(g):
        if table.requires_grad:
            np.add.at(table.grad, ids, g)

    return _record(out, (table,), backward_fn)


def gather_rc(x, rows, cols) -> Tensor:
    """Pick x[rows[i], cols[i]] for each i, returning a vector."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if rows.shape != cols.shape or rows.ndim != 1:
        raise ContractError("gather_rc needs matching 1-D row and column index vectors")
    if x.ndim != 2:
        raise ContractError(f"gather_rc needs a matrix, got shape {x.shape}")
    if rows.size and (rows.min() < 0 or rows.max() >= x.shape[0] or cols.min() < 0 or cols.max() >= x.shape[1]):
        raise ContractError(f"gather_rc index out of range for shape {x.shape}")
    out = x.data[rows, cols]

    def backward_fn(g):
        if x.requires_grad:
            np.add.at(x.grad, (rows, cols), g)

    return _record(out, (x,), backward_fn)


def _reduce(x, axis, keepdims, mean: bool) -> Tensor:
    x = as_tensor(x)
    if mean:
        out = x.data.mean(axis=axis, keepdims=keepdims)
    else:
        out = x.data.sum(axis=axis, keepdims=keepdims)
    scale = x.size / max(out.size, 1) if mean else 1.0

    def backward_fn(g):
        if not x.requires_grad:
            return
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        x.grad += np.broadcast_to(gg, x.data.shape) / scale if mean else np.broadcast_to(gg, x.data.shape)

    return _record(out, (x,), backward_fn)


def fsum(x) -> Tensor:
    """Correctly rounded total of all elements.

    Unlike ``sum``, the result does not depend on element order, so
    reductions over mathematically order-free collections (e.g. unordered
    pairs) stay bit-stable under permutation of the inputs."""
    x = as_tensor(x)
    out = np.float64(math.fsum(x.data.ravel()))

    def backward_fn(g):
        if x.requires_grad:
            x.grad += np.broadcast_to(g, x.data.shape)

    return _record(out, (x,), backward_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        moved = np.moveaxis(g, axis, 0)
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.grad += np.moveaxis(moved[start:stop], 0, axis)

    return _record(out, tuple(tensors), backward_fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    original = x.data.shape

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g.reshape(original)

    return _record(x.data.reshape(shape), (x,), backward_fn)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += np.transpose(g, inverse)

    return _record(np.transpose(x.data, axes), (x,), backward_fn)


def clamp_min(x, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient flows only where x > floor."""
    x = as_tensor(x)

    def backward_fn(g):
        if x.requires_grad:
            x.grad += g * (x.data > floor)

    return _record(np.maximum(x.data, floor), (x,), backward_fn)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross entropy on logits, the numerically stable form."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"bce_with_logits shapes disagree: {logits.shape} vs {targets.shape}")
    z = logits.data
    out = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))

    def backward_fn(g):
        if logits.requires_grad:
            logits.grad += g * (expit(z) - targets)

    return _record(out, (logits,), backward_fn)
