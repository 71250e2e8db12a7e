"""Layers assembled from the autodiff primitives.

All parameters are float64 and initialized from a caller-supplied numpy
Generator, uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)).  Modules register
parameters in a dict as they are created, so iteration order (and therefore
optimizer update order) is the creation order, which is fixed by the model
architecture and nothing else.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError

MASK_BIAS = -1e9


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Parameter container; children and parameters keep registration order."""

    def __init__(self):
        self._params: dict[str, T.Tensor] = {}
        self._children: dict[str, Module] = {}

    def register(self, name: str, array: np.ndarray) -> T.Tensor:
        if name in self._params or name in self._children:
            raise ContractError(f"duplicate parameter name {name!r}")
        param = T.Tensor(array, requires_grad=True)
        self._params[name] = param
        return param

    def add_child(self, name: str, child: "Module") -> "Module":
        if name in self._params or name in self._children:
            raise ContractError(f"duplicate child name {name!r}")
        self._children[name] = child
        return child

    def named_parameters(self, prefix: str = "") -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {}
        for name, param in self._params.items():
            out[prefix + name] = param
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def parameters(self) -> list[T.Tensor]:
        return list(self.named_parameters().values())


class Linear(Module):
    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = self.register("weight", uniform_init(rng, in_dim, (in_dim, out_dim)))
        self.bias = self.register("bias", uniform_init(rng, in_dim, (out_dim,)))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"linear expected last dim {self.in_dim}, got {x.shape}")
        return x @ self.weight + self.bias


class LayerNorm(Module):
    """Last-axis normalization with learned scale (starts at 1) and shift (0)."""

    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.register("gamma", np.ones(width))
        self.beta = self.register("beta", np.zeros(width))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


def mask_to_bias(mask: np.ndarray) -> np.ndarray:
    """Turn a {0,1} key mask of shape (L,) into an additive attention bias
    of shape (1, 1, L): 0 on real positions, MASK_BIAS on padding."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 1:
        raise ContractError(f"key mask must be 1-D, got shape {mask.shape}")
    return ((1.0 - mask) * MASK_BIAS)[None, None, :]


class MultiHeadAttention(Module):
    """Scaled dot-product attention with heads split by reshape.

    Inputs are unbatched (L, d_model) matrices; an optional additive bias
    broadcastable to (heads, L_q, L_k) carries padding masks.
    """

    def __init__(self, rng: np.random.Generator, d_model: int, num_heads: int):
        super().__init__()
        if d_model % num_heads != 0:
            raise ContractError(f"d_model {d_model} not divisible by {num_heads} heads")
        self.d_model = d_model
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.proj_q = self.add_child("proj_q", Linear(rng, d_model, d_model))
        self.proj_k = self.add_child("proj_k", Linear(rng, d_model, d_model))
        self.proj_v = self.add_child("proj_v", Linear(rng, d_model, d_model))
        self.proj_out = self.add_child("proj_out", Linear(rng, d_model, d_model))

    def _split(self, x: T.Tensor, length: int) -> T.Tensor:
        # (L, d) -> (heads, L, head_dim)
        return x.reshape(length, self.num_heads, self.head_dim).transpose((1, 0, 2))

    def __call__(self, query: T.Tensor, memory: T.Tensor, bias: np.ndarray | None = None) -> T.Tensor:
        lq, lk = query.shape[0], memory.shape[0]
        q = self._split(self.proj_q(query), lq)
        k = self._split(self.proj_k(memory), lk)
        v = self._split(self.proj_v(memory), lk)
        scores = (q @ k.transpose((0, 2, 1))) * self.scale
        if bias is not None:
            scores = scores + T.Tensor(bias)
        weights = T.softmax(scores)
        mixed = (weights @ v).transpose((1, 0, 2)).reshape(lq, self.d_model)
        return self.proj_out(mixed)


class FeedForward(Module):
    """Position-wise two-layer net, hidden width 4x the model width."""

    def __init__(self, rng: np.random.Generator, d_model: int):
        super().__init__()
        self.expand = self.add_child("expand", Linear(rng, d_model, 4 * d_model))
        self.contract = self.add_child("contract", Linear(rng, 4 * d_model, d_model))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return self.contract(T.gelu(self.expand(x)))


class Dropout:
    """Inverted dropout driven by an explicit Generator; identity when off."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def __call__(self, x: T.Tensor, rng: np.random.Generator | None, train: bool) -> T.Tensor:
        if not train or self.rate == 0.0:
            return x
        if rng is None:
            raise ContractError("dropout in training mode needs a Generator")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep) / keep
        return x * T.Tensor(mask)


class TransformerLayer(Module):
    """Pre-norm transformer block; with ``cross=True`` it adds an attention
    sub-layer over an external memory between self-attention and the FFN."""

    def __init__(self, rng: np.random.Generator, d_model: int, num_heads: int,
                 dropout: float = 0.0, cross: bool = False):
        super().__init__()
        self.cross = cross
        self.norm_self = self.add_child("norm_self", LayerNorm(d_model))
        self.attn_self = self.add_child("attn_self", MultiHeadAttention(rng, d_model, num_heads))
        if cross:
            self.norm_cross = self.add_child("norm_cross", LayerNorm(d_model))
            self.attn_cross = self.add_child("attn_cross", MultiHeadAttention(rng, d_model, num_heads))
        self.norm_ffn = self.add_child("norm_ffn", LayerNorm(d_model))
        self.ffn = self.add_child("ffn", FeedForward(rng, d_model))
        self.drop = Dropout(dropout)

    def __call__(self, x: T.Tensor, memory: T.Tensor | None = None,
                 self_bias: np.ndarray | None = None, memory_bias: np.ndarray | None = None,
                 rng: np.random.Generator | None = None, train: bool = False) -> T.Tensor:
        normed = self.norm_self(x)
        x = x + self.drop(self.attn_self(normed, normed, bias=self_bias), rng, train)
        if self.cross:
            if memory is None:
                raise ContractError("cross-attention layer called without memory")
            x = x + self.drop(self.attn_cross(self.norm_cross(x), memory, bias=memory_bias), rng, train)
        x = x + self.drop(self.ffn(self.norm_ffn(x)), rng, train)
        return x
