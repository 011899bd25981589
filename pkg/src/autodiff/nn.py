"""
Parameter containers and transformer building blocks on top of the tape.

Shapes follow a (batch, sequence, width) convention throughout. Weight
matrices are stored (in_features, out_features).
"""

from __future__ import annotations

from typing import Iterator, Mapping, Optional

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.errors import ConfigError, DataError


class Module:
    """Collects Tensors and sub-Modules assigned as attributes, by dotted name."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item
            elif isinstance(value, (Module, Tensor)):
                yield name, value

    def named_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        """Every stored tensor, trainable or frozen."""
        found: dict[str, Tensor] = {}
        for name, value in self._children():
            if isinstance(value, Tensor):
                found[prefix + name] = value
            else:
                found.update(value.named_tensors(f"{prefix}{name}."))
        return found

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {k: t for k, t in self.named_tensors(prefix).items() if t.requires_grad}

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors().items()}

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        tensors = self.named_tensors()
        missing = sorted(set(tensors) - set(arrays))
        unexpected = sorted(set(arrays) - set(tensors))
        if missing or unexpected:
            raise DataError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, t in tensors.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise DataError(f"state for {name!r} has shape {value.shape}, expected {t.shape}")
            t.data = value.copy()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(glorot(rng, in_features, out_features), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int):
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, rows: int, width: int, rng: np.random.Generator, trainable: bool = True):
        self.table = Tensor(rng.normal(0.0, width**-0.5, size=(rows, width)), requires_grad=trainable)

    def forward(self, indices) -> Tensor:
        return ops.embedding_lookup(self.table, indices)


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention with separate Q/K/V/O projections."""

    def __init__(self, width: int, num_heads: int, rng: np.random.Generator):
        if width % num_heads:
            raise ConfigError(f"hidden width {width} is not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = width // num_heads
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.output = Linear(width, width, rng)

    def _split(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        return ops.transpose(
            ops.reshape(x, (batch, length, self.num_heads, self.head_dim)), (0, 2, 1, 3)
        )

    def forward(
        self, query: Tensor, memory: Tensor, mask: Optional[np.ndarray] = None
    ) -> tuple[Tensor, Tensor]:
        """`mask` is (batch, 1, q_len, k_len) boolean; returns (output, head weights)."""
        q = self._split(self.query(query))
        k = self._split(self.key(memory))
        v = self._split(self.value(memory))
        attended, weights = ops.scaled_dot_product_attention(q, k, v, mask)
        batch, _, length, _ = attended.shape
        merged = ops.reshape(ops.transpose(attended, (0, 2, 1, 3)), (batch, length, -1))
        return self.output(merged), weights


class FeedForward(Module):
    def __init__(self, width: int, hidden: int, rng: np.random.Generator):
        self.expand = Linear(width, hidden, rng)
        self.project = Linear(hidden, width, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.project(ops.relu(self.expand(x)))


class TransformerBlock(Module):
    """
    Pre-norm block: self-attention, optional cross-attention against a
    memory sequence, then a position-wise feed-forward, each residual.
    """

    def __init__(self, width: int, num_heads: int, rng: np.random.Generator, cross_attention: bool = False):
        self.self_norm = LayerNorm(width)
        self.self_attention = MultiHeadAttention(width, num_heads, rng)
        self.cross_norm = LayerNorm(width) if cross_attention else None
        self.cross_attention = MultiHeadAttention(width, num_heads, rng) if cross_attention else None
        self.ffn_norm = LayerNorm(width)
        self.ffn = FeedForward(width, 2 * width, rng)

    def forward(
        self,
        x: Tensor,
        self_mask: Optional[np.ndarray] = None,
        memory: Optional[Tensor] = None,
        memory_mask: Optional[np.ndarray] = None,
    ) -> tuple[Tensor, Optional[Tensor]]:
        normed = self.self_norm(x)
        attended, _ = self.self_attention(normed, normed, self_mask)
        x = x + attended
        cross_weights = None
        if self.cross_attention is not None and memory is not None:
            normed = self.cross_norm(x)
            attended, cross_weights = self.cross_attention(normed, memory, memory_mask)
            x = x + attended
        x = x + self.ffn(self.ffn_norm(x))
        return x, cross_weights


def causal_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    """(batch, 1, width, width): position i attends to valid positions j <= i."""
    positions = np.arange(width)
    lower = positions[None, :] <= positions[:, None]
    valid = positions[None, :] < np.asarray(lengths)[:, None]
    mask = lower[None, :, :] & valid[:, None, :]
    # padded query rows still see position 0 so their softmax stays finite
    mask[:, :, 0] = True
    return mask[:, None, :, :]


def padding_mask(lengths: np.ndarray, width: int, query_width: Optional[int] = None) -> np.ndarray:
    """(batch, 1, query_width, width): every query attends to valid keys only."""
    query_width = width if query_width is None else query_width
    valid = np.arange(width)[None, :] < np.asarray(lengths)[:, None]
    valid = valid.copy()
    valid[:, 0] = True
    return np.broadcast_to(valid[:, None, None, :], (len(valid), 1, query_width, width)).copy()
