"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new Tensor. When at least one input requires a
gradient (and recording is enabled) the result carries a TapeEntry that
points back at its inputs. `backward` rebuilds the computation tape from
the loss in topological order and replays it in reverse, accumulating
gradients additively into every leaf tensor that requires them.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from src.errors import ShapeError

# per-context, so threads never share recording state
_RECORDING = contextvars.ContextVar("isggt_autodiff_recording", default=True)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (inference)."""
    token = _RECORDING.set(False)
    try:
        yield
    finally:
        _RECORDING.reset(token)


def is_recording() -> bool:
    return _RECORDING.get()


@dataclass(eq=False)
class TapeEntry:
    """One recorded operation: its inputs and the local vector-Jacobian product."""

    op: str
    inputs: tuple["Tensor", ...]
    backward_fn: BackwardFn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_entry")
    # ndarray <op> Tensor defers to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        if self.data.ndim == 0:
            self.data = self.data.reshape(())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._entry: Optional[TapeEntry] = None

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._entry is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # ------------------------------------------------------------------
    # Operator sugar; implementations live in src.autodiff.ops
    # ------------------------------------------------------------------

    def __add__(self, other):
        from src.autodiff import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from src.autodiff import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from src.autodiff import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.autodiff import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from src.autodiff import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from src.autodiff import ops

        return ops.mul(other, self)

    def __truediv__(self, other):
        from src.autodiff import ops

        return ops.div(self, other)

    def __neg__(self):
        from src.autodiff import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from src.autodiff import ops

        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from src.autodiff import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from src.autodiff import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        from src.autodiff import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        from src.autodiff import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op's forward result, attaching a tape entry when gradients flow."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._entry = None
    out.requires_grad = False
    if _RECORDING.get() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._entry = TapeEntry(op=op, inputs=tuple(inputs), backward_fn=backward_fn)
    return out


class ComputationTape:
    """Recorded operations reachable from an output, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or node._entry is None:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._entry.inputs:
                if parent._entry is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def ops(self) -> list[str]:
        return [n._entry.op for n in self.nodes]

    def replay_backward(self, seed: np.ndarray) -> None:
        output = self.nodes[-1]
        grads: dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node), None)
            if upstream is None:
                continue
            local = node._entry.backward_fn(upstream)
            for parent, g in zip(node._entry.inputs, local):
                if g is None or not parent.requires_grad:
                    continue
                if parent._entry is None:
                    parent.grad = g.copy() if parent.grad is None else parent.grad + g
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + g
                else:
                    grads[id(parent)] = g


def backward(loss: Tensor) -> ComputationTape:
    """Populate `.grad` on every leaf that requires it; grads accumulate across calls."""
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._entry is None:
        raise ShapeError("backward() called on a tensor with an empty computation tape")
    tape = ComputationTape.from_output(loss)
    tape.replay_backward(np.ones_like(loss.data))
    return tape
