"""Tensor value type with a minimal reverse-mode tape.

Every kernel in :mod:`mostdsa.tensor_ops.kernels` produces a new ``Tensor``
and, while gradient recording is enabled, attaches a backward closure plus
references to its inputs. ``Tensor.backward`` walks that graph in reverse
topological order and accumulates gradients into ``.grad`` of every leaf that
requires them.
"""

from __future__ import annotations

import contextlib
import threading
import weakref
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ConfigError

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "grad_enabled",
    "memory",
    "MemoryTracker",
]


class ShapeError(ConfigError):
    """Configuration error: operand shapes are incompatible."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class MemoryTracker:
    """Allocation hook of the numeric core.

    Counts bytes of live tensor buffers plus explicitly registered kernel
    workspaces. Tensor buffers are released through ``weakref.finalize`` so the
    count follows CPython reference counting deterministically.
    """

    def __init__(self):
        self.current = 0
        self.peak = 0
        self._live: dict = {}
        self._lock = threading.Lock()

    def alloc(self, nbytes: int) -> None:
        with self._lock:
            self.current += nbytes
            if self.current > self.peak:
                self.peak = self.current

    def free(self, nbytes: int) -> None:
        with self._lock:
            self.current -= nbytes

    def register(self, arr: np.ndarray) -> None:
        """Count the buffer behind ``arr`` once; views of counted buffers are free."""
        root = arr
        while isinstance(root.base, np.ndarray):
            root = root.base
        key = id(root)
        with self._lock:
            if key in self._live:
                return
            self._live[key] = root.nbytes
        self.alloc(root.nbytes)
        weakref.finalize(root, self._release, key)

    def _release(self, key: int) -> None:
        with self._lock:
            nbytes = self._live.pop(key, 0)
        self.free(nbytes)

    def reset_peak(self) -> None:
        with self._lock:
            self.peak = self.current

    @contextlib.contextmanager
    def workspace(self, nbytes: int):
        self.alloc(nbytes)
        try:
            yield
        finally:
            self.free(nbytes)


memory = MemoryTracker()


class Tensor:
    """Dense real array plus autodiff bookkeeping.

    ``data`` is treated as immutable once wrapped. Image-like values use the
    N x C x H x W layout; token blocks use (batch, ..., n, width).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
        name: Optional[str] = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name
        memory.register(arr)

    # -- construction helpers -------------------------------------------------
    @classmethod
    def result(cls, data: np.ndarray, parents: Iterable["Tensor"], backward) -> "Tensor":
        """Wrap a kernel output, recording the graph edge if any input needs it."""
        parents = tuple(parents)
        if grad_enabled() and any(p.requires_grad for p in parents):
            return cls(data, requires_grad=True, parents=parents, backward=backward)
        return cls(data)

    # -- array-like surface ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # Operator sugar routes through the kernels module (imported lazily to
    # avoid a cycle).
    def __add__(self, other):
        from . import kernels as K
        return K.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import kernels as K
        return K.sub(self, other)

    def __rsub__(self, other):
        from . import kernels as K
        return K.sub(other, self)

    def __mul__(self, other):
        from . import kernels as K
        return K.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import kernels as K
        return K.div(self, other)

    def __neg__(self):
        from . import kernels as K
        return K.mul(self, -1.0)

    def __matmul__(self, other):
        from . import kernels as K
        return K.matmul(self, other)

    def __getitem__(self, index):
        from . import kernels as K
        return K.slice(self, index)

    # -- differentiation ------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without a seed gradient needs a scalar output, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order
