"""Named registry of learnable tensors."""

from __future__ import annotations

from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Dotted-name -> parameter tensor map with gradient slots.

    Gradients live in ``Tensor.grad`` of each parameter, so accumulation happens
    as a side effect of ``Tensor.backward``. Insertion order is preserved and is
    the serialization order of a checkpoint.
    """

    def __init__(self, seed: Optional[int] = 0, dtype=np.float32):
        self._entries: Dict[str, Tensor] = {}
        self.frozen: set = set()
        self.step = 0
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)

    # -- registry ----------------------------------------------------------
    def add(self, name: str, value: np.ndarray, frozen: bool = False) -> Tensor:
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=not frozen, name=name)
        self._entries[name] = t
        if frozen:
            self.frozen.add(name)
        return t

    def get(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    __getitem__ = get

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._entries.items())

    def trainable(self) -> Iterator[Tuple[str, Tensor]]:
        return ((k, t) for k, t in self._entries.items() if k not in self.frozen)

    def grad(self, name: str) -> np.ndarray:
        t = self.get(name)
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    def set(self, name: str, value: np.ndarray) -> None:
        """Replace a parameter's value (shape must match)."""
        t = self.get(name)
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != t.shape:
            raise ValueError(f"parameter {name!r}: shape {value.shape} != {t.shape}")
        t.data = value

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def num_elements(self) -> int:
        return int(sum(t.size for t in self._entries.values()))

    def astype(self, dtype) -> "ParamStore":
        """Copy of this store with every parameter cast to ``dtype``."""
        other = ParamStore(seed=None, dtype=dtype)
        for name, t in self._entries.items():
            other.add(name, t.data.astype(dtype), frozen=name in self.frozen)
        other.step = self.step
        return other

    # -- initializers ------------------------------------------------------
    def conv(self, name: str, in_c: int, out_c: int, k: int, bias: bool = True, zero: bool = False) -> None:
        """Fan-in scaled uniform conv weight ``name.w`` (and zero ``name.b``)."""
        if zero:
            w = np.zeros((out_c, in_c, k, k))
        else:
            bound = 1.0 / np.sqrt(in_c * k * k)
            w = self.rng.uniform(-bound, bound, size=(out_c, in_c, k, k))
        self.add(f"{name}.w", w)
        if bias:
            self.add(f"{name}.b", np.zeros(out_c))

    def prelu(self, name: str, channels: int, init: float = 0.25) -> None:
        self.add(name, np.full(channels, init))

    def linear(self, name: str, in_f: int, out_f: int) -> None:
        bound = 1.0 / np.sqrt(in_f)
        self.add(name, self.rng.uniform(-bound, bound, size=(in_f, out_f)))

    def normal(self, name: str, shape, std: float) -> None:
        self.add(name, self.rng.normal(0.0, std, size=shape))
