"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..errors import UsageError
from .params import ParamStore
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    probe: str
    indices: List[tuple]
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_rel_error <= self.tolerance)

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.probe}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:.0e}) over {len(self.indices)} entries [{status}]"


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - b| / max(|a|, |b|), falling back to absolute error below ``floor``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def _scalar(out: Tensor) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise UsageError(f"grad_check needs a scalar graph output, got {shape}")
    return float(out.data)


def grad_check(
    fn: Callable[[ParamStore], Tensor],
    params: ParamStore,
    probe: str,
    tolerance: float = 1e-4,
    h: float = 1e-4,
    indices: Optional[Sequence[tuple]] = None,
    max_entries: int = 20,
    seed: int = 0,
    shrink: int = 0,
) -> GradCheckReport:
    """Compare the tape gradient of ``fn(params)`` w.r.t. ``params[probe]``
    against central differences.

    ``fn`` must be deterministic. When ``indices`` is omitted up to
    ``max_entries`` entries of the probe are drawn with ``seed``.

    Piecewise-linear graphs (PReLU, |x|, bilinear sampling) have kinks. A
    central difference whose step straddles a kink at distance d < h is off
    by about half the slope jump for every such h, so repeating the step does
    not reveal it. With ``shrink > 0`` the estimate is also taken at h/10, h/100,
    ... (``shrink`` extra rungs) and the rung closest to the tape gradient is
    reported: once h < d the difference converges to the true derivative. A
    wrong tape gradient disagrees on every rung and still fails.
    """
    target = params.get(probe)
    params.zero_grad()
    out = fn(params)
    _scalar(out)
    out.backward()
    grad = params.grad(probe)

    if indices is None:
        flat = np.arange(target.size)
        if target.size > max_entries:
            flat = np.random.default_rng(seed).choice(target.size, size=max_entries, replace=False)
        indices = [np.unravel_index(int(i), target.shape) for i in sorted(flat)]

    base = target.data.copy()
    numeric = []

    def central(idx, step):
        plus = base.copy()
        plus[idx] += step
        target.data = plus
        fp = _scalar(fn(params))
        minus = base.copy()
        minus[idx] -= step
        target.data = minus
        fm = _scalar(fn(params))
        return (fp - fm) / (2 * step)

    with no_grad():
        for idx in indices:
            want = float(grad[idx])
            rungs = [central(idx, h / 10 ** i) for i in range(shrink + 1)]
            numeric.append(min(rungs, key=lambda v: float(relative_error(want, v))))
    target.data = base
    analytic = np.array([grad[idx] for idx in indices], dtype=np.float64)
    numeric = np.array(numeric)
    err = float(relative_error(analytic, numeric).max()) if len(indices) else 0.0
    return GradCheckReport(probe, list(indices), analytic, numeric, err, tolerance)


def check_input_grad(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-4,
    max_entries: int = 20,
    seed: int = 0,
) -> float:
    """Max relative error of d fn(*inputs) / d inputs versus central differences.

    Inputs are wrapped as gradient-requiring tensors; ``fn`` returns a scalar.
    """
    rng = np.random.default_rng(seed)
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    _scalar(out)
    out.backward()
    worst = 0.0
    for k, t in enumerate(tensors):
        flat = np.arange(t.size)
        if t.size > max_entries:
            flat = rng.choice(t.size, size=max_entries, replace=False)
        base = t.data.copy()
        an, nu = [], []
        for i in flat:
            idx = np.unravel_index(int(i), t.shape)
            vals = []
            for sgn in (1.0, -1.0):
                pert = base.copy()
                pert[idx] += sgn * h
                args = [Tensor(pert) if j == k else Tensor(tensors[j].data) for j in range(len(tensors))]
                with no_grad():
                    vals.append(_scalar(fn(*args)))
            nu.append((vals[0] - vals[1]) / (2 * h))
            an.append(t.grad[idx] if t.grad is not None else 0.0)
        worst = max(worst, float(relative_error(np.array(an), np.array(nu)).max()))
    return worst
