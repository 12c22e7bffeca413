"""Differentiable kernels over :class:`Tensor`.

Each public function computes its forward result with numpy and registers a
backward closure returning one gradient (or ``None``) per tensor input.
Reductions run in a fixed order so repeated calls are bit-identical.
"""

from __future__ import annotations

import builtins
import functools
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from .tensor import ShapeError, Tensor, memory

Scalar = Union[int, float]
TensorLike = Union[Tensor, np.ndarray, Scalar]


def as_tensor(x: TensorLike, like: Tensor = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.result(out, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.result(out, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.result(out, (a, b), backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.result(out, (a, b), backward)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.abs(x.data)

    def backward(g):
        return (g * np.sign(x.data),)

    return Tensor.result(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor.result(out, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)

    def backward(g):
        inside = (x.data >= lo) & (x.data <= hi)
        return (g * inside,)

    return Tensor.result(out, (x,), backward)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Channelwise parametric ReLU on an (N, C, ...) tensor."""
    slope = as_tensor(slope, x)
    if slope.ndim != 1 or slope.shape[0] != x.shape[1]:
        raise ShapeError(f"prelu slope shape {slope.shape} does not match channels of input {x.shape}")
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    a = slope.data.reshape(bshape)
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)

    def backward(g):
        gx = np.where(neg, a * g, g)
        gs = None
        if slope.requires_grad:
            axes = (0,) + tuple(range(2, x.ndim))
            gs = np.where(neg, g * x.data, 0.0).sum(axis=axes)
        return gx, gs

    return Tensor.result(out, (x, slope), backward)


# ---------------------------------------------------------------------------
# reductions, shape plumbing
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor.result(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor.result(out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)

    def backward(g):
        return (g.transpose(inv),)

    return Tensor.result(out, (x,), backward)


def slice(x: Tensor, index) -> Tensor:  # noqa: A001
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return Tensor.result(out, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def backward(g):
        grads = []
        for i in range(len(xs)):
            idx = [np.s_[:]] * g.ndim
            idx[axis] = np.s_[bounds[i]:bounds[i + 1]]
            grads.append(g[tuple(idx)])
        return grads

    return Tensor.result(out, xs, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor.result(out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor.result(out, (x,), backward)


def standardize(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance along ``axis`` (population variance)."""
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * out).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - out * gy),)

    return Tensor.result(out, (x,), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW / OIkk layout."""
    weight = as_tensor(weight, x)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c or kh != kw:
        raise ShapeError(f"conv2d weight {weight.shape} incompatible with input {x.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride>=1, dilation>=1, padding>=0 (got {stride}, {dilation}, {padding})")
    k = kh
    ho = conv_output_size(h, k, stride, padding, dilation)
    wo = conv_output_size(w, k, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape} and weight {weight.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            cols[:, :, i, j] = xp[:, :, r0:r0 + span_h:stride, c0:c0 + span_w:stride]
    cols = cols.reshape(n, c * k * k, ho * wo)
    wmat = weight.data.reshape(oc, c * k * k)
    with memory.workspace(cols.nbytes):
        out = np.matmul(wmat, cols)
    out = out.reshape(n, oc, ho, wo)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias, x)
        out = out + bias.data.reshape(1, oc, 1, 1)
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(n, oc, ho * wo)
        gw = gx = gb = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(n, c, k, k, ho, wo)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    r0, c0 = i * dilation, j * dilation
                    gxp[:, :, r0:r0 + span_h:stride, c0:c0 + span_w:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return Tensor.result(out, parents, backward)


# ---------------------------------------------------------------------------
# resolution changes
# ---------------------------------------------------------------------------

def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """(N, C*f*f, H, W) -> (N, C, H*f, W*f)."""
    n, c, h, w = x.shape
    f = int(factor)
    if c % (f * f):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by factor^2={f * f}")
    oc = c // (f * f)
    out = x.data.reshape(n, oc, f, f, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * f, w * f)

    def backward(g):
        return (g.reshape(n, oc, h, f, w, f).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return Tensor.result(np.ascontiguousarray(out), (x,), backward)


def pixel_unshuffle(x: Tensor, factor: int) -> Tensor:
    """(N, C, H*f, W*f) -> (N, C*f*f, H, W); inverse of :func:`pixel_shuffle`."""
    n, c, hf, wf = x.shape
    f = int(factor)
    if hf % f or wf % f:
        raise ShapeError(f"pixel_unshuffle: spatial dims {(hf, wf)} not divisible by {f}")
    h, w = hf // f, wf // f
    out = x.data.reshape(n, c, h, f, w, f).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * f * f, h, w)

    def backward(g):
        return (g.reshape(n, c, f, f, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),)

    return Tensor.result(np.ascontiguousarray(out), (x,), backward)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic (n_out, n_in) interpolation matrix, half-pixel centres."""
    scale = n_in / n_out
    m = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resample(x: Tensor, scale=None, size=None) -> Tensor:
    """Bilinear resize of an (N, C, H, W) tensor by a rational ``scale`` or to ``size``."""
    n, c, h, w = x.shape
    if size is None:
        if scale is None:
            raise ValueError("resample needs scale or size")
        s = Fraction(scale).limit_denominator(64)
        if s <= 0:
            raise ValueError(f"resample scale must be positive, got {scale}")
        size = (max(1, round(h * s)), max(1, round(w * s)))
    ho, wo = size
    if (ho, wo) == (h, w):
        return reshape(x, x.shape)
    ah = bilinear_matrix(h, ho, x.dtype)
    aw = bilinear_matrix(w, wo, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def backward(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return Tensor.result(out, (x,), backward)


# ---------------------------------------------------------------------------
# warping
# ---------------------------------------------------------------------------

def backwarp(src: Tensor, flow: Tensor) -> Tensor:
    """Sample ``src`` at (x + u, y + v) bilinearly; out-of-image taps read zero.

    ``flow`` is (N, 2, H, W) in pixels with u along width and v along height;
    it is shared across all channels of ``src``.
    """
    n, c, h, w = src.shape
    if flow.shape != (n, 2, h, w):
        raise ShapeError(f"backwarp flow {flow.shape} does not match source {src.shape}")
    gy, gx = np.meshgrid(np.arange(h, dtype=src.dtype), np.arange(w, dtype=src.dtype), indexing="ij")
    sx = gx[None] + flow.data[:, 0]
    sy = gy[None] + flow.data[:, 1]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    taps = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi = x0 + dx
        yi = y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        lin = np.where(valid, yi * w + xi, 0) + (np.arange(n) * h * w)[:, None, None]
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        taps.append((lin, valid, wx, wy, dx, dy))

    flat = src.data.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    out = np.zeros((c, n, h, w), dtype=src.dtype)
    values = []
    for lin, valid, wx, wy, _, _ in taps:
        v = flat[:, lin] * valid
        values.append(v)
        out += v * (wx * wy)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def backward(g):
        gt = g.transpose(1, 0, 2, 3)
        gsrc = gflow = None
        if src.requires_grad:
            acc = np.zeros((c, n * h * w), dtype=np.float64)
            for lin, valid, wx, wy, _, _ in taps:
                wgt = (wx * wy * valid).ravel()
                idx = lin.ravel()
                for ch in range(c):
                    acc[ch] += np.bincount(idx, weights=gt[ch].ravel() * wgt, minlength=n * h * w)
            gsrc = acc.reshape(c, n, h, w).transpose(1, 0, 2, 3).astype(src.dtype)
        if flow.requires_grad:
            gu = np.zeros((n, h, w), dtype=src.dtype)
            gv = np.zeros((n, h, w), dtype=src.dtype)
            for (lin, valid, wx, wy, dx, dy), v in zip(taps, values):
                gv_ = (gt * v).sum(axis=0)
                gu += gv_ * wy * (1.0 if dx else -1.0)
                gv += gv_ * wx * (1.0 if dy else -1.0)
            gflow = np.stack([gu, gv], axis=1)
        return gsrc, gflow

    return Tensor.result(out, (src, flow), backward)


# ---------------------------------------------------------------------------
# scoped (local) lambda application
# ---------------------------------------------------------------------------

DENSE_TOKENS = 576


@functools.lru_cache(maxsize=32)
def scope_index(grid: tuple, scope: int) -> np.ndarray:
    """(n, n) map from (query, key) token pairs to their offset index in the
    r x r window, or r*r when the key lies outside the query's window."""
    h, w = grid
    half = scope // 2
    ys, xs = np.divmod(np.arange(h * w), w)
    dy = ys[None, :] - ys[:, None]
    dx = xs[None, :] - xs[:, None]
    inside = (np.abs(dy) <= half) & (np.abs(dx) <= half)
    idx = np.where(inside, (dy + half) * scope + (dx + half), scope * scope)
    idx.setflags(write=False)
    return idx


def _scoped_banded(query: Tensor, values: Tensor, emb: Tensor, grid: tuple, r: int) -> Tensor:
    b, g_, n, _ = query.shape
    qd, vd, e = query.data, values.data, emb.data
    idx = np.broadcast_to(scope_index(tuple(grid), r), (b, g_, n, n))
    coef = np.matmul(qd, np.swapaxes(e, -1, -2)[None])  # (b, g, n, r*r)
    coef = np.concatenate([coef, np.zeros(coef.shape[:-1] + (1,), dtype=coef.dtype)], axis=-1)
    band = np.take_along_axis(coef, idx, axis=-1)  # (b, g, n, n)
    with memory.workspace(band.nbytes + coef.nbytes):
        out = np.matmul(band, vd)

    def backward(gout):
        gq = gv = ge = None
        if values.requires_grad:
            gv = np.matmul(np.swapaxes(band, -1, -2), gout)
        if query.requires_grad or emb.requires_grad:
            gband = np.matmul(gout, np.swapaxes(vd, -1, -2))
            gcoef = np.zeros(coef.shape, dtype=gband.dtype)
            # Each valid offset occurs at most once per query row; only the
            # dummy out-of-window column collects duplicates, and it is dropped.
            np.put_along_axis(gcoef, idx, gband, axis=-1)
            gcoef = gcoef[..., :-1]
            if query.requires_grad:
                gq = np.matmul(gcoef, e[None])
            if emb.requires_grad:
                ge = np.matmul(np.swapaxes(gcoef, -1, -2), qd).sum(axis=0)
        return gq, gv, ge

    return Tensor.result(out, (query, values, emb), backward)


def scoped_apply(query: Tensor, values: Tensor, emb: Tensor, grid: tuple, scope: int) -> Tensor:
    """Apply position lambdas without materialising them.

    ``query``: (B, G, n, k), ``values``: (B, G, n, v), ``emb``: (G, r*r, k),
    ``grid`` = (h, w) with n = h*w. Returns (B, G, n, v) with

        out[q] = sum_{o in r x r} (query[q] . emb[o]) * values[q + o]

    where taps falling outside the grid contribute zero. Large grids are
    swept one row offset at a time so the largest temporary is O(n * r * v);
    grids of at most ``DENSE_TOKENS`` tokens use an equivalent banded
    (n x n) operator, which is much faster there.
    """
    b, g_, n, k = query.shape
    v = values.shape[-1]
    h, w = grid
    r = int(scope)
    if r < 1 or r % 2 == 0:
        raise ShapeError(f"scope r must be a positive odd integer, got {r}")
    if n != h * w or values.shape[:3] != (b, g_, n) or emb.shape != (g_, r * r, k):
        raise ShapeError(
            f"scoped_apply shape mismatch: query {query.shape}, values {values.shape}, emb {emb.shape}, grid {grid}"
        )
    if n <= DENSE_TOKENS:
        return _scoped_banded(query, values, emb, grid, r)
    half = r // 2
    e = emb.data.reshape(g_, r, r, k)
    qd = query.data
    vpad = np.zeros((b, g_, h + 2 * half, w + 2 * half, v), dtype=values.dtype)
    vpad[:, :, half:half + h, half:half + w] = values.data.reshape(b, g_, h, w, v)
    # Row offsets whose window lies entirely in the zero border contribute nothing.
    rows = [i for i in range(r) if builtins.abs(i - half) < h]
    cols = [j for j in range(r) if builtins.abs(j - half) < w]
    c0, c1 = cols[0], cols[-1] + 1
    nc = c1 - c0

    def row_window(i):
        band = vpad[:, :, i:i + h]
        win = np.lib.stride_tricks.sliding_window_view(band, w, axis=3)
        # win: (b, g, h, w_pad - w + 1, v, w) -> (b, g, h, w, cols, v)
        win = win[:, :, :, c0:c1].transpose(0, 1, 2, 5, 3, 4)
        return win.reshape(b, g_, n, nc, v)

    out = np.zeros((b, g_, n, v), dtype=qd.dtype)
    window_bytes = b * g_ * n * nc * (v + 1) * qd.itemsize
    with memory.workspace(vpad.nbytes + window_bytes):
        for i in rows:
            a = np.matmul(qd, np.swapaxes(e[:, i, c0:c1][None], -1, -2))  # (b, g, n, nc)
            win = row_window(i)
            out += np.matmul(a[..., None, :], win)[..., 0, :]

    def backward(gout):
        gq = np.zeros_like(qd) if query.requires_grad else None
        ge = np.zeros_like(e) if emb.requires_grad else None
        gvpad = np.zeros_like(vpad) if values.requires_grad else None
        if gvpad is not None:
            # gvpad[y+i, X] += sum_jj a[y, X-c0-jj, jj] * gout[y, X-c0-jj]; with the
            # jj axis flipped this becomes a diagonal of a width-nc sliding window.
            wp = w + 2 * half
            left = c0 + nc - 1
            right = 2 * half - c0
            g4 = gout.reshape(b, g_, h, w, v)
            gpad = np.pad(g4, ((0, 0), (0, 0), (0, 0), (left, right), (0, 0)))
            gwin = np.lib.stride_tricks.sliding_window_view(gpad, nc, axis=3)[:, :, :, :wp]  # (b,g,h,X,v,t)
        for i in rows:
            win = row_window(i)
            gm = np.matmul(win, gout[..., :, None])[..., 0]  # (b, g, n, nc)
            ei = e[:, i, c0:c1]  # (g, nc, k)
            if gq is not None:
                gq += np.matmul(gm, ei[None])
            if ge is not None:
                ge[:, i, c0:c1] += np.matmul(np.swapaxes(gm, -1, -2), qd).sum(axis=0)
            if gvpad is not None:
                a = np.matmul(qd, np.swapaxes(ei[None], -1, -2)).reshape(b, g_, h, w, nc)[..., ::-1]
                apad = np.pad(a, ((0, 0), (0, 0), (0, 0), (left, right), (0, 0)))
                awin = np.lib.stride_tricks.sliding_window_view(apad, nc, axis=3)[:, :, :, :wp]  # (b,g,h,X,jj,t)
                diag = np.diagonal(awin, axis1=-2, axis2=-1)  # (b,g,h,X,t)
                gvpad[:, :, i:i + h] += np.matmul(gwin, diag[..., None])[..., 0]
        gvals = None
        if gvpad is not None:
            gvals = gvpad[:, :, half:half + h, half:half + w].reshape(values.shape)
        return gq, gvals, (ge.reshape(emb.shape) if ge is not None else None)

    return Tensor.result(out, (query, values, emb), backward)
