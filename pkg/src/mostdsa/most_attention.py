"""Motion/structure extraction by scoped lambda cross-attention.

Queries come from each frame, keys and values from the other one. Context is
summarised into linear functions instead of attention maps:

* a content lambda ``softmax_n(K)^T V`` shared by every query of a slice, and
* position lambdas built from a learned r x r relative embedding, applied in a
  convolutional sweep so no (n x n) map is ever formed.

Structure features apply both lambdas to the queries; motion features apply
them to a learned position tensor ``P``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .config import validate_scope
from .encoder import FusedTokens
from .errors import ConfigError
from .tensor_ops import ParamStore, ShapeError, Tensor
from .tensor_ops import kernels as K


@dataclass
class MotionStructure:
    """Per-frame structure (S0, S1) and motion (M0, M1) blocks, each (N, n, v)."""

    structure: Tuple[Tensor, Tensor]
    motion: Tuple[Tensor, Tensor]
    grid: Tuple[int, int]

    @property
    def S0(self) -> Tensor:
        return self.structure[0]

    @property
    def S1(self) -> Tensor:
        return self.structure[1]

    @property
    def M0(self) -> Tensor:
        return self.motion[0]

    @property
    def M1(self) -> Tensor:
        return self.motion[1]


def init_attention(params: ParamStore, dim: int = 64, scope: int = 29, pos_freqs: int = 8, k: int = None, v: int = None) -> None:
    validate_scope(scope)
    k = k or dim
    v = v or dim
    params.linear("attn.wq", dim, k)
    params.linear("attn.wk", dim, k)
    params.linear("attn.wv", dim, v)
    params.normal("attn.emb", (scope * scope, k), std=0.02)
    params.linear("attn.pos", 4 * pos_freqs, k)


def embedding_scope(params: ParamStore) -> int:
    return int(round(np.sqrt(params["attn.emb"].shape[0])))


def position_basis(grid: Tuple[int, int], n_freqs: int, dtype=np.float32) -> np.ndarray:
    """Fixed sinusoidal features of token coordinates, shape (h*w, 4*n_freqs)."""
    h, w = grid
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    freqs = 1.0 / (10.0 ** (np.arange(n_freqs) / max(n_freqs, 1) * 2.0))
    feats = []
    for coord in (xs.ravel(), ys.ravel()):
        ang = coord[:, None] * freqs[None]
        feats.extend([np.sin(ang), np.cos(ang)])
    return np.concatenate(feats, axis=1).astype(dtype)


def cross_pair(f0: Tensor, f1: Tensor) -> Tuple[Tensor, Tensor]:
    """(concat(f0, f1), concat(f1, f0)) along the batch axis."""
    if f0.shape != f1.shape:
        raise ShapeError(f"cross_pair shapes differ: {f0.shape} vs {f1.shape}")
    return K.concat([f0, f1], axis=0), K.concat([f1, f0], axis=0)


def qkv(fa: Tensor, fa_rev: Tensor, params: ParamStore) -> Tuple[Tensor, Tensor, Tensor]:
    """Queries from the forward pairing, keys and values from the reversed one."""
    return (
        K.matmul(fa, params["attn.wq"]),
        K.matmul(fa_rev, params["attn.wk"]),
        K.matmul(fa_rev, params["attn.wv"]),
    )


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, n, c) -> (B, heads, n, c // heads)."""
    b, n, c = x.shape
    return K.transpose(K.reshape(x, (b, n, heads, c // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, g, n, c = x.shape
    return K.reshape(K.transpose(x, (0, 2, 1, 3)), (b, n, g * c))


def lambda_content(keys: Tensor, values: Tensor) -> Tensor:
    """softmax(K over tokens)^T V for (..., n, k) keys and (..., n, v) values."""
    kbar = K.softmax(keys, axis=-2)
    perm = tuple(range(keys.ndim - 2)) + (keys.ndim - 1, keys.ndim - 2)
    return K.matmul(K.transpose(kbar, perm), values)


def lambda_position(values: Tensor, emb: Tensor, grid: Tuple[int, int]) -> Tensor:
    """Explicit per-position lambdas, shape (..., n, k, v).

    lambda_p(q) = sum over the r x r neighbourhood m of outer(E[m - q], V[m]),
    zero outside the grid. Memory is O(n k v); the attention path uses
    :func:`mostdsa.tensor_ops.scoped_apply`, which never builds these.
    """
    vals = values.data if isinstance(values, Tensor) else np.asarray(values)
    e = emb.data if isinstance(emb, Tensor) else np.asarray(emb)
    rr, k = e.shape
    r = int(round(np.sqrt(rr)))
    validate_scope(r)
    h, w = grid
    lead = vals.shape[:-2]
    n, v = vals.shape[-2:]
    if n != h * w:
        raise ShapeError(f"values have {n} tokens but grid {grid} holds {h * w}")
    half = r // 2
    vg = vals.reshape(lead + (h, w, v))
    out = np.zeros(lead + (h, w, k, v), dtype=vals.dtype)
    for i in range(r):
        dy = i - half
        ys = slice(max(0, -dy), min(h, h - dy))
        for j in range(r):
            dx = j - half
            xs = slice(max(0, -dx), min(w, w - dx))
            if ys.start >= ys.stop or xs.start >= xs.stop:
                continue
            src = vg[..., ys.start + dy:ys.stop + dy, xs.start + dx:xs.stop + dx, :]
            out[..., ys, xs, :, :] += e[i * r + j][:, None] * src[..., None, :]
    return Tensor(out.reshape(lead + (n, k, v)))


def most_attention(f0: FusedTokens, f1: FusedTokens, params: ParamStore, r: int = None, heads: int = 2, pos_freqs: int = None) -> MotionStructure:
    """Structure S = Q lc + Q lp and motion M = P lc + P lp for a frame pair."""
    if r is None:
        r = embedding_scope(params)
    validate_scope(r)
    emb = params["attn.emb"]
    if emb.shape[0] != r * r:
        raise ConfigError(f"embedding covers scope {embedding_scope(params)} but r={r} was requested")
    if f0.grid != f1.grid:
        raise ShapeError(f"token grids differ: {f0.grid} vs {f1.grid}")
    t0 = f0.tokens if isinstance(f0, FusedTokens) else f0
    t1 = f1.tokens if isinstance(f1, FusedTokens) else f1
    grid = f0.grid
    fa, fa_rev = cross_pair(t0, t1)
    q, k, v = qkv(fa, fa_rev, params)
    b = fa.shape[0]
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)

    pos_w = params["attn.pos"]
    if pos_freqs is None:
        pos_freqs = pos_w.shape[0] // 4
    basis = Tensor(position_basis(grid, pos_freqs, dtype=pos_w.dtype))
    p = split_heads(K.reshape(K.matmul(basis, pos_w), (1,) + (basis.shape[0], pos_w.shape[1])), heads)
    p_rep = K.mul(p, np.ones((b, 1, 1, 1), dtype=p.dtype))

    kdim = emb.shape[1]
    emb_h = K.transpose(K.reshape(emb, (r * r, heads, kdim // heads)), (1, 0, 2))

    lam_c = lambda_content(kh, vh)
    s = K.add(K.matmul(qh, lam_c), K.scoped_apply(qh, vh, emb_h, grid, r))
    m = K.add(K.matmul(p_rep, lam_c), K.scoped_apply(p_rep, vh, emb_h, grid, r))
    s = merge_heads(s)
    m = merge_heads(m)
    n = b // 2
    return MotionStructure((s[:n], s[n:]), (m[:n], m[n:]), grid)

