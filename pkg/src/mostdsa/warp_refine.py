"""Backward warping, mask blending, the refiner UNet and the end-to-end pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .config import Config, validate_schedule
from .encoder import FusedTokens, PyramidFeatures, encode, init_encoder, pad_to_multiple
from .errors import ConfigError, UsageError
from .flow_decoder import FlowMask, estimate_flow_mask, init_fme, tokens_to_grid
from .most_attention import MotionStructure, init_attention, most_attention
from .tensor_ops import ParamStore, ShapeError, Tensor
from .tensor_ops import kernels as K

backwarp = K.backwarp


def blend(I0: Tensor, I1: Tensor, fm: FlowMask) -> Tensor:
    """mask * warp(I0, flow_t0) + (1 - mask) * warp(I1, flow_t1)."""
    return blend_warped(backwarp(I0, fm.flow_t0), backwarp(I1, fm.flow_t1), fm.mask)


def blend_warped(w0: Tensor, w1: Tensor, mask: Tensor) -> Tensor:
    return K.add(K.mul(mask, w0), K.mul(K.sub(1.0, mask), w1))


def assemble_ot(I0: Tensor, I1: Tensor, w0: Tensor, w1: Tensor, fm: FlowMask) -> Tensor:
    parts = [I0, I1, w0, w1, fm.flow, fm.mask]
    size = I0.shape[-2:]
    for p in parts:
        if p.shape[0] != I0.shape[0] or p.shape[-2:] != size:
            raise ShapeError(f"assemble_ot: shape {p.shape} does not match image {I0.shape}")
    return K.concat(parts, axis=1)


def scale_flow(flow: Tensor, size: Tuple[int, int]) -> Tensor:
    """Resize a pixel-unit flow to ``size``, rescaling its magnitude to match."""
    factor = size[1] / flow.shape[-1]
    if factor == 1:
        return flow
    return K.mul(K.resample(flow, size=size), factor)


def warp_pair(feat: Tensor, fm: FlowMask) -> Tensor:
    """Warp a (2N, C, h, w) frame-0/frame-1 feature stack toward time t;
    the two halves are returned concatenated along channels."""
    n = feat.shape[0] // 2
    size = feat.shape[-2:]
    f0 = backwarp(feat[:n], scale_flow(fm.flow_t0, size))
    f1 = backwarp(feat[n:], scale_flow(fm.flow_t1, size))
    return K.concat([f0, f1], axis=1)


def init_refiner(params: ParamStore, channels=(16, 32, 64), dim: int = 64, widths=(32, 64, 128), image_channels: int = 1) -> None:
    c0, c1, c2 = channels
    w0, w1, w2 = widths
    ot = 4 * image_channels + 5
    params.conv("ref.e0a", ot + 2 * c0, w0, 3)
    params.prelu("ref.e0a.act", w0)
    params.conv("ref.e0b", w0, w0, 3)
    params.prelu("ref.e0b.act", w0)
    params.conv("ref.e1a", w0, w1, 3)
    params.prelu("ref.e1a.act", w1)
    params.conv("ref.e1b", w1 + 2 * c1, w1, 3)
    params.prelu("ref.e1b.act", w1)
    params.conv("ref.e2a", w1, w2, 3)
    params.prelu("ref.e2a.act", w2)
    params.conv("ref.e2b", w2 + 2 * c2 + 2 * dim, w2, 3)
    params.prelu("ref.e2b.act", w2)
    params.conv("ref.d1a", w2, w1, 3)
    params.prelu("ref.d1a.act", w1)
    params.conv("ref.d1b", 2 * w1, w1, 3)
    params.prelu("ref.d1b.act", w1)
    params.conv("ref.d0a", w1, w0, 3)
    params.prelu("ref.d0a.act", w0)
    params.conv("ref.d0b", 2 * w0, w0, 3)
    params.prelu("ref.d0b.act", w0)
    params.conv("ref.out", w0, image_channels, 3, zero=True)


def _cbr(x: Tensor, params: ParamStore, name: str, stride: int = 1) -> Tensor:
    y = K.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride=stride, padding=1)
    return K.prelu(y, params[f"{name}.act"])


def refine(ot: Tensor, warped_L: Sequence[Tensor], warped_S: Tensor, fm: FlowMask, params: ParamStore) -> Tensor:
    """Residual correction from the simplified UNet.

    ``warped_L[i]`` holds both frames' warped level-i features side by side,
    ``warped_S`` both warped structure grids at quarter resolution. The flow
    and mask already travel inside ``ot``.
    """
    e0 = _cbr(K.concat([ot, warped_L[0]], axis=1), params, "ref.e0a")
    e0 = _cbr(e0, params, "ref.e0b")
    e1 = _cbr(e0, params, "ref.e1a", stride=2)
    e1 = _cbr(K.concat([e1, warped_L[1]], axis=1), params, "ref.e1b")
    e2 = _cbr(e1, params, "ref.e2a", stride=2)
    e2 = _cbr(K.concat([e2, warped_L[2], warped_S], axis=1), params, "ref.e2b")
    d1 = _cbr(K.resample(e2, 2), params, "ref.d1a")
    d1 = _cbr(K.concat([d1, e1], axis=1), params, "ref.d1b")
    d0 = _cbr(K.resample(d1, 2), params, "ref.d0a")
    d0 = _cbr(K.concat([d0, e0], axis=1), params, "ref.d0b")
    return K.conv2d(d0, params["ref.out.w"], params["ref.out.b"], padding=1)


# ---------------------------------------------------------------------------
# end-to-end
# ---------------------------------------------------------------------------

class CallCounter:
    """Counts feature-extraction passes (encoder + attention)."""

    def __init__(self):
        self.count = 0

    def reset(self) -> None:
        self.count = 0


feature_passes = CallCounter()


@dataclass
class Features:
    """Everything shared by every requested time of one frame pair."""

    I0: Tensor
    I1: Tensor
    pyramid: PyramidFeatures  # batch holds frame-0 items then frame-1 items
    ms: MotionStructure
    size: Tuple[int, int]


@dataclass
class Synthesis:
    frame: Tensor  # refined, clamped, cropped to the input size
    blend: Tensor  # mask blend of the warped inputs, cropped
    residual: Tensor
    flowmask: FlowMask
    raw: Tensor = None  # blend + residual before the clamp, cropped


def init_model(cfg: Config = None, seed: int = None, dtype=np.float32) -> ParamStore:
    """Fresh parameters for the whole network."""
    cfg = cfg or Config()
    params = ParamStore(seed=cfg.seed if seed is None else seed, dtype=dtype)
    init_encoder(params, cfg.channels, cfg.dim)
    init_attention(params, cfg.dim, cfg.scope, cfg.pos_freqs)
    init_fme(params, cfg.dim, cfg.fme_width)
    init_refiner(params, cfg.channels, cfg.dim, cfg.refiner_widths)
    return params


def _as_image(x, dtype) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    return arr.astype(dtype, copy=False)


def extract_features(I0, I1, params: ParamStore, r: int = None, heads: int = 2) -> Features:
    dtype = params.dtype
    a0 = _as_image(I0, dtype)
    a1 = _as_image(I1, dtype)
    if a0.shape != a1.shape:
        raise ShapeError(f"input frames differ in shape: {a0.shape} vs {a1.shape}")
    if a0.shape[1] != 1:
        raise ShapeError(f"expected grayscale frames, got {a0.shape[1]} channels")
    size = a0.shape[-2:]
    if isinstance(I0, Tensor) and a0.shape[-2:] == I0.shape[-2:] and size[0] % 4 == 0 and size[1] % 4 == 0:
        t0, t1 = I0, I1
    else:
        t0 = Tensor(pad_to_multiple(a0)[0])
        t1 = Tensor(pad_to_multiple(a1)[0])
    feature_passes.count += 1
    pyr, tokens = encode(K.concat([t0, t1], axis=0), params)
    n = t0.shape[0]
    f0 = FusedTokens(tokens.tokens[:n], tokens.grid, tokens.mean[:n], tokens.std[:n])
    f1 = FusedTokens(tokens.tokens[n:], tokens.grid, tokens.mean[n:], tokens.std[n:])
    ms = most_attention(f0, f1, params, r=r, heads=heads)
    return Features(t0, t1, pyr, ms, size)


def synthesize(feat: Features, t: float, params: ParamStore) -> Synthesis:
    fm = estimate_flow_mask(feat.ms, t, feat.I0, feat.I1, params)
    w0 = backwarp(feat.I0, fm.flow_t0)
    w1 = backwarp(feat.I1, fm.flow_t1)
    tilde = blend_warped(w0, w1, fm.mask)
    ot = assemble_ot(feat.I0, feat.I1, w0, w1, fm)
    warped_L = [warp_pair(level, fm) for level in feat.pyramid]
    s_grid = K.concat([tokens_to_grid(feat.ms.S0, feat.ms.grid), tokens_to_grid(feat.ms.S1, feat.ms.grid)], axis=0)
    warped_S = warp_pair(s_grid, fm)
    res = refine(ot, warped_L, warped_S, fm, params)
    raw = K.add(tilde, res)
    out = K.clamp(raw, 0.0, 1.0)
    h, w = feat.size
    if out.shape[-2:] != (h, w):
        out, raw, tilde, res = out[..., :h, :w], raw[..., :h, :w], tilde[..., :h, :w], res[..., :h, :w]
    return Synthesis(out, tilde, res, fm, raw)


def interpolate(I0, I1, sched: Sequence[float], params: ParamStore, r: int = None, heads: int = 2, details: bool = False) -> List:
    """Intermediate frames for every time in ``sched`` from one feature pass."""
    try:
        ts = validate_schedule(sched)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    feat = extract_features(I0, I1, params, r=r, heads=heads)
    results = [synthesize(feat, t, params) for t in ts]
    return results if details else [s.frame for s in results]
