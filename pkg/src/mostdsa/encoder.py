"""Multi-scale feature extraction and cross-scale fusion into attention tokens."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ConfigError
from .tensor_ops import ParamStore, Tensor
from .tensor_ops import kernels as K

# Token activations are small at init (std ~1e-2), so a LayerNorm-style 1e-5
# would visibly shrink the standardized variance.
TOKEN_EPS = 1e-10


@dataclass
class PyramidFeatures:
    """Levels at full, half and quarter resolution (c0, c1, c2 channels)."""

    levels: Tuple[Tensor, Tensor, Tensor]

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    def __iter__(self):
        return iter(self.levels)


@dataclass
class FusedTokens:
    """(batch, n, d) token block on an (h, w) grid at quarter resolution."""

    tokens: Tensor
    grid: Tuple[int, int]
    mean: np.ndarray
    std: np.ndarray

    @property
    def shape(self):
        return self.tokens.shape


def branch_count(level_index: int) -> int:
    """Atrous branches for fusion index i: max(1, 2**(i-1)) -> 1, 1, 2."""
    return max(1, 2 ** (level_index - 1))


def init_encoder(params: ParamStore, channels=(16, 32, 64), dim: int = 64, in_channels: int = 1) -> None:
    c0, c1, c2 = channels
    params.conv("enc.h0.conv0", in_channels, c0, 3)
    params.prelu("enc.h0.act0", c0)
    params.conv("enc.h0.conv1", c0, c0, 3)
    params.prelu("enc.h0.act1", c0)
    for lvl, (cin, cout) in enumerate(((c0, c1), (c1, c2)), start=1):
        params.conv(f"enc.d{lvl}.down", cin, cout, 3)
        params.prelu(f"enc.d{lvl}.act_down", cout)
        params.conv(f"enc.d{lvl}.conv0", cout, cout, 3)
        params.prelu(f"enc.d{lvl}.act0", cout)
        params.conv(f"enc.d{lvl}.conv1", cout, cout, 3)
        params.prelu(f"enc.d{lvl}.act1", cout)
    fused = 0
    for i in range(3):
        c = channels[2 - i]
        for nb in range(1, branch_count(i) + 1):
            params.conv(f"enc.fuse{i}.a{nb}", c, c, 3)
            fused += c
    params.conv("enc.proj", fused, dim, 1)
    params.add("enc.norm.scale", np.ones(dim))
    params.add("enc.norm.shift", np.zeros(dim))


def _conv_act(x: Tensor, params: ParamStore, conv: str, act: str, stride: int = 1) -> Tensor:
    y = K.conv2d(x, params[f"{conv}.w"], params[f"{conv}.b"], stride=stride, padding=1)
    return K.prelu(y, params[act])


def _h_stack(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    x = _conv_act(x, params, f"{prefix}.conv0", f"{prefix}.act0")
    return _conv_act(x, params, f"{prefix}.conv1", f"{prefix}.act1")


def pad_to_multiple(img: np.ndarray, multiple: int = 4) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Zero-pad the trailing two axes up to ``multiple``; returns the original size."""
    h, w = img.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
        img = np.pad(img, pad)
    return img, (h, w)


def extract_pyramid(frame: Tensor, params: ParamStore) -> PyramidFeatures:
    """Three-level feature pyramid of an (N, 1, H, W) frame batch."""
    h, w = frame.shape[-2:]
    if h % 4 or w % 4:
        raise ConfigError(f"frame size {h}x{w} is not a multiple of 4; pad with pad_to_multiple first")
    l0 = _h_stack(frame, params, "enc.h0")
    levels = [l0]
    for lvl in (1, 2):
        x = _conv_act(levels[-1], params, f"enc.d{lvl}.down", f"enc.d{lvl}.act_down", stride=2)
        levels.append(_h_stack(x, params, f"enc.d{lvl}"))
    return PyramidFeatures(tuple(levels))


def fuse_level(level: Tensor, level_index: int, params: ParamStore) -> Tensor:
    """Atrous branches for fusion index ``i`` (counted from the coarsest level).

    Branch n uses kernel 3, stride 2**i and padding = dilation = n, so index 0
    keeps the quarter-resolution level as is and index 2 reduces the full
    resolution level by 4. Outputs are concatenated along channels.
    """
    if level_index not in (0, 1, 2):
        raise ConfigError(f"level_index must be 0, 1 or 2, got {level_index}")
    stride = 2 ** level_index
    outs = []
    for nb in range(1, branch_count(level_index) + 1):
        name = f"enc.fuse{level_index}.a{nb}"
        outs.append(K.conv2d(level, params[f"{name}.w"], params[f"{name}.b"], stride=stride, padding=nb, dilation=nb))
    return outs[0] if len(outs) == 1 else K.concat(outs, axis=1)


def fuse_frame(pyr: PyramidFeatures, params: ParamStore) -> FusedTokens:
    fused = [fuse_level(pyr[2 - i], i, params) for i in range(3)]
    x = K.concat(fused, axis=1)
    x = K.conv2d(x, params["enc.proj.w"], params["enc.proj.b"])
    n, d, h, w = x.shape
    tokens = K.transpose(K.reshape(x, (n, d, h * w)), (0, 2, 1))
    raw = tokens.data
    mean = raw.mean(axis=-1)
    std = raw.std(axis=-1)
    normed = K.standardize(tokens, axis=-1, eps=TOKEN_EPS)
    out = K.add(K.mul(normed, params["enc.norm.scale"]), params["enc.norm.shift"])
    return FusedTokens(out, (h, w), mean, std)


def encode(frames: Tensor, params: ParamStore) -> Tuple[PyramidFeatures, FusedTokens]:
    pyr = extract_pyramid(frames, params)
    return pyr, fuse_frame(pyr, params)
