"""Training objective: pixel L1, feature L1 and Gram-matrix style terms.

The feature terms use a small frozen random-convolution extractor in place of
a pretrained classification network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .tensor_ops import ShapeError, Tensor
from .tensor_ops import kernels as K


def _same_shape(pred: Tensor, target: Tensor, what: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{what}: prediction {pred.shape} and target {target.shape} differ in shape")


def l1_loss(pred: Tensor, target) -> Tensor:
    target = K.as_tensor(target, pred)
    _same_shape(pred, target, "l1_loss")
    return K.mean(K.abs(K.sub(pred, target)))


class PerceptualExtractor:
    """Three frozen conv stages: a 1x1 projection, then two stride-2 3x3 convs.

    Each stage ends in a leaky rectifier. Weights are drawn once from
    ``seed`` and marked read-only.
    """

    def __init__(self, seed: int = 1234, in_channels: int = 3, widths=(8, 16, 32), slope: float = 0.2, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.slope = slope
        self.dtype = dtype
        self.weights = []
        c_in = in_channels
        for i, c_out in enumerate(widths):
            k = 1 if i == 0 else 3
            w = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k))
            b = rng.uniform(-0.05, 0.05, size=c_out)
            w = w.astype(dtype)
            b = b.astype(dtype)
            w.flags.writeable = False
            b.flags.writeable = False
            self.weights.append((w, b))
            c_in = c_out

    @property
    def stages(self) -> int:
        return len(self.weights)

    def _replicate(self, x: Tensor) -> Tensor:
        if x.shape[1] == self.in_channels:
            return x
        if x.shape[1] != 1:
            raise ShapeError(f"extractor expects 1 or {self.in_channels} channels, got {x.shape[1]}")
        return K.concat([x] * self.in_channels, axis=1)

    def __call__(self, x: Tensor) -> List[Tensor]:
        x = self._replicate(x)
        feats = []
        for i, (w, b) in enumerate(self.weights):
            wt = Tensor(w.astype(x.dtype, copy=False))
            bt = Tensor(b.astype(x.dtype, copy=False))
            if i == 0:
                x = K.conv2d(x, wt, bt)
            else:
                x = K.conv2d(x, wt, bt, stride=2, padding=1)
            slope = Tensor(np.full(x.shape[1], self.slope, dtype=x.dtype))
            x = K.prelu(x, slope)
            feats.append(x)
        return feats


def perceptual_loss(pred: Tensor, target, px: PerceptualExtractor) -> Tensor:
    target = K.as_tensor(target, pred)
    _same_shape(pred, target, "perceptual_loss")
    total = None
    for fp, ft in zip(px(pred), px(target)):
        term = K.mean(K.abs(K.sub(fp, ft.detach())))
        total = term if total is None else K.add(total, term)
    return total


def gram(feat: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C, C) auto-correlation normalised by C * H * W."""
    n, c, h, w = feat.shape
    flat = K.reshape(feat, (n, c, h * w))
    g = K.matmul(flat, K.transpose(flat, (0, 2, 1)))
    return K.mul(g, 1.0 / (c * h * w))


def style_loss(pred: Tensor, target, px: PerceptualExtractor) -> Tensor:
    target = K.as_tensor(target, pred)
    _same_shape(pred, target, "style_loss")
    total = None
    n = pred.shape[0]
    for fp, ft in zip(px(pred), px(target)):
        d = K.sub(gram(fp), gram(ft.detach()))
        term = K.mul(K.sum(K.mul(d, d)), 1.0 / n)
        total = term if total is None else K.add(total, term)
    return total


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0
    w_perceptual: float = 1.0
    w_style: float = 0.0

    def __post_init__(self):
        for name in ("w1", "w_perceptual", "w_style"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")

    @classmethod
    def for_epoch(cls, epoch: int) -> "LossWeights":
        if epoch < 0:
            raise ValueError(f"epoch must be >= 0, got {epoch}")
        return cls(1.0, 1.0, 0.0) if epoch == 0 else cls(1.0, 0.25, 40.0)

    def scaled(self, c: float) -> "LossWeights":
        return LossWeights(self.w1 * c, self.w_perceptual * c, self.w_style * c)


def combined_loss(pred: Tensor, target, epoch: int, px: PerceptualExtractor, weights: LossWeights = None) -> Tensor:
    """Weighted pixel + feature + style loss; zero-weight terms are skipped."""
    weights = weights or LossWeights.for_epoch(epoch)
    target = K.as_tensor(target, pred)
    total = K.mul(l1_loss(pred, target), weights.w1)
    if weights.w_perceptual:
        total = K.add(total, K.mul(perceptual_loss(pred, target, px), weights.w_perceptual))
    if weights.w_style:
        total = K.add(total, K.mul(style_loss(pred, target, px), weights.w_style))
    return total
