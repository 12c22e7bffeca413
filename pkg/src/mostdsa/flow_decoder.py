"""Time mapping of motion features and the flow/mask estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .config import validate_schedule
from .errors import ConfigError, UsageError
from .most_attention import MotionStructure
from .tensor_ops import ParamStore, Tensor
from .tensor_ops import kernels as K

FME_LAYERS = 4


@dataclass
class FlowMask:
    """Flow (N, 4, H, W): (u, v) toward frame 0 then frame 1, in pixels.
    Mask (N, 1, H, W) in (0, 1): blend weight of the frame-0 warp."""

    flow: Tensor
    mask: Tensor
    t: float

    @property
    def flow_t0(self) -> Tensor:
        return self.flow[:, 0:2]

    @property
    def flow_t1(self) -> Tensor:
        return self.flow[:, 2:4]


def check_time(t: float) -> float:
    t = float(t)
    if not 0.0 < t < 1.0:
        raise UsageError(f"time t={t} must lie strictly between 0 and 1")
    return t


def init_fme(params: ParamStore, dim: int = 64, width: int = 64, image_channels: int = 1) -> None:
    params.conv("fme.c0", dim + 2 * image_channels, width, 3)
    params.prelu("fme.a0", width)
    for i in range(1, FME_LAYERS):
        params.conv(f"fme.c{i}", width, width, 3)
        params.prelu(f"fme.a{i}", width)
    params.conv("fme.head", width, 5, 1, zero=True)


def tokens_to_grid(x: Tensor, grid: Tuple[int, int]) -> Tensor:
    """(N, n, c) -> (N, c, h, w)."""
    n, _, c = x.shape
    h, w = grid
    return K.reshape(K.transpose(x, (0, 2, 1)), (n, c, h, w))


def map_motion(ms: MotionStructure, t: float) -> Tuple[Tensor, Tensor]:
    """(t * M0, (1 - t) * M1)."""
    t = check_time(t)
    return K.mul(ms.M0, t), K.mul(ms.M1, 1.0 - t)


def estimate_flow_mask(ms: MotionStructure, t: float, I0: Tensor, I1: Tensor, params: ParamStore) -> FlowMask:
    m0t, m1t = map_motion(ms, t)
    h, w = ms.grid
    if I0.shape[-2:] != (4 * h, 4 * w):
        raise ConfigError(f"token grid {ms.grid} inconsistent with image size {I0.shape[-2:]}")
    part_a = tokens_to_grid(K.concat([m0t, m1t, ms.S0, ms.S1], axis=2), ms.grid)
    part_a = K.pixel_shuffle(part_a, 2)
    part_b = K.resample(K.concat([I0, I1], axis=1), 0.5)
    x = K.concat([part_a, part_b], axis=1)
    for i in range(FME_LAYERS):
        x = K.conv2d(x, params[f"fme.c{i}.w"], params[f"fme.c{i}.b"], padding=1)
        x = K.prelu(x, params[f"fme.a{i}"])
    x = K.resample(x, 2)
    out = K.conv2d(x, params["fme.head.w"], params["fme.head.b"])
    return FlowMask(out[:, 0:4], K.sigmoid(out[:, 4:5]), t)


def decode_schedule(ms: MotionStructure, sched: Sequence[float], I0: Tensor, I1: Tensor, params: ParamStore) -> List[FlowMask]:
    """One :class:`FlowMask` per time, all reusing the same ``ms``."""
    try:
        ts = validate_schedule(sched)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return [estimate_flow_mask(ms, t, I0, I1, params) for t in ts]
