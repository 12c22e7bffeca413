"""Numeric core: tensors, differentiable kernels, parameters, gradient checks."""

from . import kernels
from .gradcheck import GradCheckReport, check_input_grad, grad_check, relative_error
from .kernels import (
    abs,
    add,
    backwarp,
    bilinear_matrix,
    clamp,
    concat,
    conv2d,
    conv_output_size,
    div,
    matmul,
    mean,
    mul,
    pixel_shuffle,
    pixel_unshuffle,
    prelu,
    resample,
    reshape,
    scoped_apply,
    sigmoid,
    slice,
    softmax,
    standardize,
    sub,
    sum,
    transpose,
)
from .params import ParamStore
from .tensor import MemoryTracker, ShapeError, Tensor, grad_enabled, memory, no_grad
