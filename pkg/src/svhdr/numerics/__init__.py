"""Tensor type, differentiable primitives and the gradient checker."""
from .gradcheck import GradCheckError, directional_grad_check, grad_check
from .ops import (bilinear_sample, clamp_min, conv2d, crop, deform_conv2d, gelu, layer_norm, linear,
                  log1p, pad_spatial, pixel_shuffle, roll, softmax, sqrt, square, window_merge,
                  window_partition)
from .tensor import ShapeError, Tensor, as_tensor, concat, matmul, no_grad, reshape, split, stack, transpose
