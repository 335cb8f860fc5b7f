"""Tensor conventions and small helpers shared by all kernels.

A tensor is a C-contiguous float32 numpy array. Image tensors are laid out
[batch, channels, height, width]; token matrices are [tokens, channels].
Kernels never return views of their inputs, so callers may treat results as
freshly owned buffers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

DTYPE = np.float32


def tensor(data, shape=None) -> np.ndarray:
    """Coerce data to a C-contiguous float32 array, optionally reshaped."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=DTYPE)


def check_ndim(x: np.ndarray, ndim: int, what: str) -> None:
    if x.ndim != ndim:
        raise ShapeError(f"{what}: expected {ndim}-d tensor, got shape {tuple(x.shape)}")


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-d convolution: square or rectangular kernel, uniform
    stride/padding, channel groups (groups == in_channels is depthwise)."""

    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigError(f"kernel extents must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        return oh, ow


def conv_spec(kernel: int, stride: int = 1, padding: int = 0, groups: int = 1) -> ConvSpec:
    """Square-kernel convenience constructor."""
    return ConvSpec(kernel, kernel, stride=stride, padding=padding, groups=groups)
