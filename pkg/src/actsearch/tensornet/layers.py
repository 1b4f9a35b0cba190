"""Layer specs and the im2col patch machinery shared by forward, backward and K-FAC.

Image tensors are channels-last: ``(batch, height, width, channels)``.
Patch columns are ordered ``(kernel_row, kernel_col, channel)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    bias: bool = True

    weighted = True

    def fan_in(self) -> int:
        return self.in_features

    def weight_shape(self) -> tuple[int, int]:
        return (self.out_features, self.in_features)

    def n_outputs(self) -> int:
        return self.out_features


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    bias: bool = True

    weighted = True

    def fan_in(self) -> int:
        return self.in_ch * self.kernel * self.kernel

    def weight_shape(self) -> tuple[int, int]:
        return (self.out_ch, self.kernel * self.kernel * self.in_ch)

    def n_outputs(self) -> int:
        return self.out_ch


@dataclass(frozen=True)
class Depthwise2D:
    ch: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    bias: bool = True

    weighted = True

    def fan_in(self) -> int:
        return self.kernel * self.kernel

    def weight_shape(self) -> tuple[int, int]:
        return (self.ch, self.kernel * self.kernel)

    def n_outputs(self) -> int:
        return self.ch


@dataclass(frozen=True)
class GlobalAvgPool:
    weighted = False


@dataclass(frozen=True)
class Flatten:
    weighted = False


@dataclass(frozen=True)
class SoftmaxHead:
    weighted = False


LAYER_TYPES = {
    "dense": Dense,
    "conv2d": Conv2D,
    "depthwise2d": Depthwise2D,
    "global_avg_pool": GlobalAvgPool,
    "flatten": Flatten,
    "softmax_head": SoftmaxHead,
}
LAYER_NAMES = {cls: name for name, cls in LAYER_TYPES.items()}


def layer_to_dict(layer) -> dict:
    return {"type": LAYER_NAMES[type(layer)], **asdict(layer)}


def layer_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown layer type {kind!r}") from None
    return cls(**d)


def param_count(layer) -> int:
    """Weights plus biases of a weighted layer."""
    out, fan = layer.weight_shape()
    return out * fan + (out if layer.bias else 0)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(a: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    if a.ndim != 4:
        raise ValueError(f"expected a (batch, height, width, channels) tensor, got shape {a.shape}")
    h, w = a.shape[1:3]
    if h + 2 * padding < kernel or w + 2 * padding < kernel:
        raise ValueError(f"kernel {kernel} does not fit input {h}x{w} with padding {padding}")
    if padding:
        a = np.pad(a, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(a, (kernel, kernel), axis=(1, 2))  # (M, H', W', J, k, k)
    return win[:, ::stride, ::stride]


def expand_patches(a: np.ndarray, kernel: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Standard-convolution expansion: ``(M*|T|, k*k*J)`` rows of flattened receptive fields."""
    win = _windows(a, kernel, stride, padding)
    m, ho, wo, j = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(m * ho * wo, kernel * kernel * j)


def expand_patches_depthwise(a: np.ndarray, kernel: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Depthwise expansion: ``(M*|T|*J, k*k)`` rows, one per (sample, location, channel)."""
    win = _windows(a, kernel, stride, padding)
    m, ho, wo, j = win.shape[:4]
    return win.reshape(m * ho * wo * j, kernel * kernel)


def fold_patches(
    dp: np.ndarray, input_shape: tuple[int, ...], kernel: int, stride: int, padding: int
) -> np.ndarray:
    """Adjoint of :func:`expand_patches`: scatter-add patch gradients back to the input."""
    m, h, w, j = input_shape
    ho = conv_output_size(h, kernel, stride, padding)
    wo = conv_output_size(w, kernel, stride, padding)
    dp = dp.reshape(m, ho, wo, kernel, kernel, j)
    out = np.zeros((m, h + 2 * padding, w + 2 * padding, j))
    for dh in range(kernel):
        for dw in range(kernel):
            out[:, dh:dh + stride * ho:stride, dw:dw + stride * wo:stride, :] += dp[:, :, :, dh, dw, :]
    return out[:, padding:padding + h, padding:padding + w, :]


def fold_patches_depthwise(
    dp: np.ndarray, input_shape: tuple[int, ...], kernel: int, stride: int, padding: int
) -> np.ndarray:
    m, h, w, j = input_shape
    ho = conv_output_size(h, kernel, stride, padding)
    wo = conv_output_size(w, kernel, stride, padding)
    dp = dp.reshape(m, ho, wo, j, kernel, kernel).transpose(0, 1, 2, 4, 5, 3)
    return fold_patches(dp, input_shape, kernel, stride, padding)
