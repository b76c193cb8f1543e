"""
Layers - forward and backward passes for the network building blocks

Tensors are float64 arrays laid out (batch, channels, height, width).
Every backward function returns exact gradients of its forward map.
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DimensionError, StateError, StatisticsError

MODES = ("train", "infer")


@dataclass
class ConvLayer:
    """3x3 kernels (out, in, 3, 3) and a per-output-channel bias"""
    kernels: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernels.ndim != 4 or self.kernels.shape[2:] != (3, 3):
            raise DimensionError(f"conv kernels must be (out, in, 3, 3), got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise DimensionError(f"bias shape {self.bias.shape} does not match {self.kernels.shape[0]} outputs")

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @classmethod
    def he_init(cls, in_channels: int, out_channels: int, rng: np.random.Generator) -> "ConvLayer":
        std = np.sqrt(2.0 / (in_channels * 9))
        return cls(rng.normal(0.0, std, size=(out_channels, in_channels, 3, 3)), np.zeros(out_channels))

    @classmethod
    def zeros(cls, in_channels: int, out_channels: int) -> "ConvLayer":
        return cls(np.zeros((out_channels, in_channels, 3, 3)), np.zeros(out_channels))


@dataclass
class BatchNormLayer:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    @classmethod
    def identity(cls, channels: int, epsilon: float = 1e-5, momentum: float = 0.9) -> "BatchNormLayer":
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels),
                   epsilon, momentum)

    @property
    def channels(self) -> int:
        return self.scale.shape[0]


@dataclass
class BatchNormCache:
    mode: str
    x_hat: np.ndarray
    inv_std: np.ndarray
    scale: np.ndarray = field(repr=False)
    shift: np.ndarray = field(repr=False)


def _check_tensor(x: np.ndarray, channels: int, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what} expects a 4D tensor, got shape {x.shape}")
    if x.shape[1] != channels:
        raise DimensionError(f"{what} expects {channels} channels, got {x.shape[1]}")


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """3x3 cross-correlation, zero padding 1, stride 1, plus bias"""
    _check_tensor(x, layer.in_channels, "conv2d")
    batch, _, height, width = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((batch, layer.out_channels, height, width))
    for i in range(3):
        for j in range(3):
            window = padded[:, :, i:i + height, j:j + width]
            out += np.einsum("nchw,oc->nohw", window, layer.kernels[:, :, i, j], optimize=True)
    out += layer.bias[np.newaxis, :, np.newaxis, np.newaxis]
    return out


def conv2d_backward(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(grad_x, grad_kernels, grad_bias)"""
    _check_tensor(x, layer.in_channels, "conv2d backward")
    batch, _, height, width = x.shape
    if grad_out.shape != (batch, layer.out_channels, height, width):
        raise DimensionError(f"grad_out shape {grad_out.shape} does not match conv output")
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    grad_padded = np.zeros_like(padded)
    grad_kernels = np.zeros_like(layer.kernels)
    for i in range(3):
        for j in range(3):
            window = padded[:, :, i:i + height, j:j + width]
            grad_kernels[:, :, i, j] = np.einsum("nohw,nchw->oc", grad_out, window, optimize=True)
            grad_padded[:, :, i:i + height, j:j + width] += np.einsum(
                "nohw,oc->nchw", grad_out, layer.kernels[:, :, i, j], optimize=True)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    return grad_padded[:, :, 1:-1, 1:-1], grad_kernels, grad_bias


def batchnorm_forward(x: np.ndarray, layer: BatchNormLayer, mode: str,
                      update_stats: bool = True) -> Tuple[np.ndarray, BatchNormCache]:
    if mode not in MODES:
        raise StateError(f"unknown batch-norm mode '{mode}'")
    _check_tensor(x, layer.channels, "batchnorm")
    axes = (0, 2, 3)
    if mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise StatisticsError("train-mode batch norm needs at least 2 values per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_stats:
            # in place: parameter dicts hold these arrays
            layer.running_mean *= layer.momentum
            layer.running_mean += (1.0 - layer.momentum) * mean
            layer.running_var *= layer.momentum
            layer.running_var += (1.0 - layer.momentum) * var
    else:
        mean = layer.running_mean
        var = layer.running_var

    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    x_hat = (x - mean[np.newaxis, :, np.newaxis, np.newaxis]) * inv_std[np.newaxis, :, np.newaxis, np.newaxis]
    y = layer.scale[np.newaxis, :, np.newaxis, np.newaxis] * x_hat + layer.shift[np.newaxis, :, np.newaxis, np.newaxis]
    return y, BatchNormCache(mode, x_hat, inv_std, layer.scale.copy(), layer.shift.copy())


def batchnorm_backward(cache: BatchNormCache, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(grad_x, grad_scale, grad_shift) of the train-mode forward"""
    if cache.mode != "train":
        raise StateError("batch-norm backward needs a train-mode cache")
    if grad_out.shape != cache.x_hat.shape:
        raise DimensionError(f"grad_out shape {grad_out.shape} does not match cache {cache.x_hat.shape}")
    axes = (0, 2, 3)
    count = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_shift = grad_out.sum(axis=axes)
    grad_scale = (grad_out * cache.x_hat).sum(axis=axes)

    grad_xhat = grad_out * cache.scale[np.newaxis, :, np.newaxis, np.newaxis]
    sum_g = grad_xhat.sum(axis=axes)[np.newaxis, :, np.newaxis, np.newaxis]
    sum_gx = (grad_xhat * cache.x_hat).sum(axis=axes)[np.newaxis, :, np.newaxis, np.newaxis]
    inv_std = cache.inv_std[np.newaxis, :, np.newaxis, np.newaxis]
    grad_x = inv_std / count * (count * grad_xhat - sum_g - cache.x_hat * sum_gx)
    return grad_x, grad_scale, grad_shift


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return grad_out * (x > 0)


def concat_forward(inputs: Sequence[np.ndarray]) -> np.ndarray:
    if not inputs:
        raise DimensionError("nothing to concatenate")
    first = inputs[0].shape
    for tensor in inputs[1:]:
        if tensor.ndim != 4 or tensor.shape[0] != first[0] or tensor.shape[2:] != first[2:]:
            raise DimensionError(f"cannot concatenate {tensor.shape} with {first}")
    return np.concatenate(inputs, axis=1)


def concat_backward(grad_out: np.ndarray, split_sizes: Sequence[int]) -> List[np.ndarray]:
    if sum(split_sizes) != grad_out.shape[1]:
        raise DimensionError(f"split sizes {list(split_sizes)} do not cover {grad_out.shape[1]} channels")
    return np.split(grad_out, np.cumsum(split_sizes)[:-1], axis=1)
