"""
Filter Bank - kernels for the nonsubsampled pyramid and directional filter bank

Pyramid: analysis lowpass is the separable B3-spline kernel, analysis
highpass its complement (delta - lowpass), both synthesis kernels are the
delta. Directional: a diamond maxflat prototype mapped to a fan filter
through the McClellan transform, paired with its complement; synthesis
kernels are again deltas. Every pair therefore sums to the identity, and
reconstruction is exact up to floating-point rounding.
"""

import hashlib
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np
from scipy.signal import convolve2d

logger = logging.getLogger(__name__)

B3_SPLINE = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

# t(w) = (cos w2 - cos w1) / 2; rows index n1, columns n2
MCCLELLAN_FAN = np.array([
    [0.0, -0.25, 0.0],
    [0.25, 0.0, 0.25],
    [0.0, -0.25, 0.0],
])

# maxflat odd polynomial: p(1) = 1, p'(t) = 35/16 (1 - t^2)^3
MAXFLAT_COEFFICIENTS = {1: 35.0 / 16.0, 3: -35.0 / 16.0, 5: 21.0 / 16.0, 7: -5.0 / 16.0}

QUINCUNX = np.array([[1, -1], [1, 1]])

# resampling matrices for the third tree stage, one per wedge of the second
SHEARS = (
    np.array([[1, 0], [-1, 1]]),
    np.array([[1, 0], [1, -1]]),
    np.array([[1, -1], [0, 1]]),
    np.array([[1, -1], [1, 0]]),
)


def delta_kernel() -> np.ndarray:
    return np.ones((1, 1))


def embed_kernel(kernel: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Centered copy of an odd-sized kernel inside a larger zero array"""
    kh, kw = kernel.shape
    out = np.zeros(shape)
    r0 = shape[0] // 2 - kh // 2
    c0 = shape[1] // 2 - kw // 2
    out[r0:r0 + kh, c0:c0 + kw] = kernel
    return out


def kernel_polynomial(base: np.ndarray, coefficients) -> np.ndarray:
    """sum_k c_k base^(*k), powers taken by 2D convolution"""
    degree = max(coefficients)
    size = degree * (base.shape[0] - 1) + 1
    total = np.zeros((size, size))
    power = delta_kernel()
    for k in range(1, degree + 1):
        power = convolve2d(power, base)
        if k in coefficients:
            total += coefficients[k] * embed_kernel(power, total.shape)
    return total


def dilate_kernel(kernel: np.ndarray, factor: int) -> np.ndarray:
    """Insert factor-1 zeros between taps (a trous upsampling)"""
    if factor == 1:
        return kernel
    kh, kw = kernel.shape
    out = np.zeros(((kh - 1) * factor + 1, (kw - 1) * factor + 1))
    out[::factor, ::factor] = kernel
    return out


def resample_kernel(kernel: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """g(M n) = f(n); the frequency response becomes F(M^T w)"""
    kh, kw = kernel.shape
    rows, cols = np.nonzero(kernel)
    if rows.size == 0:
        return np.zeros((1, 1))
    offsets = np.stack([rows - kh // 2, cols - kw // 2])
    mapped = np.asarray(matrix) @ offsets
    half = np.abs(mapped).max(axis=1)
    out = np.zeros((2 * half[0] + 1, 2 * half[1] + 1))
    out[mapped[0] + half[0], mapped[1] + half[1]] = kernel[rows, cols]
    return out


def frequency_response(kernel: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """DFT of the kernel placed with its center at the origin of a periodic grid"""
    kh, kw = kernel.shape
    padded = np.zeros(shape)
    padded[:kh, :kw] = kernel
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(padded)


@dataclass(frozen=True, eq=False)
class FilterBank:
    pyramid_lowpass_analysis: np.ndarray
    pyramid_highpass_analysis: np.ndarray
    pyramid_lowpass_synthesis: np.ndarray
    pyramid_highpass_synthesis: np.ndarray
    fan_analysis_pair: Tuple[np.ndarray, np.ndarray]
    fan_synthesis_pair: Tuple[np.ndarray, np.ndarray]
    name: str = "b3spline-maxflat7"

    def __post_init__(self):
        for kernel in self.kernels():
            if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
                raise ValueError(f"filter kernels must be 2D and odd-sized, got {kernel.shape}")
            kernel.setflags(write=False)

    def kernels(self) -> Sequence[np.ndarray]:
        return (
            self.pyramid_lowpass_analysis, self.pyramid_highpass_analysis,
            self.pyramid_lowpass_synthesis, self.pyramid_highpass_synthesis,
            *self.fan_analysis_pair, *self.fan_synthesis_pair,
        )

    @property
    def checksum(self) -> str:
        digest = hashlib.sha256(self.name.encode("utf-8"))
        for kernel in self.kernels():
            digest.update(np.asarray(kernel.shape, dtype="<u4").tobytes())
            digest.update(kernel.astype("<f8").tobytes())
        return digest.hexdigest()

    def pyramid_level(self, level: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(h0, h1, g0, g1) dilated for pyramid level >= 1"""
        factor = 2 ** (level - 1)
        return tuple(dilate_kernel(k, factor) for k in (
            self.pyramid_lowpass_analysis, self.pyramid_highpass_analysis,
            self.pyramid_lowpass_synthesis, self.pyramid_highpass_synthesis,
        ))

    def directional_stage(self, stage: int, node: int):
        """Analysis and synthesis pairs for one node of the fan-filter tree"""
        if stage == 1:
            matrix = np.eye(2, dtype=int)
        elif stage == 2:
            matrix = QUINCUNX
        elif stage == 3:
            matrix = SHEARS[node]
        else:
            raise ValueError(f"directional tree has no stage {stage}")
        analysis = tuple(resample_kernel(k, matrix) for k in self.fan_analysis_pair)
        synthesis = tuple(resample_kernel(k, matrix) for k in self.fan_synthesis_pair)
        return analysis, synthesis

    def reconstruction_error(self, grid: int = 64) -> float:
        """Worst |H0 G0 + H1 G1 - 1| over a frequency grid, pyramid and fan pairs"""
        shape = (grid, grid)
        pairs = (
            ((self.pyramid_lowpass_analysis, self.pyramid_highpass_analysis),
             (self.pyramid_lowpass_synthesis, self.pyramid_highpass_synthesis)),
            (self.fan_analysis_pair, self.fan_synthesis_pair),
        )
        worst = 0.0
        for (h0, h1), (g0, g1) in pairs:
            total = (frequency_response(h0, shape) * frequency_response(g0, shape)
                     + frequency_response(h1, shape) * frequency_response(g1, shape))
            worst = max(worst, float(np.max(np.abs(total - 1.0))))
        return worst


def fan_pair() -> Tuple[np.ndarray, np.ndarray]:
    """Fan filter passing |w2| < |w1| and its complement"""
    prototype = kernel_polynomial(MCCLELLAN_FAN, MAXFLAT_COEFFICIENTS)
    lowpass = 0.5 * prototype
    lowpass[lowpass.shape[0] // 2, lowpass.shape[1] // 2] += 0.5
    complement = -lowpass
    complement[lowpass.shape[0] // 2, lowpass.shape[1] // 2] += 1.0
    return lowpass, complement


@lru_cache(maxsize=1)
def default_filter_bank() -> FilterBank:
    h0 = np.outer(B3_SPLINE, B3_SPLINE)
    h1 = -h0
    h1[2, 2] += 1.0
    f0, f1 = fan_pair()
    bank = FilterBank(
        pyramid_lowpass_analysis=h0,
        pyramid_highpass_analysis=h1,
        pyramid_lowpass_synthesis=delta_kernel(),
        pyramid_highpass_synthesis=delta_kernel(),
        fan_analysis_pair=(f0, f1),
        fan_synthesis_pair=(delta_kernel(), delta_kernel()),
    )
    logger.debug(f"Built filter bank {bank.name} ({bank.checksum[:12]})")
    return bank
