"""
Nonsubsampled contourlet transform (T), its inverse (T-dagger) and the
residual label transform S(Y) = T(Y) - T(X).

All convolutions are periodic and computed in the Fourier domain, so every
band commutes exactly with circular shifts of the input.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core_image import as_image, load_image, read_key_values, save_image, write_key_values
from .errors import DimensionError, FormatError, ParameterError
from .filters import FilterBank, default_filter_bank, frequency_response

logger = logging.getLogger(__name__)

DIRECTION_COUNTS = (0, 1, 2, 4, 8)


@dataclass(frozen=True)
class DecompositionSpec:
    """Pyramid depth and directional split per level, fine to coarse.

    A direction count of 0 or 1 keeps that level's bandpass undivided; it
    still contributes one band.
    """
    levels: int = 4
    directions: Tuple[int, ...] = (4, 4, 4, 2)
    boundary: str = "periodic"

    def validate(self) -> "DecompositionSpec":
        if self.levels < 1:
            raise ParameterError(f"levels must be >= 1, got {self.levels}")
        if len(self.directions) != self.levels:
            raise ParameterError(
                f"{len(self.directions)} direction counts given for {self.levels} levels"
            )
        for count in self.directions:
            if count not in DIRECTION_COUNTS:
                raise ParameterError(f"direction count {count} not in {DIRECTION_COUNTS}")
        if self.boundary != "periodic":
            raise ParameterError(f"unsupported boundary '{self.boundary}'")
        return self

    @property
    def n_bands(self) -> int:
        return 1 + sum(max(count, 1) for count in self.directions)

    def band_layout(self) -> List[Tuple[int, int]]:
        """(level, direction) per band; the lowpass is (0, 0)"""
        layout = [(0, 0)]
        for level, count in enumerate(self.directions, start=1):
            layout.extend((level, d) for d in range(max(count, 1)))
        return layout

    def to_mapping(self) -> Dict[str, object]:
        return {
            "nsct.levels": self.levels,
            "nsct.directions": ",".join(str(d) for d in self.directions),
            "nsct.boundary": self.boundary,
        }

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "DecompositionSpec":
        try:
            levels = int(mapping.get("nsct.levels", 4))
            directions = tuple(int(d) for d in str(mapping.get("nsct.directions", "4,4,4,2")).split(","))
        except ValueError as e:
            raise ParameterError(f"bad decomposition spec: {e}") from e
        return cls(levels, directions, mapping.get("nsct.boundary", "periodic")).validate()


@dataclass
class CoeffStack:
    """Undecimated bands, (n_bands, H, W), ordered [lowpass, level 1 directions, ...]"""
    bands: np.ndarray
    spec: DecompositionSpec

    def __post_init__(self):
        self.bands = np.asarray(self.bands, dtype=np.float64)
        if self.bands.ndim != 3:
            raise DimensionError(f"coefficient stack must be 3D, got shape {self.bands.shape}")
        if self.bands.shape[0] != self.spec.n_bands:
            raise DimensionError(
                f"stack has {self.bands.shape[0]} bands, spec expects {self.spec.n_bands}"
            )

    @property
    def lowpass(self) -> np.ndarray:
        return self.bands[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bands.shape[1:]

    def __sub__(self, other: "CoeffStack") -> "CoeffStack":
        if other.spec != self.spec or other.bands.shape != self.bands.shape:
            raise DimensionError("coefficient stacks differ in spec or size")
        return CoeffStack(self.bands - other.bands, self.spec)

    def __add__(self, other: "CoeffStack") -> "CoeffStack":
        if other.spec != self.spec or other.bands.shape != self.bands.shape:
            raise DimensionError("coefficient stacks differ in spec or size")
        return CoeffStack(self.bands + other.bands, self.spec)

    def save(self, path, bank: Optional[FilterBank] = None) -> Path:
        bank = bank or default_filter_bank()
        path = save_image(path, self.bands)
        mapping = dict(self.spec.to_mapping())
        mapping["nsct.filter_bank"] = bank.name
        mapping["nsct.filter_checksum"] = bank.checksum
        write_key_values(Path(path).with_suffix(".spec"), mapping, header="coefficient stack layout")
        return path

    @classmethod
    def load(cls, path, bank: Optional[FilterBank] = None) -> "CoeffStack":
        bank = bank or default_filter_bank()
        mapping = read_key_values(Path(path).with_suffix(".spec"))
        checksum = mapping.get("nsct.filter_checksum", "")
        if checksum != bank.checksum:
            raise FormatError(f"filter checksum {checksum[:12]}... does not match bank {bank.name}", offset=0)
        spec = DecompositionSpec.from_mapping(mapping)
        bands = load_image(path)
        if bands.ndim == 2:
            bands = bands[np.newaxis]
        return cls(bands, spec)


def periodic_convolve(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Circular convolution with the kernel centered at the origin"""
    height, width = image.shape
    if kernel.shape[0] > height or kernel.shape[1] > width:
        raise DimensionError(
            f"image {height}x{width} is smaller than kernel support {kernel.shape[0]}x{kernel.shape[1]}"
        )
    if kernel.shape == (1, 1):
        return image * kernel[0, 0]
    response = frequency_response(kernel, (height, width))
    return np.real(np.fft.ifft2(np.fft.fft2(image) * response))


def nsp_analyze(image, levels: int, bank: Optional[FilterBank] = None) -> Tuple[np.ndarray, List[np.ndarray]]:
    """A trous pyramid: returns (lowpass, [bandpass level 1 .. levels]), all full size"""
    if levels < 1:
        raise ParameterError(f"levels must be >= 1, got {levels}")
    bank = bank or default_filter_bank()
    low = as_image(image)
    bands = []
    for level in range(1, levels + 1):
        h0, h1, _, _ = bank.pyramid_level(level)
        bands.append(periodic_convolve(low, h1))
        low = periodic_convolve(low, h0)
    return low, bands


def nsp_synthesize(lowpass, bandpass: Sequence[np.ndarray], bank: Optional[FilterBank] = None) -> np.ndarray:
    bank = bank or default_filter_bank()
    low = np.asarray(lowpass, dtype=np.float64)
    for band in bandpass:
        if np.shape(band) != low.shape:
            raise DimensionError(f"band shape {np.shape(band)} does not match lowpass {low.shape}")
    for level in range(len(bandpass), 0, -1):
        _, _, g0, g1 = bank.pyramid_level(level)
        low = periodic_convolve(low, g0) + periodic_convolve(np.asarray(bandpass[level - 1], dtype=np.float64), g1)
    return low


def _tree_depth(n_directions: int) -> int:
    if n_directions not in (2, 4, 8):
        raise ParameterError(f"directional filter bank supports 2, 4 or 8 directions, got {n_directions}")
    return {2: 1, 4: 2, 8: 3}[n_directions]


def nsdfb_analyze(band, n_directions: int, bank: Optional[FilterBank] = None) -> List[np.ndarray]:
    """Binary tree of undecimated fan-filter splits"""
    depth = _tree_depth(n_directions)
    bank = bank or default_filter_bank()
    channels = [as_image(band)]
    for stage in range(1, depth + 1):
        split = []
        for node, channel in enumerate(channels):
            (f0, f1), _ = bank.directional_stage(stage, node)
            split.append(periodic_convolve(channel, f0))
            split.append(periodic_convolve(channel, f1))
        channels = split
    return channels


def nsdfb_synthesize(channels: Sequence[np.ndarray], bank: Optional[FilterBank] = None) -> np.ndarray:
    depth = _tree_depth(len(channels))
    bank = bank or default_filter_bank()
    shape = np.shape(channels[0])
    if any(np.shape(c) != shape for c in channels):
        raise DimensionError("directional channels differ in size")
    merged = [np.asarray(c, dtype=np.float64) for c in channels]
    for stage in range(depth, 0, -1):
        parents = []
        for node in range(len(merged) // 2):
            _, (d0, d1) = bank.directional_stage(stage, node)
            parents.append(periodic_convolve(merged[2 * node], d0)
                           + periodic_convolve(merged[2 * node + 1], d1))
        merged = parents
    return merged[0]


def nsct_forward(image, spec: Optional[DecompositionSpec] = None,
                 bank: Optional[FilterBank] = None) -> CoeffStack:
    spec = (spec or DecompositionSpec()).validate()
    bank = bank or default_filter_bank()
    lowpass, bandpass = nsp_analyze(image, spec.levels, bank)
    bands = [lowpass]
    for band, count in zip(bandpass, spec.directions):
        if count <= 1:
            bands.append(band)
        else:
            bands.extend(nsdfb_analyze(band, count, bank))
    return CoeffStack(np.stack(bands), spec)


def nsct_inverse(stack: CoeffStack, bank: Optional[FilterBank] = None) -> np.ndarray:
    bank = bank or default_filter_bank()
    spec = stack.spec.validate()
    if stack.bands.shape[0] != spec.n_bands:
        raise DimensionError(f"stack has {stack.bands.shape[0]} bands, spec expects {spec.n_bands}")
    bandpass = []
    index = 1
    for count in spec.directions:
        width = max(count, 1)
        group = stack.bands[index:index + width]
        bandpass.append(group[0] if count <= 1 else nsdfb_synthesize(list(group), bank))
        index += width
    return nsp_synthesize(stack.bands[0], bandpass, bank)


def residual_label(routine, quarter, spec: Optional[DecompositionSpec] = None,
                   bank: Optional[FilterBank] = None) -> CoeffStack:
    """S(Y) = T(Y) - T(X) for a routine-dose Y and quarter-dose X"""
    routine = as_image(routine, "routine image")
    quarter = as_image(quarter, "quarter image")
    if routine.shape != quarter.shape:
        raise DimensionError(f"routine {routine.shape} and quarter {quarter.shape} differ in size")
    return nsct_forward(routine, spec, bank) - nsct_forward(quarter, spec, bank)


def roundtrip_error(image, spec: Optional[DecompositionSpec] = None,
                    bank: Optional[FilterBank] = None) -> float:
    """||x - T-dagger(T(x))|| / ||x||"""
    image = as_image(image)
    restored = nsct_inverse(nsct_forward(image, spec, bank), bank)
    norm = np.linalg.norm(image)
    error = np.linalg.norm(image - restored)
    return float(error / norm) if norm > 0 else float(error)
