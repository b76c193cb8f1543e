"""
Core Image - containers, patching, display windowing and WIMG file I/O

Images are plain float64 numpy arrays. A single image is (H, W); a
multi-channel stack (coefficient bands, network tensors) is (C, H, W).
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, FormatError, ParameterError

logger = logging.getLogger(__name__)

WIMG_MAGIC = b"WIMG"
WIMG_VERSION = 1
# magic, version u16, height u32, width u32, channels u32
WIMG_HEADER = struct.Struct("<4sHIII")

PathLike = Union[str, Path]


def as_image(data, name: str = "image") -> np.ndarray:
    """Validate and convert to a finite float64 2D array"""
    image = np.asarray(data, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionError(f"{name} must be 2D, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ParameterError(f"{name} contains non-finite values")
    return image


def as_stack(data, name: str = "stack") -> np.ndarray:
    """Promote a 2D image to a one-channel (1, H, W) stack"""
    stack = np.asarray(data, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[np.newaxis]
    if stack.ndim != 3:
        raise DimensionError(f"{name} must be (H, W) or (C, H, W), got shape {stack.shape}")
    return stack


@dataclass
class PatchSet:
    """Patches cut on a regular grid, row-major over grid positions"""
    patch_size: int
    stride: int
    positions: List[Tuple[int, int, int]] = field(default_factory=list)  # (source_id, row, col)
    patches: np.ndarray = field(default_factory=lambda: np.empty((0, 1, 0, 0)))

    def __len__(self) -> int:
        return len(self.positions)


def grid_positions(height: int, width: int, patch_size: int, stride: int) -> List[Tuple[int, int]]:
    """Top-left corners of all patches fully inside an H x W image"""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if patch_size < 1 or patch_size > min(height, width):
        raise DimensionError(
            f"patch size {patch_size} does not fit a {height}x{width} image"
        )
    rows = range(0, height - patch_size + 1, stride)
    cols = range(0, width - patch_size + 1, stride)
    return [(r, c) for r in rows for c in cols]


def extract_patches(stack, patch_size: int, stride: int, source_id: int = 0) -> PatchSet:
    """Cut every grid patch out of a (C, H, W) stack; partial border patches are dropped"""
    stack = as_stack(stack)
    _, height, width = stack.shape
    positions = grid_positions(height, width, patch_size, stride)

    windows = sliding_window_view(stack, (patch_size, patch_size), axis=(1, 2))
    # windows: (C, H-p+1, W-p+1, p, p)
    windows = windows[:, ::stride, ::stride]
    patches = np.ascontiguousarray(
        windows.transpose(1, 2, 0, 3, 4).reshape(len(positions), stack.shape[0], patch_size, patch_size)
    )
    return PatchSet(
        patch_size=patch_size,
        stride=stride,
        positions=[(source_id, r, c) for r, c in positions],
        patches=patches,
    )


def reassemble_patches(patch_set: PatchSet, shape: Tuple[int, int]) -> np.ndarray:
    """Paste patches back, averaging overlaps; pixels no patch covers stay 0"""
    height, width = shape
    channels = patch_set.patches.shape[1]
    total = np.zeros((channels, height, width))
    hits = np.zeros((height, width))
    size = patch_set.patch_size
    for (_, r, c), patch in zip(patch_set.positions, patch_set.patches):
        total[:, r:r + size, c:c + size] += patch
        hits[r:r + size, c:c + size] += 1.0
    covered = hits > 0
    total[:, covered] /= hits[covered]
    return total


def window_hu(image, lo: float, hi: float) -> np.ndarray:
    """Map [lo, hi] HU affinely onto 0..255, clamped, rounding half away from zero"""
    if not lo < hi:
        raise ParameterError(f"window lower bound {lo} must be below upper bound {hi}")
    image = np.asarray(image, dtype=np.float64)
    scaled = np.clip((image - lo) / (hi - lo) * 255.0, 0.0, 255.0)
    # values are non-negative after clamping, so floor(v + 0.5) rounds half away from zero
    return np.floor(scaled + 0.5).astype(np.uint8)


def write_pgm(path: PathLike, image8: np.ndarray) -> Path:
    """Write an 8-bit image as binary portable graymap (P5)"""
    image8 = np.asarray(image8)
    if image8.ndim != 2 or image8.dtype != np.uint8:
        raise DimensionError("PGM export expects a 2D uint8 image")
    path = Path(path)
    height, width = image8.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image8).tobytes())
    return path


def encode_wimg(data) -> bytes:
    stack = as_stack(data, name="WIMG payload")
    if not np.all(np.isfinite(stack)):
        raise ParameterError("WIMG payload contains non-finite values")
    channels, height, width = stack.shape
    header = WIMG_HEADER.pack(WIMG_MAGIC, WIMG_VERSION, height, width, channels)
    return header + stack.astype("<f8").tobytes()


def decode_wimg(blob: bytes) -> np.ndarray:
    """Parse WIMG bytes; one-channel files come back as (H, W)"""
    if len(blob) < WIMG_HEADER.size:
        raise FormatError("truncated header", offset=len(blob))
    magic, version, height, width, channels = WIMG_HEADER.unpack_from(blob, 0)
    if magic != WIMG_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != WIMG_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if height == 0 or width == 0 or channels == 0:
        raise FormatError(f"empty dimensions {height}x{width}x{channels}", offset=6)

    count = height * width * channels
    needed = count * 8
    if needed > np.iinfo(np.int64).max:
        raise FormatError(f"dimension overflow: {count} values", offset=6)
    payload = len(blob) - WIMG_HEADER.size
    if payload < needed:
        raise FormatError(
            f"truncated payload: {needed} bytes declared, {payload} present",
            offset=len(blob),
        )
    if payload > needed:
        raise FormatError("trailing bytes after payload", offset=WIMG_HEADER.size + needed)

    values = np.frombuffer(blob, dtype="<f8", count=count, offset=WIMG_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError("non-finite value", offset=WIMG_HEADER.size + 8 * int(bad[0]))

    stack = values.astype(np.float64).reshape(channels, height, width)
    return stack[0] if channels == 1 else stack


def save_image(path: PathLike, data) -> Path:
    path = Path(path)
    path.write_bytes(encode_wimg(data))
    logger.debug(f"Wrote {path} ({np.shape(data)})")
    return path


def load_image(path: PathLike) -> np.ndarray:
    path = Path(path)
    return decode_wimg(path.read_bytes())


def read_key_values(path: PathLike) -> Dict[str, str]:
    """Read a UTF-8 key=value file with # comments (config, sidecars)"""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing key=value file {path}", offset=0)
    values = dotenv_values(path, interpolate=False, encoding="utf-8")
    return {key: ("" if value is None else value) for key, value in values.items()}


def write_key_values(path: PathLike, mapping: Mapping[str, object], header: Optional[str] = None) -> Path:
    path = Path(path)
    lines = []
    if header:
        lines.extend(f"# {line}" for line in header.splitlines())
    for key, value in mapping.items():
        lines.append(f"{key}={value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
