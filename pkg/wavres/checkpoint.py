"""
WRN1 checkpoints

Layout (little endian):
    b"WRN1" | u16 version | u32 text length | UTF-8 key=value text
    | per array in declaration order: u32 count, count x f8
    | u32 CRC32 of every preceding byte
The text block holds the topology (net.*) and any run metadata
(train.*, nsct.*) needed to use the weights.
"""

import io
import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

from .errors import ConfigError, FormatError
from .wavresnet import TopologyConfig, WavResNet

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"WRN1"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_COUNT = struct.Struct("<I")


def encode_checkpoint(network: WavResNet, metadata: Optional[Mapping[str, object]] = None) -> bytes:
    text = network.topology.to_text()
    for key, value in (metadata or {}).items():
        if key.startswith("net."):
            raise ConfigError(f"metadata key {key} collides with the topology block")
        text += f"{key}={value}\n"
    encoded = text.encode("utf-8")

    chunks = [_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(encoded)), encoded]
    for array in network.parameters().values():
        chunks.append(_COUNT.pack(array.size))
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    body = b"".join(chunks)
    return body + _COUNT.pack(zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> Tuple[WavResNet, Dict[str, str]]:
    if len(blob) < _PREFIX.size + _COUNT.size:
        raise FormatError("truncated checkpoint", offset=len(blob))
    magic, version, text_length = _PREFIX.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)

    body_end = len(blob) - _COUNT.size
    (stored_crc,) = _COUNT.unpack_from(blob, body_end)
    if zlib.crc32(blob[:body_end]) & 0xFFFFFFFF != stored_crc:
        raise FormatError("CRC mismatch", offset=body_end)

    offset = _PREFIX.size
    if offset + text_length > body_end:
        raise FormatError("truncated topology block", offset=offset)
    try:
        text = blob[offset:offset + text_length].decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError("topology block is not UTF-8", offset=offset + e.start) from e
    offset += text_length

    values = {k: v for k, v in dotenv_values(stream=io.StringIO(text), interpolate=False).items()
              if v is not None}
    network = WavResNet(TopologyConfig.from_mapping(values), initialize=False)

    arrays = {}
    for name, target in network.parameters().items():
        if offset + _COUNT.size > body_end:
            raise FormatError(f"missing array {name}", offset=offset)
        (count,) = _COUNT.unpack_from(blob, offset)
        if count != target.size:
            raise FormatError(f"{name}: {count} values stored, topology needs {target.size}", offset=offset)
        offset += _COUNT.size
        if offset + 8 * count > body_end:
            raise FormatError(f"truncated array {name}", offset=offset)
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
    if offset != body_end:
        raise FormatError("trailing bytes before CRC", offset=offset)

    network.load_arrays(arrays)
    metadata = {k: v for k, v in values.items() if not k.startswith("net.")}
    return network, metadata


def save_checkpoint(path, network: WavResNet, metadata: Optional[Mapping[str, object]] = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(network, metadata))
    logger.info(f"Checkpoint saved to {path}")
    return path


def load_checkpoint(path) -> Tuple[WavResNet, Dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found")
    return decode_checkpoint(path.read_bytes())
