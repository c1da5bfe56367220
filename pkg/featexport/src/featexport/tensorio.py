"""Writer for the "FFLD" tensor exchange layout.

Byte layout (little-endian): magic "FFLD"; u16 version = 1; u16 reserved 0;
u32 D, H, W; f32 stride, offsetX, offsetY; f32 scale; u16 name length;
UTF-8 name; then D*H*W f32 values, D-major. This mirrors the consumer's
documented format so files interoperate bit-exactly.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FFLD"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIIffffH")


@dataclass(frozen=True)
class TensorHeader:
    dim: int
    grid_h: int
    grid_w: int
    stride: float
    offset: tuple[float, float]
    scale: float
    name: str


def pack_tensor(
    data: np.ndarray,
    stride: float,
    offset: tuple[float, float],
    scale: float,
    name: str,
) -> bytes:
    """`data` is (D, H, W); geometry fields are rounded to f32 like the header."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError(f"expected (D, H, W) activations, got {data.shape}")
    encoded = name.encode("utf-8")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        0,
        data.shape[0],
        data.shape[1],
        data.shape[2],
        stride,
        offset[0],
        offset[1],
        scale,
        len(encoded),
    )
    return header + encoded + data.tobytes()


def write_tensor_file(path, data: np.ndarray, stride, offset, scale, name) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(pack_tensor(data, stride, offset, scale, name))
    os.replace(tmp, path)


def read_header(path) -> TensorHeader:
    buf = Path(path).read_bytes()[: _HEADER.size]
    magic, version, _, d, h, w, stride, ox, oy, scale, name_len = _HEADER.unpack(buf)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"not a version-{VERSION} FFLD file: {path}")
    name = Path(path).read_bytes()[_HEADER.size : _HEADER.size + name_len].decode("utf-8")
    return TensorHeader(
        dim=d, grid_h=h, grid_w=w, stride=stride, offset=(ox, oy), scale=scale, name=name
    )
