"""Dense descriptor fields, region masks, and the "FFLD" tensor exchange format.

A FeatureField is a grid of D-dimensional local descriptors plus the affine
geometry that maps grid cells to pixel centers of the (possibly rescaled)
image they were computed on:

    center(ix, iy) = (offset_x + stride * ix, offset_y + stride * iy)

`scale` records the rescale factor relative to the original image, so cell
centers can be mapped back to original-resolution pixels for region pooling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import BadMagicError, TruncatedError, UnsupportedVersionError

TENSOR_MAGIC = b"FFLD"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sHHIIIffffH")  # magic ver reserved D H W stride ox oy scale namelen


def _f32(x: float) -> float:
    # geometry is serialized as f32; coerce at construction so round trips are exact
    return float(np.float32(x))


@dataclass(frozen=True)
class FeatureField:
    """Grid of local descriptors, cell-major (gridH, gridW, dim) float32."""

    data: np.ndarray
    stride: float
    offset: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise ValueError(f"expected (gridH, gridW, dim) data, got shape {d.shape}")
        if d.shape[2] < 1:
            raise ValueError("descriptor dimension must be >= 1")
        if not np.all(np.isfinite(d)):
            raise ValueError("feature field contains non-finite values")
        if not (self.stride > 0):
            raise ValueError("stride must be positive")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "stride", _f32(self.stride))
        object.__setattr__(self, "offset", (_f32(self.offset[0]), _f32(self.offset[1])))
        object.__setattr__(self, "scale", _f32(self.scale))

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel centers (xs, ys) in the coordinates of the image this field was
        computed on; xs has length grid_w, ys length grid_h."""
        xs = self.offset[0] + self.stride * np.arange(self.grid_w)
        ys = self.offset[1] + self.stride * np.arange(self.grid_h)
        return xs, ys

    def centers_in_original(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell centers mapped back to original-image pixel coordinates.

        Uses the pixel-center convention orig = (c + 0.5) / scale - 0.5, the
        inverse of the resampling grid used by rescale_image.
        """
        xs, ys = self.cell_centers()
        return (xs + 0.5) / self.scale - 0.5, (ys + 0.5) / self.scale - 0.5

    def descriptors(self) -> np.ndarray:
        """All descriptors as an (gridH*gridW, dim) view, row-major cells."""
        return self.data.reshape(-1, self.dim)

    def with_scale(self, scale: float) -> "FeatureField":
        return replace(self, scale=scale)


@dataclass(frozen=True)
class RegionMask:
    """Per-pixel integer labels at image resolution; 0 means unlabeled."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int32)
        if lab.ndim != 2:
            raise ValueError(f"expected (H, W) labels, got shape {lab.shape}")
        if lab.min() < 0:
            raise ValueError("region ids must be non-negative")
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def region_ids(self) -> np.ndarray:
        ids = np.unique(self.labels)
        return ids[ids > 0]


def write_tensor(field: FeatureField) -> bytes:
    """Serialize a FeatureField to the binary exchange layout (f32 LE, D-major)."""
    name = field.name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ValueError("field name too long")
    header = _HEADER.pack(
        TENSOR_MAGIC,
        TENSOR_VERSION,
        0,
        field.dim,
        field.grid_h,
        field.grid_w,
        field.stride,
        field.offset[0],
        field.offset[1],
        field.scale,
        len(name),
    )
    payload = np.moveaxis(field.data, 2, 0).astype("<f4").tobytes()
    return header + name + payload


def read_tensor(buf: bytes) -> FeatureField:
    """Parse the binary exchange layout back into a FeatureField."""
    if len(buf) < 4:
        raise TruncatedError("tensor file shorter than its magic tag")
    if buf[:4] != TENSOR_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {TENSOR_MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedError("tensor file shorter than its header")
    (_, version, _, dim, grid_h, grid_w, stride, ox, oy, scale, name_len) = _HEADER.unpack_from(buf)
    if version != TENSOR_VERSION:
        raise UnsupportedVersionError(f"tensor file version {version} not supported")
    name_end = _HEADER.size + name_len
    if len(buf) < name_end:
        raise TruncatedError("tensor file truncated inside the name field")
    name = buf[_HEADER.size:name_end].decode("utf-8")
    count = dim * grid_h * grid_w
    if len(buf) < name_end + 4 * count:
        raise TruncatedError(
            f"truncated payload: expected {4 * count} bytes, got {len(buf) - name_end}"
        )
    flat = np.frombuffer(buf, dtype="<f4", count=count, offset=name_end)
    data = np.moveaxis(flat.reshape(dim, grid_h, grid_w), 0, 2)
    return FeatureField(data=data, stride=stride, offset=(ox, oy), scale=scale, name=name)


def write_tensor_file(path, field: FeatureField) -> None:
    from .image import atomic_write_bytes

    atomic_write_bytes(path, write_tensor(field))


def read_tensor_file(path) -> FeatureField:
    from pathlib import Path

    return read_tensor(Path(path).read_bytes())
