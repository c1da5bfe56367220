"""Image plane type, bilinear rescaling, scale ladders, and PGM/PPM I/O."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateImageError, EmptyLadderError, FormatError

# ITU-R BT.601 luma weights for the RGB -> gray conversion.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

DEFAULT_AREA_CAP = 1024 * 1024


@dataclass(frozen=True)
class ImagePlane:
    """Channel-planar float32 image with intensities in [0, 1].

    `data` has shape (channels, height, width); channels is 1 (gray) or 3 (RGB).
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim == 2:
            d = d[None, :, :]
        if d.ndim != 3 or d.shape[0] not in (1, 3):
            raise DegenerateImageError(f"expected (1|3, H, W) data, got shape {d.shape}")
        if d.shape[1] < 1 or d.shape[2] < 1:
            raise DegenerateImageError(f"zero-sized image {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def to_gray(img: ImagePlane) -> ImagePlane:
    """Collapse RGB to a single luma plane; gray images pass through."""
    if img.channels == 1:
        return img
    r, g, b = img.data
    luma = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return ImagePlane(luma.astype(np.float32))


def _lerp(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
    # a + t*(b-a) keeps constant inputs exactly constant.
    return a + t * (b - a)


def rescale_image(img: ImagePlane, factor: float) -> ImagePlane:
    """Bilinearly resample `img` by `factor`; output dims = round(dims * factor).

    Sample positions follow the pixel-center convention
    src = (dst + 0.5) * (srcSize / dstSize) - 0.5, clamped at the borders.
    A factor of exactly 1.0 returns the input unchanged.
    """
    if not (factor > 0):
        raise ValueError(f"rescale factor must be positive, got {factor}")
    if factor == 1.0:
        return img
    out_h = int(math.floor(img.height * factor + 0.5))
    out_w = int(math.floor(img.width * factor + 0.5))
    if out_h < 1 or out_w < 1:
        raise DegenerateImageError(
            f"factor {factor} shrinks {img.width}x{img.height} to {out_w}x{out_h}"
        )

    def axis_coords(n_out: int, n_in: int):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(np.float32)
        return lo, hi, frac

    y0, y1, fy = axis_coords(out_h, img.height)
    x0, x1, fx = axis_coords(out_w, img.width)
    src = img.data
    top = _lerp(src[:, y0][:, :, x0], src[:, y0][:, :, x1], fx[None, None, :])
    bot = _lerp(src[:, y1][:, :, x0], src[:, y1][:, :, x1], fx[None, None, :])
    out = _lerp(top, bot, fy[None, :, None])
    return ImagePlane(out.astype(np.float32))


def scale_ladder(
    img_w: int,
    img_h: int,
    s_min: float = -3.0,
    s_max: float = 1.5,
    step: float = 0.5,
    area_cap: int = DEFAULT_AREA_CAP,
) -> list[float]:
    """Rescale factors 2^s for s = s_min, s_min+step, ..., s_max.

    Factors whose rescaled image would exceed `area_cap` pixels are dropped.
    """
    if step <= 0:
        raise ValueError("ladder step must be positive")
    if s_min > s_max:
        raise ValueError("s_min must not exceed s_max")
    n = int(math.floor((s_max - s_min) / step + 0.5)) + 1
    factors = []
    for i in range(n):
        s = s_min + i * step
        f = 2.0 ** s
        if (img_w * f) * (img_h * f) <= area_cap:
            factors.append(f)
    if not factors:
        raise EmptyLadderError(
            f"no scale in [2^{s_min}, 2^{s_max}] keeps {img_w}x{img_h} under {area_cap} px^2"
        )
    return factors


# --- PGM/PPM (binary P5/P6) -------------------------------------------------

def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write via temp-then-rename so interrupted runs never leave partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _parse_pnm_header(buf: bytes):
    # magic, width, height, maxval as whitespace/comment separated tokens
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n|\S+)").match(buf, pos)
        if m is None:
            raise FormatError("truncated PNM header")
        pos = m.end()
        tok = m.group(1)
        if not tok.startswith(b"#"):
            tokens.append(tok)
    return tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3]), pos + 1


def read_pnm(path: str | Path) -> ImagePlane:
    """Read a binary PGM (P5) or PPM (P6) image into [0, 1] floats."""
    arr, maxval = read_pnm_raw(path)
    scaled = (arr.astype(np.float32) / float(maxval)).clip(0.0, 1.0)
    if scaled.ndim == 2:
        return ImagePlane(scaled)
    return ImagePlane(np.moveaxis(scaled, 2, 0))


def read_pnm_raw(path: str | Path) -> tuple[np.ndarray, int]:
    """Raw PNM samples: (H, W) or (H, W, 3) integer array plus maxval."""
    buf = Path(path).read_bytes()
    magic, width, height, maxval, offset = _parse_pnm_header(buf)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r} (binary P5/P6 only)")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    if data.size < count:
        raise FormatError(f"truncated PNM payload in {path}")
    if channels == 1:
        arr = data.reshape(height, width)
    else:
        arr = data.reshape(height, width, 3)
    return arr.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pnm(path: str | Path, img: ImagePlane, maxval: int = 255) -> None:
    """Write a binary PGM/PPM; maxval > 255 uses big-endian 16-bit samples."""
    if maxval < 1 or maxval > 65535:
        raise ValueError("maxval must be in [1, 65535]")
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n%d\n" % (magic, img.width, img.height, maxval)
    q = np.floor(img.data * maxval + 0.5).clip(0, maxval)
    if img.channels == 3:
        q = np.moveaxis(q, 0, 2)
    else:
        q = q[0]
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    atomic_write_bytes(path, header + q.astype(dtype).tobytes())


def write_pnm_raw(path: str | Path, arr: np.ndarray, maxval: int) -> None:
    """Write integer samples directly (used for 16-bit label maps)."""
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) samples, got {arr.shape}")
    if arr.min() < 0 or arr.max() > maxval:
        raise ValueError("samples out of range for declared maxval")
    header = b"%s\n%d %d\n%d\n" % (magic, arr.shape[1], arr.shape[0], maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    atomic_write_bytes(path, header + arr.astype(dtype).tobytes())
