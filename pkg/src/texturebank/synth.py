"""Procedural texture benchmark: small crops of five texture families.

Stripes have an 8 px period (4 dark, 4 light), checkerboards 8 px cells,
noise crops come from a unit-variance Gaussian squashed into [0, 1], and
blobs are thresholded smoothed noise. Vertical stripes are rendered as the
90-degree rotation of a horizontal-stripe crop drawn from the same stream,
so the two classes are exact rotations of each other by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .image import ImagePlane, write_pnm
from .manifest import ManifestRecord, write_manifest
from .rand import rng_stream

TEXTURE_KINDS = ("hstripes", "vstripes", "checker", "noise", "blobs")
STRIPE_PERIOD = 8
CHECKER_CELL = 8
_JITTER_SIGMA = 0.04


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[str, ...] = TEXTURE_KINDS
    size: int = 64
    train: int = 100
    val: int = 0
    test: int = 100
    seed: int = 0

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ConfigError("need at least two texture classes")
        unknown = set(self.classes) - set(TEXTURE_KINDS)
        if unknown:
            raise ConfigError(f"unknown texture classes {sorted(unknown)}")
        if self.train < 1 or self.test < 1 or self.val < 0:
            raise ConfigError("split counts must be positive (val may be 0)")
        if self.size < 16:
            raise ConfigError("crop size must be at least 16 px")


def _two_tone(rng: np.random.Generator) -> tuple[float, float]:
    lo = 0.15 + 0.1 * rng.random()
    hi = 0.7 + 0.15 * rng.random()
    return lo, hi


def _with_jitter(base: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    noisy = base + _JITTER_SIGMA * rng.standard_normal(base.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def _hstripes(size: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = _two_tone(rng)
    phase = int(rng.integers(STRIPE_PERIOD))
    y = np.arange(size) + phase
    rows = ((y // (STRIPE_PERIOD // 2)) % 2).astype(np.float64)
    base = np.where(rows == 0, lo, hi)[:, None] * np.ones((1, size))
    return _with_jitter(base, rng)


def _checker(size: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = _two_tone(rng)
    py, px = int(rng.integers(CHECKER_CELL)), int(rng.integers(CHECKER_CELL))
    yy, xx = np.mgrid[0:size, 0:size]
    cells = (((yy + py) // CHECKER_CELL) + ((xx + px) // CHECKER_CELL)) % 2
    base = np.where(cells == 0, lo, hi).astype(np.float64)
    return _with_jitter(base, rng)


def _noise(size: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((size, size))
    return np.clip(g / 6.0 + 0.5, 0.0, 1.0).astype(np.float32)


def _smooth(arr: np.ndarray, radius: int) -> np.ndarray:
    kernel = np.exp(-np.linspace(-2, 2, 2 * radius + 1) ** 2)
    kernel /= kernel.sum()
    pad = np.pad(arr, radius, mode="reflect")
    rows = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="valid"), 1, pad)
    return np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="valid"), 0, rows)


def _blobs(size: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = _two_tone(rng)
    g = _smooth(rng.standard_normal((size, size)), radius=4)
    base = np.where(g > np.median(g), hi, lo).astype(np.float64)
    return _with_jitter(base, rng)


def render_texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One (size, size) float32 crop in [0, 1] for the requested class."""
    if kind == "hstripes":
        return _hstripes(size, rng)
    if kind == "vstripes":
        return np.ascontiguousarray(np.rot90(_hstripes(size, rng)))
    if kind == "checker":
        return _checker(size, rng)
    if kind == "noise":
        return _noise(size, rng)
    if kind == "blobs":
        return _blobs(size, rng)
    raise ConfigError(f"unknown texture kind {kind!r}")


def generate_dataset(spec: SyntheticSpec, out_dir) -> Path:
    """Render all crops, write them as PGMs, and return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[ManifestRecord] = []
    for kind in spec.classes:
        (out_dir / kind).mkdir(exist_ok=True)
        for split, count in (("train", spec.train), ("val", spec.val), ("test", spec.test)):
            for idx in range(count):
                rng = rng_stream(spec.seed, f"synth/{kind}/{split}/{idx}")
                crop = render_texture(kind, spec.size, rng)
                rel = Path(kind) / f"{split}_{idx:04d}.pgm"
                write_pnm(out_dir / rel, ImagePlane(crop))
                records.append(ManifestRecord(image=rel, split=split, labels=(kind,)))
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, records)
    return manifest_path
