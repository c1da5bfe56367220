"""Dense SIFT: 4x4 spatial bins x 8 orientations over a 32 px support.

Descriptors are extracted on a regular grid, L2-normalized, clamped at a
threshold, and renormalized. Gradients use centered differences; pixels are
weighted by a Gaussian over the support window (sigma = half the window) and
bilinearly shared between neighbouring spatial bins, the usual SIFT layout.
Component order is (row bin, column bin, orientation), row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyFieldError
from .field import FeatureField
from .image import ImagePlane, to_gray


@dataclass(frozen=True)
class SiftConfig:
    step: int = 4
    support: int = 32
    spatial_bins: int = 4
    orientations: int = 8
    clamp: float = 0.2

    def __post_init__(self):
        if self.support % self.spatial_bins != 0:
            raise ValueError("support must be a multiple of spatial_bins")
        if self.step < 1:
            raise ValueError("step must be >= 1")

    @property
    def dim(self) -> int:
        return self.spatial_bins * self.spatial_bins * self.orientations


def _orientation_channels(gray: np.ndarray, n_orient: int) -> np.ndarray:
    """(n_orient, H, W) gradient magnitude shared linearly between the two
    nearest orientation bins."""
    gy, gx = np.gradient(gray.astype(np.float32))
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)  # (-pi, pi]
    o = (ang % (2.0 * np.pi)) / (2.0 * np.pi) * n_orient
    lo = np.floor(o).astype(np.int32) % n_orient
    frac = (o - np.floor(o)).astype(np.float32)
    channels = np.zeros((n_orient,) + gray.shape, dtype=np.float32)
    for k in range(n_orient):
        channels[k] = mag * ((lo == k) * (1.0 - frac) + (lo == (k - 1) % n_orient) * frac)
    return channels


def _bin_weights(cfg: SiftConfig) -> np.ndarray:
    """(spatial_bins, support) separable weights: triangular bin sharing times
    the Gaussian window along one axis."""
    s = cfg.support
    cell = s / cfg.spatial_bins
    u = np.arange(s, dtype=np.float64)
    centers = (np.arange(cfg.spatial_bins) + 0.5) * cell - 0.5
    tri = np.clip(1.0 - np.abs(u[None, :] - centers[:, None]) / cell, 0.0, None)
    sigma = s / 2.0
    gauss = np.exp(-((u - (s - 1) / 2.0) ** 2) / (2.0 * sigma * sigma))
    return (tri * gauss[None, :]).astype(np.float32)


def dense_sift(img: ImagePlane, cfg: SiftConfig = SiftConfig()) -> FeatureField:
    """Dense SIFT descriptors on a step-sized grid of the (gray) image."""
    gray = to_gray(img).data[0]
    s, t = cfg.support, cfg.step
    h, w = gray.shape
    if h < s or w < s:
        raise EmptyFieldError(f"image {w}x{h} smaller than the {s} px descriptor support")

    channels = _orientation_channels(gray, cfg.orientations)
    wts = _bin_weights(cfg)

    rows = sliding_window_view(channels, s, axis=1)[:, ::t]  # (O, ny, W, s)
    y_binned = np.einsum("onws,bs->obnw", rows, wts)
    cols = sliding_window_view(y_binned, s, axis=3)[:, :, :, ::t]  # (O, B, ny, nx, s)
    desc = np.einsum("obnms,as->nmbao", cols, wts)
    ny, nx = desc.shape[0], desc.shape[1]
    desc = desc.reshape(ny, nx, cfg.dim)

    flat = desc.reshape(-1, cfg.dim).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1)
    nz = norms > 1e-12
    flat[nz] /= norms[nz, None]
    np.clip(flat, None, cfg.clamp, out=flat)
    norms = np.linalg.norm(flat, axis=1)
    nz = norms > 1e-12
    flat[nz] /= norms[nz, None]
    data = flat.astype(np.float32).reshape(ny, nx, cfg.dim)

    half = (s - 1) / 2.0
    return FeatureField(data=data, stride=float(t), offset=(half, half), name="dsift")
