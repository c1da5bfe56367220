"""PCA for descriptor decorrelation and dimensionality reduction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError
from .field import FeatureField


@dataclass(frozen=True)
class PcaModel:
    """mean (D,), components (outDim, D) with orthonormal rows, eigenvalues (outDim,)."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.mean, dtype=np.float64)
        c = np.ascontiguousarray(self.components, dtype=np.float64)
        e = np.ascontiguousarray(self.eigenvalues, dtype=np.float64)
        if c.ndim != 2 or m.shape != (c.shape[1],) or e.shape != (c.shape[0],):
            raise ValueError("inconsistent PCA shapes")
        gram = c @ c.T
        if not np.allclose(gram, np.eye(c.shape[0]), atol=1e-6):
            raise ValueError("projection rows must be orthonormal")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "components", c)
        object.__setattr__(self, "eigenvalues", e)

    @property
    def in_dim(self) -> int:
        return self.components.shape[1]

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]


def train_pca(samples: np.ndarray, out_dim: int) -> PcaModel:
    """Project onto the top eigenvectors of the sample covariance.

    Eigenvector signs are fixed (largest-magnitude entry positive) so training
    is deterministic. Directions with (near-)zero variance are legitimate
    components; only out_dim > D or too few samples are errors.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise TrainingError(f"samples must be (N, D), got {x.shape}")
    n, d = x.shape
    if out_dim < 1 or out_dim > d:
        raise TrainingError(f"out_dim must be in [1, {d}], got {out_dim}")
    if n <= out_dim:
        raise TrainingError(f"need more than {out_dim} samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = (centered.T @ centered) / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:out_dim]
    comps = eigvecs[:, order].T.copy()
    vals = np.maximum(eigvals[order], 0.0)
    for row in comps:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=comps, eigenvalues=vals)


def apply_pca_array(x: np.ndarray, pca: PcaModel) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != pca.in_dim:
        raise TrainingError(f"PCA expects dim {pca.in_dim}, got {x.shape[-1]}")
    return (x - pca.mean) @ pca.components.T


def apply_pca(field: FeatureField, pca: PcaModel) -> FeatureField:
    """Project every cell descriptor; grid geometry is unchanged."""
    data = apply_pca_array(field.data.astype(np.float64), pca).astype(np.float32)
    return FeatureField(
        data=data,
        stride=field.stride,
        offset=field.offset,
        scale=field.scale,
        name=field.name,
    )
