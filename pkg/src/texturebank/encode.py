"""Orderless pooling of dense descriptors into Fisher-vector, VLAD, or
bag-of-words representations.

The Fisher vector of a descriptor set {x_n} under a diagonal GMM concatenates,
per component k, a mean part and a variance part

    u_k = 1/(N sqrt(w_k))   * sum_n q_nk (x_n - mu_k) / sigma_k
    v_k = 1/(N sqrt(2 w_k)) * sum_n q_nk [((x_n - mu_k) / sigma_k)^2 - 1]

with q_nk the posterior of component k for x_n. Accumulation happens in
double precision through raw moment sums (sum q, sum q x, sum q x^2), which
makes region statistics exactly additive over disjoint cell sets. Optional
signed square root and L2 normalization follow.

Region pooling selects the grid cells whose receptive-field center, mapped
back to original-image resolution, falls on a mask pixel; dense fields are
computed once per image and shared by every region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyRegionError
from .field import FeatureField
from .gmm import GmmModel
from .pca import PcaModel, apply_pca_array

DEFAULT_POSTERIOR_FLOOR = 1e-6


@dataclass(frozen=True)
class EncoderConfig:
    signed_square_root: bool = True
    l2_normalize: bool = True
    apply_pca: bool = False
    posterior_floor: float = DEFAULT_POSTERIOR_FLOOR


@dataclass(frozen=True)
class EncodedDescriptor:
    """Pooled descriptor for an image or region."""

    values: np.ndarray
    encoding: str  # "fv" | "vlad" | "bow" | "fc"
    k: int
    dim: int
    signed_square_root: bool = False
    l2_normalized: bool = False
    is_zero: bool = False

    def __post_init__(self):
        v = np.asarray(self.values)
        if self.encoding == "fv" and v.size != 2 * self.k * self.dim:
            raise DimensionError(f"fv length {v.size} != 2*{self.k}*{self.dim}")
        if self.encoding == "vlad" and v.size != self.k * self.dim:
            raise DimensionError(f"vlad length {v.size} != {self.k}*{self.dim}")
        if self.encoding == "bow" and v.size != self.k:
            raise DimensionError(f"bow length {v.size} != {self.k}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FvStats:
    """Raw Fisher accumulators: additive over disjoint descriptor sets."""

    n: int
    q_sum: np.ndarray  # (K,)   sum_n q_nk
    qx_sum: np.ndarray  # (K, D) sum_n q_nk x_n
    qxx_sum: np.ndarray  # (K, D) sum_n q_nk x_n^2

    def __add__(self, other: "FvStats") -> "FvStats":
        return FvStats(
            n=self.n + other.n,
            q_sum=self.q_sum + other.q_sum,
            qx_sum=self.qx_sum + other.qx_sum,
            qxx_sum=self.qxx_sum + other.qxx_sum,
        )


def select_descriptors(
    fields: list[FeatureField] | FeatureField, mask: np.ndarray | None = None
) -> np.ndarray:
    """Stack descriptors from all fields whose cell centers land in the mask.

    `mask` is an (H, W) boolean array at original-image resolution; None pools
    every cell. Centers are rounded to the nearest pixel and clamped to the
    mask bounds. Cells are taken field by field in row-major order.
    """
    if isinstance(fields, FeatureField):
        fields = [fields]
    if not fields:
        raise EmptyRegionError("no feature fields to pool")
    dim = fields[0].dim
    chunks = []
    for f in fields:
        if f.dim != dim:
            raise DimensionError(f"mixed descriptor dims {dim} and {f.dim}")
        if mask is None:
            chunks.append(f.descriptors())
            continue
        xs, ys = f.centers_in_original()
        ix = np.clip(np.floor(xs + 0.5).astype(np.int64), 0, mask.shape[1] - 1)
        iy = np.clip(np.floor(ys + 0.5).astype(np.int64), 0, mask.shape[0] - 1)
        inside = mask[iy[:, None], ix[None, :]]
        chunks.append(f.data[inside])
    out = np.concatenate(chunks, axis=0)
    if out.shape[0] == 0:
        raise EmptyRegionError("empty region: no descriptor centers inside the mask")
    return out


def fisher_statistics(
    fields: list[FeatureField] | FeatureField | np.ndarray,
    gmm: GmmModel,
    mask: np.ndarray | None = None,
    posterior_floor: float = DEFAULT_POSTERIOR_FLOOR,
    pca: PcaModel | None = None,
) -> FvStats:
    """Accumulate Fisher statistics for the selected cells (double precision)."""
    x = _descriptor_matrix(fields, mask, pca)
    if x.shape[1] != gmm.dim:
        raise DimensionError(f"descriptor dim {x.shape[1]} != mixture dim {gmm.dim}")
    q = gmm.posteriors(x)
    if posterior_floor > 0.0:
        q[q < posterior_floor] = 0.0
    return FvStats(
        n=x.shape[0],
        q_sum=q.sum(axis=0),
        qx_sum=q.T @ x,
        qxx_sum=q.T @ (x * x),
    )


def fisher_vector_from_stats(stats: FvStats, gmm: GmmModel) -> np.ndarray:
    """Unnormalized Fisher vector [u_1..u_K, v_1..v_K] as float64."""
    sigma = np.sqrt(gmm.variances)
    n = float(stats.n)
    u = (stats.qx_sum - stats.q_sum[:, None] * gmm.means) / (
        sigma * n * np.sqrt(gmm.weights)[:, None]
    )
    central2 = (
        stats.qxx_sum - 2.0 * gmm.means * stats.qx_sum + gmm.means**2 * stats.q_sum[:, None]
    )
    v = (central2 / gmm.variances - stats.q_sum[:, None]) / (
        n * np.sqrt(2.0 * gmm.weights)[:, None]
    )
    return np.concatenate([u.ravel(), v.ravel()])


def signed_sqrt(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.sqrt(np.abs(v))


def l2_normalized(v: np.ndarray) -> tuple[np.ndarray, bool]:
    """(v / ||v||, was_zero); the zero vector passes through flagged."""
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return v, True
    return v / norm, False


def _finalize(
    raw: np.ndarray, cfg: EncoderConfig, encoding: str, k: int, dim: int, dtype
) -> EncodedDescriptor:
    v = raw
    if cfg.signed_square_root and encoding == "fv":
        v = signed_sqrt(v)
    zero = not np.any(v)
    if cfg.l2_normalize:
        v, zero = l2_normalized(v)
    return EncodedDescriptor(
        values=np.asarray(v, dtype=dtype),
        encoding=encoding,
        k=k,
        dim=dim,
        signed_square_root=cfg.signed_square_root and encoding == "fv",
        l2_normalized=cfg.l2_normalize,
        is_zero=zero,
    )


def encode_fv(
    fields: list[FeatureField] | FeatureField | np.ndarray,
    gmm: GmmModel,
    cfg: EncoderConfig = EncoderConfig(),
    mask: np.ndarray | None = None,
    pca: PcaModel | None = None,
    dtype=np.float32,
) -> EncodedDescriptor:
    """Fisher-vector encoding of the cells selected by `mask` (all if None)."""
    stats = fisher_statistics(
        fields, gmm, mask=mask, posterior_floor=cfg.posterior_floor, pca=pca
    )
    raw = fisher_vector_from_stats(stats, gmm)
    return _finalize(raw, cfg, "fv", gmm.k, gmm.dim, dtype)


@dataclass(frozen=True)
class VladStats:
    """Hard-assignment accumulators; additive over disjoint descriptor sets."""

    counts: np.ndarray  # (K,)
    residual_sum: np.ndarray  # (K, D) sum of (x - center) per assigned center

    def __add__(self, other: "VladStats") -> "VladStats":
        return VladStats(self.counts + other.counts, self.residual_sum + other.residual_sum)


def vlad_statistics(
    fields: list[FeatureField] | FeatureField | np.ndarray,
    codebook: np.ndarray,
    mask: np.ndarray | None = None,
    pca: PcaModel | None = None,
) -> VladStats:
    x = _descriptor_matrix(fields, mask, pca)
    codebook = np.asarray(codebook, dtype=np.float64)
    if x.shape[1] != codebook.shape[1]:
        raise DimensionError(
            f"descriptor dim {x.shape[1]} != codebook dim {codebook.shape[1]}"
        )
    assign = _nearest_center(x, codebook)
    k = codebook.shape[0]
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    # unbuffered add keeps the per-descriptor accumulation order
    rsum = np.zeros_like(codebook)
    np.add.at(rsum, assign, x - codebook[assign])
    return VladStats(counts=counts, residual_sum=rsum)


def _descriptor_matrix(fields, mask, pca) -> np.ndarray:
    if isinstance(fields, np.ndarray):
        x = np.asarray(fields, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EmptyRegionError("descriptor matrix is empty")
    else:
        x = select_descriptors(fields, mask).astype(np.float64)
    if pca is not None:
        x = apply_pca_array(x, pca)
    return x


def _nearest_center(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ centers.T)
        + np.sum(centers * centers, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def encode_vlad(
    fields: list[FeatureField] | FeatureField | np.ndarray,
    codebook: np.ndarray,
    cfg: EncoderConfig = EncoderConfig(),
    mask: np.ndarray | None = None,
    pca: PcaModel | None = None,
    dtype=np.float32,
) -> EncodedDescriptor:
    """VLAD: residuals against the nearest center, intra-normalized per block,
    then globally L2-normalized (per cfg). The signed square root is a
    Fisher-vector refinement and is not applied here."""
    codebook = np.asarray(codebook, dtype=np.float64)
    stats = vlad_statistics(fields, codebook, mask=mask, pca=pca)
    res = stats.residual_sum.copy()
    norms = np.linalg.norm(res, axis=1)
    nz = norms > 0
    res[nz] /= norms[nz, None]
    raw = res.ravel()
    zero = not np.any(raw)
    if cfg.l2_normalize:
        raw, zero = l2_normalized(raw)
    return EncodedDescriptor(
        values=np.asarray(raw, dtype=dtype),
        encoding="vlad",
        k=codebook.shape[0],
        dim=codebook.shape[1],
        l2_normalized=cfg.l2_normalize,
        is_zero=zero,
    )


def encode_bow(
    fields: list[FeatureField] | FeatureField | np.ndarray,
    codebook: np.ndarray,
    cfg: EncoderConfig = EncoderConfig(),
    mask: np.ndarray | None = None,
    pca: PcaModel | None = None,
    dtype=np.float32,
) -> EncodedDescriptor:
    """Plain bag of words: hard-assignment histogram, L2-normalized per cfg."""
    codebook = np.asarray(codebook, dtype=np.float64)
    x = _descriptor_matrix(fields, mask, pca)
    if x.shape[1] != codebook.shape[1]:
        raise DimensionError(
            f"descriptor dim {x.shape[1]} != codebook dim {codebook.shape[1]}"
        )
    assign = _nearest_center(x, codebook)
    hist = np.bincount(assign, minlength=codebook.shape[0]).astype(np.float64)
    raw = hist / x.shape[0]
    zero = not np.any(raw)
    if cfg.l2_normalize:
        raw, zero = l2_normalized(raw)
    return EncodedDescriptor(
        values=np.asarray(raw, dtype=dtype),
        encoding="bow",
        k=codebook.shape[0],
        dim=codebook.shape[1],
        l2_normalized=cfg.l2_normalize,
        is_zero=zero,
    )
