"""Diagonal-covariance Gaussian mixtures trained with EM, plus k-means.

The mixture serves as the codebook for Fisher-vector pooling; k-means centers
double as the VLAD / bag-of-words vocabulary and as the EM initializer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import TrainingError

log = logging.getLogger(__name__)

# Relative variance floor: per-dimension data variance times this factor.
VARIANCE_FLOOR_SCALE = 1e-4
_ABS_FLOOR = 1e-12


@dataclass(frozen=True)
class GmmModel:
    """weights (K,), means (K, D), variances (K, D); all float64."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        m = np.ascontiguousarray(self.means, dtype=np.float64)
        v = np.ascontiguousarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or m.ndim != 2 or v.shape != m.shape or w.shape[0] != m.shape[0]:
            raise ValueError("inconsistent mixture shapes")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite mixture parameters")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w <= 0):
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_densities(self, x: np.ndarray) -> np.ndarray:
        """(N, K) log of weight_k * N(x_n; mean_k, diag variance_k)."""
        x = np.asarray(x, dtype=np.float64)
        inv = 1.0 / self.variances  # (K, D)
        # (x - mu)^2 / var expanded into three matmuls
        quad = (
            (x * x) @ inv.T
            - 2.0 * (x @ (self.means * inv).T)
            + np.sum(self.means * self.means * inv, axis=1)[None, :]
        )
        log_norm = -0.5 * (
            self.dim * np.log(2.0 * np.pi) + np.sum(np.log(self.variances), axis=1)
        )
        return np.log(self.weights)[None, :] + log_norm[None, :] - 0.5 * quad

    def posteriors(self, x: np.ndarray) -> np.ndarray:
        """(N, K) responsibilities; rows sum to 1."""
        ld = self.log_densities(x)
        ld -= ld.max(axis=1, keepdims=True)
        p = np.exp(ld)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def log_likelihood(self, x: np.ndarray) -> float:
        ld = self.log_densities(x)
        m = ld.max(axis=1, keepdims=True)
        return float(np.sum(m[:, 0] + np.log(np.sum(np.exp(ld - m), axis=1))))


@dataclass(frozen=True)
class GmmFit:
    model: GmmModel
    log_likelihoods: np.ndarray  # per-iteration total log-likelihood
    n_reseeded: int


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread the initial centers by squared distance."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = x[rng.integers(n)]
            continue
        centers[i] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _assign(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin over squared distances; ties resolve to the lowest center index
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ centers.T)
        + np.sum(centers * centers, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def kmeans(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from a k-means++ start; returns (centers, assignments).

    Empty clusters are re-seeded to the point farthest from its center.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < k:
        raise TrainingError(f"need at least {k} samples for {k} centers")
    centers = kmeans_pp_init(x, k, rng)
    assign = _assign(x, centers)
    for _ in range(max_iter):
        for j in range(k):
            sel = assign == j
            if not np.any(sel):
                far = np.argmax(np.sum((x - centers[assign]) ** 2, axis=1))
                centers[j] = x[far]
            else:
                centers[j] = x[sel].mean(axis=0)
        new_assign = _assign(x, centers)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centers, assign


def train_gmm(
    samples: np.ndarray,
    k: int,
    max_iter: int = 100,
    tol: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> GmmFit:
    """EM for a diagonal-covariance mixture.

    Initialized by k-means++ cluster statistics; stops when the relative
    log-likelihood improvement drops below `tol` or after `max_iter` steps.
    Components whose soft count collapses are re-seeded to a random sample.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise TrainingError(f"samples must be (N, D), got {x.shape}")
    n, d = x.shape
    if n < 10 * k:
        raise TrainingError(f"need at least {10 * k} samples to fit {k} components, got {n}")
    if not np.all(np.isfinite(x)):
        raise TrainingError("samples contain non-finite values")
    rng = rng if rng is not None else np.random.default_rng(0)

    floor = VARIANCE_FLOOR_SCALE * x.var(axis=0) + _ABS_FLOOR
    data_var = np.maximum(x.var(axis=0), floor)

    centers, assign = kmeans(x, k, rng)
    weights = np.full(k, 1.0 / k)
    means = centers.copy()
    variances = np.empty((k, d))
    for j in range(k):
        sel = assign == j
        if np.count_nonzero(sel) > 1:
            variances[j] = np.maximum(x[sel].var(axis=0), floor)
        else:
            variances[j] = data_var
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    if counts.sum() > 0:
        weights = np.maximum(counts, 1.0) / np.maximum(counts, 1.0).sum()

    model = GmmModel(weights, means, variances)
    trace: list[float] = []
    n_reseeded = 0
    for _ in range(max_iter):
        ld = model.log_densities(x)
        mx = ld.max(axis=1, keepdims=True)
        log_total = mx[:, 0] + np.log(np.sum(np.exp(ld - mx), axis=1))
        trace.append(float(log_total.sum()))
        resp = np.exp(ld - log_total[:, None])

        nk = resp.sum(axis=0)
        dead = nk < n * 1e-12
        means = (resp.T @ x) / np.maximum(nk, _ABS_FLOOR)[:, None]
        sq = (resp.T @ (x * x)) / np.maximum(nk, _ABS_FLOOR)[:, None]
        variances = np.maximum(sq - means * means, floor[None, :])
        weights = nk / n
        for j in np.flatnonzero(dead):
            log.warning("re-seeding collapsed mixture component %d", j)
            n_reseeded += 1
            means[j] = x[rng.integers(n)]
            variances[j] = data_var
            weights[j] = 1.0 / n
        weights = weights / weights.sum()
        model = GmmModel(weights, means, variances)

        if len(trace) >= 2:
            prev, cur = trace[-2], trace[-1]
            if abs(cur - prev) <= tol * max(1.0, abs(prev)):
                break
    trace.append(model.log_likelihood(x))
    return GmmFit(model=model, log_likelihoods=np.asarray(trace), n_reseeded=n_reseeded)
