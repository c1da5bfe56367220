"""One-vs-rest linear SVMs with median-score recalibration.

Training minimizes, per class,

    1/2 ||w||^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))

by coordinate descent on the hinge-loss dual. The bias is carried as an
augmented constant feature of value 1, so it is (mildly) regularized; the
objective reported and tested is the one actually minimized.

After training, each class is recalibrated by an affine score transform that
maps the median positive and negative training scores to +1 and -1; the
transform is folded into (w, b).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, TrainingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SvmConfig:
    c: float = 1.0
    max_epochs: int = 1000
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not (self.c > 0):
            raise ValueError("regularization constant must be positive")


@dataclass(frozen=True)
class SvmBank:
    """Per-class linear scorers; `objectives` are the trained primal values."""

    classes: tuple[str, ...]
    weights: np.ndarray  # (C, D)
    biases: np.ndarray  # (C,)
    objectives: tuple[float, ...]
    calibrated: bool = False
    skipped: tuple[str, ...] = ()  # classes with no positive examples
    degenerate: tuple[str, ...] = ()  # classes whose calibration had m+ == m-

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.biases, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],) or len(self.classes) != w.shape[0]:
            raise DimensionError("inconsistent classifier bank shapes")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite classifier parameters")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def _dual_cd(
    x: np.ndarray, y: np.ndarray, c: float, max_epochs: int, tol: float, rng
) -> np.ndarray:
    """Hinge-loss dual coordinate descent; returns the augmented weight vector."""
    n = x.shape[0]
    qii = np.einsum("ij,ij->i", x, x) + 1.0  # +1 for the augmented bias feature
    alpha = np.zeros(n)
    w = np.zeros(x.shape[1])
    wb = 0.0  # weight on the constant feature
    for _ in range(max_epochs):
        worst = 0.0
        for i in rng.permutation(n):
            g = y[i] * (x[i] @ w + wb) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= c:
                pg = max(g, 0.0)
            else:
                pg = g
            worst = max(worst, abs(pg))
            if pg != 0.0:
                new_a = min(max(a - g / qii[i], 0.0), c)
                if new_a != a:
                    step = (new_a - a) * y[i]
                    w += step * x[i]
                    wb += step
                    alpha[i] = new_a
        if worst < tol:
            break
    return np.concatenate([w, [wb]])


def svm_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, c: float) -> float:
    """Primal value of the augmented-bias problem (b counts as a weight)."""
    margins = y * (x @ w + b)
    hinge = np.maximum(0.0, 1.0 - margins).sum()
    return 0.5 * (w @ w + b * b) + c * hinge


def _label_sets(labels) -> list[frozenset[str]]:
    out = []
    for l in labels:
        if isinstance(l, (set, frozenset, tuple, list)):
            out.append(frozenset(str(v) for v in l))
        else:
            out.append(frozenset((str(l),)))
    return out


def train_svm(
    x: np.ndarray,
    labels,
    cfg: SvmConfig = SvmConfig(),
    classes: tuple[str, ...] | None = None,
) -> SvmBank:
    """Train one binary classifier per class (1-vs-rest).

    `labels` may be plain strings or per-item label sets (multi-label data).
    Descriptors are expected to be L2-normalized; rows that are not get
    renormalized with a warning. Classes without positive examples are
    recorded in `skipped` and excluded from the bank.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise TrainingError(f"descriptors must be (N, D), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise TrainingError("descriptors contain non-finite values")
    labels = _label_sets(labels)
    if len(labels) != x.shape[0]:
        raise TrainingError("one label per descriptor row required")

    norms = np.linalg.norm(x, axis=1)
    off = np.abs(norms - 1.0) > 1e-4
    if np.any(off & (norms > 0)):
        log.warning("renormalizing %d descriptors that were not unit length", int(off.sum()))
        x = x.copy()
        fix = off & (norms > 0)
        x[fix] /= norms[fix, None]

    wanted = (
        tuple(classes)
        if classes is not None
        else tuple(sorted(set().union(*labels)))
    )
    kept, skipped, ws, bs, objs = [], [], [], [], []
    for cname in wanted:
        pos = np.asarray([cname in s for s in labels])
        if not pos.any():
            log.warning("class %r has no positive examples, skipped", cname)
            skipped.append(cname)
            continue
        if pos.all():
            log.warning("class %r has no negative examples, skipped", cname)
            skipped.append(cname)
            continue
        y = np.where(pos, 1.0, -1.0)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed))
        aug = _dual_cd(x, y, cfg.c, cfg.max_epochs, cfg.tol, rng)
        w, b = aug[:-1], float(aug[-1])
        kept.append(cname)
        ws.append(w)
        bs.append(b)
        objs.append(svm_objective(w, b, x, y, cfg.c))
    if not kept:
        raise TrainingError("no trainable class (each needs a positive and a negative)")
    return SvmBank(
        classes=tuple(kept),
        weights=np.vstack(ws),
        biases=np.asarray(bs),
        objectives=tuple(objs),
        skipped=tuple(skipped),
    )


def calibrate(bank: SvmBank, x: np.ndarray, labels) -> SvmBank:
    """Fold per-class affine transforms into (w, b) so that the median positive
    and negative training scores become exactly +1 and -1.

    If a class has median positive below median negative the transform flips
    score order (a < 0); this is applied as stated but logged. Classes whose
    medians coincide are left untouched and recorded in `degenerate`.
    """
    labels = _label_sets(labels)
    scores = x @ bank.weights.T + bank.biases  # (N, C)
    new_w = bank.weights.copy()
    new_b = bank.biases.copy()
    degenerate = list(bank.degenerate)
    for ci, cname in enumerate(bank.classes):
        pos = np.asarray([cname in s for s in labels])
        if not pos.any() or pos.all():
            degenerate.append(cname)
            continue
        m_pos = float(np.median(scores[pos, ci]))
        m_neg = float(np.median(scores[~pos, ci]))
        if m_pos == m_neg:
            log.warning("class %r: coincident medians, calibration skipped", cname)
            degenerate.append(cname)
            continue
        if m_pos < m_neg:
            log.warning("class %r: positive median below negative, scores flip", cname)
        a = 2.0 / (m_pos - m_neg)
        shift = -(m_pos + m_neg) / (m_pos - m_neg)
        new_w[ci] *= a
        new_b[ci] = a * new_b[ci] + shift
    return replace(
        bank, weights=new_w, biases=new_b, calibrated=True, degenerate=tuple(degenerate)
    )


def predict(bank: SvmBank, x: np.ndarray) -> tuple[np.ndarray, str]:
    """(per-class scores, argmax label); ties break to the lowest class index."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != bank.dim:
        raise DimensionError(f"descriptor dim {x.shape[0]} != classifier dim {bank.dim}")
    scores = bank.weights @ x + bank.biases
    return scores, bank.classes[int(np.argmax(scores))]


def predict_many(bank: SvmBank, x: np.ndarray) -> tuple[np.ndarray, list[str]]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bank.dim:
        raise DimensionError(f"descriptors must be (N, {bank.dim})")
    scores = x @ bank.weights.T + bank.biases
    idx = np.argmax(scores, axis=1)
    return scores, [bank.classes[int(i)] for i in idx]
