"""Evaluation measures: class-normalized accuracy, per-pixel accuracy with and
without class normalization, and 11-point interpolated mean average precision."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .regions import LabelMap

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EvalReport:
    measure: str
    overall: float
    per_class: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"measure={self.measure}", f"overall={self.overall:.6f}"]
        for name, value in self.per_class.items():
            lines.append(f"class.{name}={value:.6f}")
        for name, value in self.counts.items():
            lines.append(f"count.{name}={value}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": REPORT_SCHEMA_VERSION,
                "measure": self.measure,
                "overall": self.overall,
                "per_class": self.per_class,
                "counts": self.counts,
            },
            indent=2,
            sort_keys=True,
        )


def class_normalized_accuracy(pred, truth, classes=None) -> EvalReport:
    """Mean over classes of the per-class accuracy; absent classes are skipped."""
    pred = [str(p) for p in pred]
    truth = [str(t) for t in truth]
    if len(pred) != len(truth):
        raise TrainingError("prediction/truth length mismatch")
    if not truth:
        raise TrainingError("nothing to evaluate")
    wanted = [str(c) for c in classes] if classes is not None else sorted(set(truth))
    per_class: dict[str, float] = {}
    for c in wanted:
        total = sum(1 for t in truth if t == c)
        if total == 0:
            continue
        correct = sum(1 for p, t in zip(pred, truth) if t == c and p == c)
        per_class[c] = correct / total
    if not per_class:
        raise TrainingError("no evaluated class has examples")
    overall = float(np.mean(list(per_class.values())))
    return EvalReport(
        measure="acc",
        overall=overall,
        per_class=per_class,
        counts={"items": len(truth), "classes": len(per_class)},
    )


def per_pixel_accuracy(
    pred_map: LabelMap | np.ndarray,
    truth_map: LabelMap | np.ndarray,
    mode: str = "classNormalized",
    class_names: dict[int, str] | None = None,
) -> EvalReport:
    """Pixel accuracy against a ground-truth map; truth pixels labeled 0 are
    ignored. `global` counts all labeled pixels together; `classNormalized`
    averages the per-class pixel accuracies."""
    pred = pred_map.labels if isinstance(pred_map, LabelMap) else np.asarray(pred_map)
    truth = truth_map.labels if isinstance(truth_map, LabelMap) else np.asarray(truth_map)
    if pred.shape != truth.shape:
        raise TrainingError(f"map shapes differ: {pred.shape} vs {truth.shape}")
    if mode not in ("classNormalized", "global"):
        raise ValueError(f"unknown mode {mode!r}")
    labeled = truth > 0
    n_labeled = int(labeled.sum())
    if n_labeled == 0:
        raise TrainingError("ground truth has no labeled pixels")
    correct = labeled & (pred == truth)
    per_class: dict[str, float] = {}
    for cid in np.unique(truth[labeled]):
        sel = truth == cid
        name = class_names.get(int(cid), str(int(cid))) if class_names else str(int(cid))
        per_class[name] = float(correct[sel].sum() / sel.sum())
    if mode == "global":
        overall = float(correct.sum() / n_labeled)
        measure = "ppacc-global"
    else:
        overall = float(np.mean(list(per_class.values())))
        measure = "ppacc"
    return EvalReport(
        measure=measure,
        overall=overall,
        per_class=per_class,
        counts={
            "labeled_pixels": n_labeled,
            "ignored_pixels": int(truth.size - n_labeled),
            "correct_pixels": int(correct.sum()),
        },
    )


RECALL_LEVELS = np.linspace(0.0, 1.0, 11)


def average_precision_11pt(scores: np.ndarray, positives: np.ndarray) -> float:
    """11-point interpolated AP for one class.

    Items are ranked by score (descending, ties by input index); at each recall
    level r in {0, 0.1, ..., 1} the precision is the maximum precision over
    ranks whose recall reaches r.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise TrainingError("class has no positive items")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    precision = tp / ranks
    recall = tp / n_pos
    ap = 0.0
    for r in RECALL_LEVELS:
        reachable = precision[recall >= r - 1e-12]
        ap += reachable.max() if reachable.size else 0.0
    return float(ap / 11.0)


def mean_ap_11pt(
    scores: dict[str, np.ndarray] | np.ndarray,
    truth: list[set[str]] | list[frozenset],
    classes: list[str] | None = None,
) -> EvalReport:
    """Mean of 11-point APs over classes; classes with no positives are
    excluded with a warning count. `scores` maps class name -> per-item score
    array (or is an (N, C) array with `classes` giving column names)."""
    if isinstance(scores, np.ndarray):
        if classes is None:
            raise ValueError("column class names required with an array of scores")
        scores = {c: scores[:, j] for j, c in enumerate(classes)}
    per_class: dict[str, float] = {}
    skipped = 0
    for cname, s in scores.items():
        pos = np.asarray([cname in t for t in truth], dtype=bool)
        if not pos.any():
            skipped += 1
            continue
        per_class[cname] = average_precision_11pt(np.asarray(s), pos)
    if not per_class:
        raise TrainingError("no class has a positive example")
    overall = float(np.mean(list(per_class.values())))
    return EvalReport(
        measure="map11",
        overall=overall,
        per_class=per_class,
        counts={"items": len(truth), "classes": len(per_class), "skipped_classes": skipped},
    )
