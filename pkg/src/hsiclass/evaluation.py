"""Accuracy metrics and the randomized multi-trial protocol."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import LabelRaster, TrainingSet, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """c x c counts, rows = true class, columns = predicted class."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def recalls(self) -> np.ndarray:
        """Per-class accuracy; NaN for classes with no evaluated pixels."""
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / np.where(rows > 0, rows, 1), np.nan)


def confusion(gt: LabelRaster, pred: LabelRaster | np.ndarray,
              training: TrainingSet | None = None) -> ConfusionMatrix:
    """Counts over non-background pixels that are not in ``training``."""
    p = pred.labels if isinstance(pred, LabelRaster) else np.asarray(pred)
    if p.shape != gt.shape:
        raise ValidationError(f"prediction {p.shape} and ground truth {gt.shape} are misaligned")
    keep = gt.labels > 0
    if training is not None and len(training):
        keep &= ~training.mask()
    c = gt.n_classes
    t = gt.labels[keep]
    q = p[keep]
    if np.any(q < 1) or np.any(q > c):
        raise ValidationError("predictions must be class ids 1..c on evaluated pixels")
    counts = np.bincount((t - 1) * c + (q - 1), minlength=c * c).reshape(c, c)
    return ConfusionMatrix(counts)


def oa(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValidationError("empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def aa(cm: ConfusionMatrix) -> float:
    """Mean recall over classes that have evaluated pixels."""
    if cm.total == 0:
        raise ValidationError("empty confusion matrix")
    rec = cm.recalls()
    missing = np.flatnonzero(np.isnan(rec)) + 1
    if missing.size:
        logger.info("classes without evaluated pixels left out of AA: %s", missing.tolist())
    return float(np.nanmean(rec))


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa; NaN (with a warning) when chance agreement is 1."""
    if cm.total == 0:
        raise ValidationError("empty confusion matrix")
    n = cm.total
    po = np.trace(cm.counts) / n
    pe = float(np.dot(cm.counts.sum(axis=0), cm.counts.sum(axis=1))) / (n * n)
    if math.isclose(pe, 1.0):
        logger.warning("kappa undefined: expected agreement is 1")
        return math.nan
    return float((po - pe) / (1.0 - pe))


@dataclass(eq=False)
class TrialReport:
    """Per-trial metrics plus accumulated misclassification counts.

    Each entry of ``trials`` has keys OA, AA, kappa and ``class_accuracy``
    (length-c array, NaN where a class had no evaluated pixels).
    """

    trials: list[dict]
    error_counts: np.ndarray
    n_classes: int
    seed: int | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = np.asarray(self.error_counts)
        if counts.size and (counts.min() < 0 or counts.max() > len(self.trials)):
            raise ValidationError("misclassification counts must lie in [0, trials]")

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    def metric(self, name: str) -> np.ndarray:
        return np.array([t[name] for t in self.trials], dtype=np.float64)

    @property
    def mean(self) -> dict[str, float]:
        return {k: float(np.mean(self.metric(k))) for k in ("OA", "AA", "kappa")}

    @property
    def std(self) -> dict[str, float]:
        return {k: float(np.std(self.metric(k))) for k in ("OA", "AA", "kappa")}

    def class_accuracy_mean(self, k: int) -> float | None:
        vals = np.array([t["class_accuracy"][k - 1] for t in self.trials], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        return float(vals.mean()) if vals.size else None

    def same_as(self, other: "TrialReport") -> bool:
        if self.n_classes != other.n_classes or self.n_trials != other.n_trials:
            return False
        for a, b in zip(self.trials, other.trials):
            if any(a[k] != b[k] and not (np.isnan(a[k]) and np.isnan(b[k])) for k in ("OA", "AA", "kappa")):
                return False
            if not np.array_equal(a["class_accuracy"], b["class_accuracy"], equal_nan=True):
                return False
        return np.array_equal(self.error_counts, other.error_counts)


def trial_metrics(gt: LabelRaster, pred: LabelRaster, training: TrainingSet | None) -> dict:
    cm = confusion(gt, pred, training)
    return {"OA": oa(cm), "AA": aa(cm), "kappa": kappa(cm), "class_accuracy": cm.recalls()}


def format_table(reports: dict[str, TrialReport], class_names: list[str] | None = None) -> str:
    """Aligned text table: one column per method, class rows then OA/AA/kappa."""
    names = list(reports)
    c = max(r.n_classes for r in reports.values())
    labels = class_names or [f"class {k}" for k in range(1, c + 1)]
    head = ["", *names]
    rows = []
    for k in range(1, c + 1):
        cells = []
        for n in names:
            v = reports[n].class_accuracy_mean(k)
            cells.append("-" if v is None else f"{100 * v:.2f}%")
        rows.append([labels[k - 1], *cells])
    for metric in ("OA", "AA", "kappa"):
        cells = []
        for n in names:
            r = reports[n]
            if metric == "kappa":
                cells.append(f"{r.mean[metric]:.4f}±{r.std[metric]:.4f}")
            else:
                cells.append(f"{100 * r.mean[metric]:.2f}±{100 * r.std[metric]:.2f}%")
        rows.append([metric, *cells])
    widths = [max(len(str(r[i])) for r in [head, *rows]) for i in range(len(head))]
    lines = ["  ".join(str(cell).rjust(w) for cell, w in zip(r, widths)) for r in [head, *rows]]
    return "\n".join(lines)


def run_trials(cube, gt, config, trials: int | None = None) -> TrialReport:
    """Repeat sample -> pipeline -> metrics with seeds split off ``config.seed``."""
    from .pipeline import ablate

    stages = config.stages
    return ablate(cube, gt, config, {"run": stages}, trials=trials)["run"]
