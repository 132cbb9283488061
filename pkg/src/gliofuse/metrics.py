"""Segmentation and classification metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

NUM_CLASSES = 4
RATE_METRICS = ("accuracy", "precision", "recall", "f1", "iou", "specificity")
REPORT_KEYS = ("dice", "total_dice", "accuracy", "precision", "recall", "f1", "iou", "specificity", "hausdorff")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def total(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0])


def _check_labels(pred, truth, num_classes):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    for a in (pred, truth):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise ValueError(f"labels outside [0, {num_classes})")
    return pred.astype(np.int64).ravel(), truth.astype(np.int64).ravel()


def confusion_counts(pred, truth, num_classes: int = NUM_CLASSES) -> ConfusionCounts:
    """One-vs-rest counts per class."""
    p, t = _check_labels(pred, truth, num_classes)
    cm = np.bincount(t * num_classes + p, minlength=num_classes ** 2).reshape(num_classes, num_classes)
    tp = np.diag(cm).copy()
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = p.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num, den, empty: float = 0.0) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.full(num.shape, empty)
    np.divide(num, den, out=out, where=den > 0)
    return out


def classification_metrics(counts: ConfusionCounts) -> dict[str, dict]:
    """Per-class and macro (unweighted mean) rates; 0/0 gives 0, except
    specificity which is 1 when there are no negatives to misclassify."""
    tp, fp, fn, tn = (np.asarray(x, dtype=np.float64) for x in (counts.tp, counts.fp, counts.fn, counts.tn))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    per_class = {
        "accuracy": _ratio(tp + tn, tp + fp + fn + tn),
        "precision": precision,
        "recall": recall,
        "f1": _ratio(2 * precision * recall, precision + recall),
        "iou": _ratio(tp, tp + fp + fn),
        "specificity": _ratio(tn, tn + fp, empty=1.0),
    }
    return {k: {"per_class": v.tolist(), "macro": float(v.mean())} for k, v in per_class.items()}


def dice_coefficient(pred, truth, smooth: float = 1.0) -> float:
    """``(2 |A & B| + s) / (|A| + |B| + s)`` on binary masks."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    inter = np.count_nonzero(pred & truth)
    return (2.0 * inter + smooth) / (np.count_nonzero(truth) + np.count_nonzero(pred) + smooth)


def per_class_dice(pred, truth, smooth: float = 1.0, num_classes: int = NUM_CLASSES) -> np.ndarray:
    p, t = _check_labels(pred, truth, num_classes)
    return np.array([dice_coefficient(p == c, t == c, smooth) for c in range(num_classes)])


def total_dice(pred, truth, smooth: float = 1.0, num_classes: int = NUM_CLASSES) -> float:
    """Mean smoothed Dice over all classes, background included."""
    return float(per_class_dice(pred, truth, smooth, num_classes).mean())


def mean_foreground_dice(pred, truth, smooth: float = 1.0, num_classes: int = NUM_CLASSES) -> float:
    return float(per_class_dice(pred, truth, smooth, num_classes)[1:].mean())


def _as_points(a, spacing=None) -> np.ndarray:
    a = np.asarray(a)
    pts = np.argwhere(a) if a.dtype == bool else a.reshape(len(a), -1)
    pts = pts.astype(np.float64)
    if spacing is not None:
        pts = pts * np.asarray(spacing, dtype=np.float64)
    return pts


def _directed_brute(a: np.ndarray, b: np.ndarray) -> float:
    """max over a of the squared-distance minimum over b, rooted once."""
    worst = 0.0
    chunk = max(1, 2_000_000 // len(b))
    for i in range(0, len(a), chunk):
        diff = a[i:i + chunk, None, :] - b[None, :, :]
        worst = max(worst, float(np.einsum("ijk,ijk->ij", diff, diff).min(axis=1).max()))
    return float(np.sqrt(worst))


def hausdorff(a, b, spacing=None, accelerate: bool = True) -> float:
    """Symmetric Hausdorff distance between two point sets.

    ``a`` and ``b`` are boolean masks (every True voxel is a point) or
    ``(n, d)`` coordinate arrays.  ``spacing`` scales each axis (e.g. mm);
    the default is voxel units.  The KD-tree path returns exactly the brute
    force value.
    """
    pa, pb = _as_points(a, spacing), _as_points(b, spacing)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("hausdorff needs two non-empty point sets")
    if not accelerate:
        return max(_directed_brute(pa, pb), _directed_brute(pb, pa))
    da = cKDTree(pb).query(pa, k=1)[0].max()
    db = cKDTree(pa).query(pb, k=1)[0].max()
    return float(max(da, db))


@dataclass
class EvalReport:
    """Per-class and macro metrics for one case (or an aggregate)."""
    dice_per_class: list[float]
    total_dice: float
    rates: dict[str, dict]
    hausdorff: float | None

    @property
    def dice(self) -> float:
        return float(np.mean(self.dice_per_class[1:]))

    def to_dict(self) -> dict:
        out = {"dice": {"per_class": list(self.dice_per_class), "macro": self.dice},
               "total_dice": self.total_dice}
        for k in RATE_METRICS:
            out[k] = self.rates[k]
        out["hausdorff"] = self.hausdorff
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def scalar(self, metric: str) -> float | None:
        d = self.to_dict()[metric]
        return d["macro"] if isinstance(d, dict) else d


def evaluate_segmentation(pred, truth, smooth: float = 1.0, spacing=None) -> EvalReport:
    """Full report for one label map against the truth.  Hausdorff is taken
    between the foreground (label > 0) voxel sets; 0 when both are empty and
    ``None`` when only one is."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    counts = confusion_counts(pred, truth)
    fg_p, fg_t = pred > 0, truth > 0
    if not fg_p.any() and not fg_t.any():
        hd = 0.0
    elif fg_p.any() and fg_t.any():
        hd = hausdorff(fg_p, fg_t, spacing)
    else:
        hd = None
    return EvalReport(per_class_dice(pred, truth, smooth).tolist(), total_dice(pred, truth, smooth),
                      classification_metrics(counts), hd)


def aggregate_reports(reports: list[EvalReport]) -> dict:
    """Mean of every per-class and macro value across cases."""
    if not reports:
        raise ValueError("no reports to aggregate")
    dicts = [r.to_dict() for r in reports]
    out = {}
    for k in REPORT_KEYS:
        vals = [d[k] for d in dicts]
        if k == "hausdorff":
            finite = [v for v in vals if v is not None]
            out[k] = float(np.mean(finite)) if finite else None
        elif isinstance(vals[0], dict):
            out[k] = {"per_class": np.mean([v["per_class"] for v in vals], axis=0).tolist(),
                      "macro": float(np.mean([v["macro"] for v in vals]))}
        else:
            out[k] = float(np.mean(vals))
    return out
