"""Report generation: per-case and aggregate metric JSON, run comparisons."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..metrics import (EvalReport, aggregate_reports, classification_metrics, confusion_counts,
                       evaluate_segmentation)
from ..stats import kruskal_wallis, one_way_anova
from ..voxio import discover_cases, read_nifti
from ..voxio.layout import MASK_SUFFIX, find_image

PRED_SUFFIX = "pred"
REPORT_NAME = "report.json"


def dumps(obj) -> str:
    """Canonical JSON used for every report file (stable key order)."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def evaluate_files(pred_path, truth_path, spacing=None) -> EvalReport:
    _, pred = read_nifti(pred_path, "mask")
    _, truth = read_nifti(truth_path, "mask")
    if pred.shape != truth.shape:
        raise ValueError(f"misaligned pair: {pred_path} {pred.shape} vs {truth_path} {truth.shape}")
    return evaluate_segmentation(pred.labels, truth.labels, spacing=spacing)


def evaluate_dirs(pred_dir, truth_dir) -> dict:
    """Match ``<pred_dir>/<id>/<id>_pred.nii`` with ``<truth_dir>/<id>/<id>_seg.nii``.

    Both sides must name exactly the same cases.
    """
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    pred_ids = sorted(p.name for p in pred_dir.iterdir() if p.is_dir() and find_image(p, p.name, PRED_SUFFIX))
    truth_ids = sorted(c for c in discover_cases(truth_dir) if find_image(truth_dir / c, c, MASK_SUFFIX))
    if pred_ids != truth_ids:
        missing = sorted(set(truth_ids) ^ set(pred_ids))
        raise ValueError(f"misaligned prediction/truth cases: {missing}")
    if not pred_ids:
        raise ValueError(f"no predictions under {pred_dir}")
    reports = {cid: evaluate_files(find_image(pred_dir / cid, cid, PRED_SUFFIX), find_image(truth_dir / cid, cid, MASK_SUFFIX))
               for cid in pred_ids}
    return {"cases": {cid: r.to_dict() for cid, r in reports.items()},
            "aggregate": aggregate_reports(list(reports.values()))}


def classification_report(pred_labels, true_labels) -> dict:
    counts = confusion_counts(np.asarray(pred_labels), np.asarray(true_labels))
    out = classification_metrics(counts)
    out["samples"] = int(len(np.asarray(true_labels)))
    return out


def case_values(report: dict, metric: str) -> list[float]:
    """Per-case scalar (macro where applicable) values of ``metric``, ordered by case id."""
    vals = []
    for cid in sorted(report["cases"]):
        v = report["cases"][cid][metric]
        v = v["macro"] if isinstance(v, dict) else v
        if v is not None:
            vals.append(float(v))
    return vals


def compare_runs(run_dirs: Sequence, metric: str = "dice") -> dict:
    """ANOVA and Kruskal-Wallis across runs on their per-case ``metric``."""
    if len(run_dirs) < 2:
        raise ValueError("need at least two runs to compare")
    groups = {}
    for d in run_dirs:
        path = Path(d) / REPORT_NAME if Path(d).is_dir() else Path(d)
        groups[str(d)] = case_values(json.loads(path.read_text()), metric)
    f, pf = one_way_anova(list(groups.values()))
    h, ph = kruskal_wallis(list(groups.values()))
    return {"metric": metric, "groups": groups,
            "anova": {"F": f, "p": pf}, "kruskal_wallis": {"H": h, "p": ph}}
