"""Volumes, label masks, cases, and the preprocessing applied before training."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODALITIES = ("FLAIR", "T1", "T1CE", "T2")
LABELS = (0, 1, 2, 3)  # background, NCR/NET, ED, ET (remapped from 4)
DEFAULT_TARGET = (128, 128, 128)


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass(frozen=True)
class LabelMask:
    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.labels.shape


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    modalities: dict[str, Volume]
    mask: LabelMask | None = None

    def __post_init__(self):
        missing = set(MODALITIES) - set(self.modalities)
        if missing:
            raise ValueError(f"case {self.case_id}: missing modalities {sorted(missing)}")
        shapes = {self.modalities[m].shape for m in MODALITIES}
        if len(shapes) != 1:
            raise ValueError(f"case {self.case_id}: modality shapes differ {sorted(shapes)}")
        if self.mask is not None and self.mask.shape != self.shape:
            raise ValueError(f"case {self.case_id}: mask shape {self.mask.shape} != {self.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.modalities[MODALITIES[0]].shape


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)


def minmax_normalize(data: np.ndarray) -> np.ndarray:
    """``(v - min) / (max - min)``; a constant volume maps to zeros."""
    data = np.asarray(data, dtype=np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        return np.zeros(data.shape, dtype=np.float32)
    return ((data - lo) / (hi - lo)).astype(np.float32)


def crop_offsets(shape, target) -> tuple[int, ...]:
    if len(shape) != len(target):
        raise ValueError(f"target {target} rank differs from input {shape}")
    if any(t > s for s, t in zip(shape, target)):
        raise ValueError(f"crop target {tuple(target)} exceeds input extents {tuple(shape)}")
    return tuple((s - t) // 2 for s, t in zip(shape, target))


def center_crop(data: np.ndarray, target) -> np.ndarray:
    off = crop_offsets(data.shape, target)
    return data[tuple(slice(o, o + t) for o, t in zip(off, target))]


def remap_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    bad = set(np.unique(labels).tolist()) - {0, 1, 2, 3, 4}
    if bad:
        raise ValueError(f"unexpected labels {sorted(bad)}")
    return np.where(labels == 4, 3, labels).astype(np.uint8)


def preprocess_case(case: CaseRecord, target=DEFAULT_TARGET) -> CaseRecord:
    """Center-crop every modality and the mask, min-max normalise each modality,
    and move label 4 onto 3."""
    target = tuple(int(t) for t in target)
    crop_offsets(case.shape, target)
    mods = {m: Volume(minmax_normalize(center_crop(case.modalities[m].data, target)), case.modalities[m].spacing)
            for m in MODALITIES}
    mask = None
    if case.mask is not None:
        mask = LabelMask(remap_labels(center_crop(case.mask.labels, target)), case.mask.spacing)
    return CaseRecord(case.case_id, mods, mask)


def derive_regions(mask) -> dict[str, np.ndarray]:
    """Nested composite regions: WT = {1,2,3}, TC = {1,3}, ET = {3}."""
    labels = mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)
    if labels.size and (labels.min() < 0 or labels.max() > 3):
        raise ValueError("labels must lie in {0, 1, 2, 3}; remap 4 -> 3 first")
    return {"WT": labels > 0, "TC": (labels == 1) | (labels == 3), "ET": labels == 3}


def split_dataset(case_ids, ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    ids = list(case_ids)
    if len(ids) < 2:
        raise ValueError("need at least 2 cases to split")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(ratio * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]), seed)
