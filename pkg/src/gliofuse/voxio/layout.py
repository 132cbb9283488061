"""BraTS directory layout: one folder per case holding ``<id>_<suffix>.nii[.gz]``."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .nifti import NiftiHeader, read_nifti_array, write_nifti_array
from .volumes import MODALITIES, CaseRecord, LabelMask, Volume

SUFFIXES = {"FLAIR": "flair", "T1": "t1", "T1CE": "t1ce", "T2": "t2"}
MASK_SUFFIX = "seg"


def read_nifti(path, kind: str = "auto"):
    """``(header, Volume | LabelMask)``.

    ``kind="auto"`` yields a LabelMask for 8-bit integer data and a Volume
    otherwise; pass ``"volume"`` or ``"mask"`` to force one.
    """
    hdr, data = read_nifti_array(path)
    spacing = tuple(hdr.voxel_spacing[:3])
    if kind == "auto":
        kind = "mask" if hdr.datatype_code in (2, 256) and hdr.scl_slope in (0, 1) else "volume"
    if kind == "mask":
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(data == np.round(data)):
                raise ValueError(f"{path}: non-integer values in a label image")
        return hdr, LabelMask(data.astype(np.uint8), spacing)
    if kind == "volume":
        return hdr, Volume(data.astype(np.float32, copy=False), spacing)
    raise ValueError(f"unknown kind {kind!r}")


def write_nifti(path, header: NiftiHeader | None, grid) -> None:
    """Volumes are stored as float32, masks as uint8."""
    if isinstance(grid, Volume):
        arr, spacing = grid.data.astype(np.float32), grid.spacing
    elif isinstance(grid, LabelMask):
        arr, spacing = grid.labels.astype(np.uint8), grid.spacing
    else:
        arr, spacing = np.asarray(grid), None
    if header is None:
        header = NiftiHeader.for_array(arr, spacing)
    write_nifti_array(path, header, arr)


def find_image(folder: Path, case_id: str, suffix: str) -> Path | None:
    for ext in (".nii", ".nii.gz"):
        p = folder / f"{case_id}_{suffix}{ext}"
        if p.exists():
            return p
    return None


def discover_cases(root) -> list[str]:
    """Case ids under ``root``: folders containing all four modality files."""
    root = Path(root)
    found = []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        if all(find_image(folder, folder.name, s) for s in SUFFIXES.values()):
            found.append(folder.name)
    return found


def load_case(root, case_id: str, require_mask: bool = False) -> CaseRecord:
    folder = Path(root) / case_id
    mods = {}
    for m in MODALITIES:
        p = find_image(folder, case_id, SUFFIXES[m])
        if p is None:
            raise FileNotFoundError(f"{folder}: no {SUFFIXES[m]} image")
        mods[m] = read_nifti(p, "volume")[1]
    seg = find_image(folder, case_id, MASK_SUFFIX)
    if seg is None and require_mask:
        raise FileNotFoundError(f"{folder}: no segmentation mask")
    mask = read_nifti(seg, "mask")[1] if seg is not None else None
    return CaseRecord(case_id, mods, mask)


def load_cases(root, require_mask: bool = False) -> list[CaseRecord]:
    return [load_case(root, cid, require_mask) for cid in discover_cases(root)]


def save_case(root, case: CaseRecord) -> Path:
    folder = Path(root) / case.case_id
    folder.mkdir(parents=True, exist_ok=True)
    for m in MODALITIES:
        write_nifti(folder / f"{case.case_id}_{SUFFIXES[m]}.nii", None, case.modalities[m])
    if case.mask is not None:
        write_nifti(folder / f"{case.case_id}_{MASK_SUFFIX}.nii", None, case.mask)
    return folder
