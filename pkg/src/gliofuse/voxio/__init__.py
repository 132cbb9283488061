from .layout import MASK_SUFFIX, SUFFIXES, discover_cases, find_image, load_case, load_cases, read_nifti, save_case, write_nifti
from .nifti import DATATYPES, HEADER_SIZE, VOX_OFFSET, NiftiError, NiftiHeader, read_nifti_array, write_nifti_array
from .volumes import (
    DEFAULT_TARGET,
    LABELS,
    MODALITIES,
    CaseRecord,
    DatasetSplit,
    LabelMask,
    Volume,
    center_crop,
    crop_offsets,
    derive_regions,
    minmax_normalize,
    preprocess_case,
    remap_labels,
    split_dataset,
)
