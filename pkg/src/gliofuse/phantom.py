"""Synthetic multimodal tumour phantoms and the training-time augmentations.

A phantom is a brain-shaped ellipsoid holding one tumour built from
concentric ellipsoidal shells: necrotic core (1) inside, enhancing rim (3)
around it, oedema (2) outermost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .voxio import MODALITIES, CaseRecord, LabelMask, Volume, minmax_normalize

# intensity per tissue: outside-head, brain, NCR, ED, ET
INTENSITY = {
    "FLAIR": (0.0, 0.30, 0.50, 0.90, 0.60),
    "T1": (0.0, 0.50, 0.25, 0.40, 0.30),
    "T1CE": (0.0, 0.45, 0.15, 0.40, 0.95),
    "T2": (0.0, 0.35, 0.85, 0.80, 0.55),
}
_TISSUE = {"outside": 0, "brain": 1, 1: 2, 2: 3, 3: 4}


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (32, 32, 32)
    tumor_center: tuple[float, float, float] | None = None
    radii: tuple[float, float, float] = (3.0, 5.0, 8.0)  # r_ncr < r_et < r_ed
    aspect: tuple[float, float, float] = (1.0, 1.0, 1.0)
    noise_sigma: float = 0.02
    seed: int = 0

    @property
    def center(self) -> tuple[float, ...]:
        if self.tumor_center is not None:
            return tuple(float(c) for c in self.tumor_center)
        return tuple((s - 1) / 2 for s in self.shape)

    def validate(self) -> None:
        r_ncr, r_et, r_ed = self.radii
        if not 0 < r_ncr < r_et < r_ed:
            raise ValueError(f"radii must be strictly increasing and positive, got {self.radii}")
        for c, s, a in zip(self.center, self.shape, self.aspect):
            if c - r_ed * a < 0 or c + r_ed * a > s - 1:
                raise ValueError(f"tumour (center {self.center}, r_ed {r_ed}) does not fit inside {self.shape}")


def phantom_labels(spec: PhantomSpec) -> np.ndarray:
    spec.validate()
    grids = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in spec.shape], indexing="ij")
    dist = np.sqrt(sum(((g - c) / a) ** 2 for g, c, a in zip(grids, spec.center, spec.aspect)))
    r_ncr, r_et, r_ed = spec.radii
    labels = np.zeros(spec.shape, dtype=np.uint8)
    labels[dist < r_ed] = 2
    labels[dist < r_et] = 3
    labels[dist < r_ncr] = 1
    return labels


def _brain_mask(shape) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij")
    d = sum(((g - (s - 1) / 2) / (0.48 * s)) ** 2 for g, s in zip(grids, shape))
    return d <= 1.0


def generate_case(spec: PhantomSpec, case_id: str = "phantom") -> CaseRecord:
    """Deterministic four-modality case with a matching label mask."""
    labels = phantom_labels(spec)
    tissue = np.where(_brain_mask(spec.shape), 1, 0)
    for lab in (1, 2, 3):
        tissue[labels == lab] = _TISSUE[lab]
    rng = np.random.default_rng(spec.seed)
    mods = {}
    for m in MODALITIES:
        clean = np.asarray(INTENSITY[m])[tissue]
        noisy = clean + rng.normal(0.0, spec.noise_sigma, spec.shape) if spec.noise_sigma else clean
        mods[m] = Volume(minmax_normalize(noisy))
    return CaseRecord(case_id, mods, LabelMask(labels))


def random_spec(rng: np.random.Generator, shape=(32, 32, 32), noise_sigma: float = 0.02) -> PhantomSpec:
    """Tumour geometry varied across cases, always inside the volume."""
    m = min(shape)
    r_ed = rng.uniform(0.2, 0.3) * m
    # fractions chosen so every dominant-label regime occurs across a cohort
    f_ncr = rng.uniform(0.15, 0.7)
    f_et = rng.uniform(f_ncr + 0.1, 0.92)
    aspect = tuple(rng.uniform(0.85, 1.15, 3))
    margin = [r_ed * a + 1 for a in aspect]
    center = tuple(rng.uniform(mg, s - 1 - mg) for s, mg in zip(shape, margin))
    return PhantomSpec(tuple(shape), center, (f_ncr * r_ed, f_et * r_ed, r_ed), aspect, noise_sigma,
                       int(rng.integers(2**31)))


def generate_cohort(n: int, shape=(32, 32, 32), seed: int = 0, noise_sigma: float = 0.02,
                    prefix: str = "phantom") -> list[CaseRecord]:
    rng = np.random.default_rng(seed)
    return [generate_case(random_spec(rng, shape, noise_sigma), f"{prefix}_{i:03d}") for i in range(n)]


@dataclass(frozen=True)
class AugmentConfig:
    rotation_degrees: float = 10.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    noise_sigma: float = 0.01
    contrast_range: tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not lo <= 1 <= hi:
            raise ValueError("scale_range must bracket 1")
        lo, hi = self.contrast_range
        if not lo <= 1 <= hi:
            raise ValueError("contrast_range must bracket 1")
        if self.rotation_degrees < 0 or self.noise_sigma < 0:
            raise ValueError("rotation and noise magnitudes must be non-negative")


IDENTITY_AUGMENT = AugmentConfig(0.0, (1.0, 1.0), 0.0, (1.0, 1.0))


@dataclass(frozen=True)
class AugmentDraw:
    angle: float
    scale: float
    gamma: float
    noise_seed: int


def draw_augmentation(config: AugmentConfig, draw_seed: int) -> AugmentDraw:
    rng = np.random.default_rng([config.seed, draw_seed])
    angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees)
    scale = rng.uniform(*config.scale_range)
    gamma = rng.uniform(*config.contrast_range)
    return AugmentDraw(float(angle), float(scale), float(gamma), int(rng.integers(2**31)))


def rotate_scale(data: np.ndarray, angle: float, scale: float, order: int) -> np.ndarray:
    """In-plane (axes 0, 1) rotation about the volume centre plus isotropic
    in-plane scaling.  Right-angle rotations at unit scale are exact."""
    if scale == 1.0 and angle % 90 == 0:
        return np.rot90(data, k=int(angle // 90) % 4, axes=(0, 1)).copy()
    theta = np.deg2rad(angle)
    c, s = np.cos(theta), np.sin(theta)
    # output -> input coordinate map
    inv = np.eye(data.ndim)
    inv[:2, :2] = np.array([[c, s], [-s, c]]) / scale
    centre = (np.asarray(data.shape, dtype=np.float64) - 1) / 2
    offset = centre - inv @ centre
    return ndimage.affine_transform(data, inv, offset=offset, order=order, mode="nearest")


def adjust_intensity(data: np.ndarray, gamma: float, sigma: float, rng: np.random.Generator,
                     clamp: bool = True) -> np.ndarray:
    """Gamma contrast then Gaussian noise truncated at 4 sigma; values stay in
    [0, 1 + 4 sigma] before the final clamp to [0, 1]."""
    out = np.clip(data, 0.0, 1.0) ** gamma if gamma != 1.0 else np.asarray(data)
    if sigma > 0:
        out = np.maximum(out + np.clip(rng.normal(0.0, sigma, out.shape), -4 * sigma, 4 * sigma), 0.0)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32, copy=False)


def augment_arrays(images: np.ndarray, labels: np.ndarray | None, config: AugmentConfig, draw_seed: int):
    """Augment a ``(C, *S)`` image stack and optional ``S``-shaped label map.

    One draw is shared by every channel and the labels; spatial axes 0 and 1
    of ``S`` form the rotation plane (images linear, labels nearest).
    """
    d = draw_augmentation(config, draw_seed)
    geometric = not (d.angle == 0 and d.scale == 1.0)
    rng = np.random.default_rng(d.noise_seed)
    out = []
    for v in images:
        if geometric:
            v = rotate_scale(v, d.angle, d.scale, order=1)
        if d.gamma != 1.0 or config.noise_sigma > 0:
            v = adjust_intensity(v, d.gamma, config.noise_sigma, rng)
        out.append(v)
    images = np.stack(out)
    if labels is not None and geometric:
        labels = rotate_scale(labels, d.angle, d.scale, order=0).astype(np.uint8)
    return images, labels


def augment_case(case: CaseRecord, config: AugmentConfig, draw_seed: int) -> CaseRecord:
    """One random rotation / scale / contrast / noise draw, shared by every
    modality and the mask (images trilinear, mask nearest-neighbour)."""
    stack = [case.modalities[m].data for m in MODALITIES]
    labels = case.mask.labels if case.mask is not None else None
    images, labels = augment_arrays(stack, labels, config, draw_seed)
    mods = {m: Volume(v, case.modalities[m].spacing) for m, v in zip(MODALITIES, images)}
    mask = LabelMask(labels, case.mask.spacing) if case.mask is not None else None
    return CaseRecord(case.case_id, mods, mask)
