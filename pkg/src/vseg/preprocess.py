"""Case assembly and preprocessing: cropping to the network grid,
cohort normalization, and the SUVmax-fraction threshold baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nrrd import Volume, validate_aligned

GRID_SPACING_MM = 2.0


@dataclass
class NormalizationStats:
    """Pooled-voxel mean and standard deviation over all cropped training
    PETs, persisted into the checkpoint."""

    mean: float
    std: float
    cohort_size: int

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError(f"normalization std must be positive, got {self.std}")


@dataclass
class CaseRecord:
    case_id: str
    pet: Volume
    prostate: Volume
    gtv_label: Volume = None
    histo_ref: Volume = None

    def __post_init__(self):
        validate_aligned(self.pet, self.prostate)
        if self.gtv_label is not None:
            validate_aligned(self.pet, self.gtv_label)
        if self.histo_ref is not None:
            validate_aligned(self.pet, self.histo_ref)

    def mask_labels(self):
        """Restrict labels to the prostate contour, in place. Tissue
        outside the gland contour is never trained on or evaluated."""
        pm = self.prostate.data > 0
        if self.gtv_label is not None:
            self.gtv_label.data = (self.gtv_label.data.astype(bool) & pm).astype(np.float32)
        if self.histo_ref is not None:
            self.histo_ref.data = (self.histo_ref.data.astype(bool) & pm).astype(np.float32)
        return self


def _check_grid_spacing(volume, what):
    if any(abs(s - GRID_SPACING_MM) > 1e-6 for s in volume.spacing):
        raise ValueError(
            f"{what} has spacing {volume.spacing} but the network grid is "
            f"{GRID_SPACING_MM} mm isotropic; resample first")


@dataclass
class CropOffset:
    """Start index of the crop window on each axis of the original grid.

    Negative entries mean the original volume was smaller than the crop
    and got zero-padded in front."""

    start: tuple
    original_dims: tuple
    crop: int


def _crop_axis(centroid, n, crop):
    if n <= crop:
        return -((crop - n) // 2)  # pad symmetrically, extra voxel at the back
    start = int(round(centroid - crop / 2))
    return min(max(start, 0), n - crop)


def _extract(data, start, crop, fill=0.0):
    out = np.full((crop, crop, crop), fill, dtype=data.dtype)
    src, dst = [], []
    for a in range(3):
        s = start[a]
        lo = max(s, 0)
        hi = min(s + crop, data.shape[a])
        src.append(slice(lo, hi))
        dst.append(slice(lo - s, hi - s))
    out[tuple(dst)] = data[tuple(src)]
    return out


def crop_to_roi(case, crop=64):
    """Crop all case volumes to a ``crop``-cube centered on the prostate
    centroid (clamped to the volume, zero-padded if the volume is
    smaller). Returns the cropped case and the offset for un-cropping."""
    _check_grid_spacing(case.pet, f"case {case.case_id} PET")
    pm = case.prostate.data > 0
    if not pm.any():
        raise ValueError(f"case {case.case_id}: prostate mask is empty")
    centroid = [c.mean() for c in np.nonzero(pm)]
    dims = case.pet.dims
    start = tuple(_crop_axis(centroid[a], dims[a], crop) for a in range(3))
    offset = CropOffset(start=start, original_dims=dims, crop=crop)

    def cut(vol):
        if vol is None:
            return None
        new_origin = tuple(vol.origin[a] + start[a] * vol.spacing[a] for a in range(3))
        return Volume(data=_extract(vol.data, start, crop), spacing=vol.spacing,
                      origin=new_origin, kind=vol.kind, space=vol.space)

    cropped = CaseRecord(
        case_id=case.case_id,
        pet=cut(case.pet),
        prostate=cut(case.prostate),
        gtv_label=cut(case.gtv_label),
        histo_ref=cut(case.histo_ref),
    )
    return cropped, offset


def uncrop_mask(mask_data, offset, spacing, origin, kind="mask", space="left-posterior-superior"):
    """Place a cropped mask back onto the original grid as a Volume.

    ``origin`` is the original (un-cropped) volume origin."""
    full = np.zeros(offset.original_dims, dtype=np.float32)
    src, dst = [], []
    for a in range(3):
        s = offset.start[a]
        lo = max(s, 0)
        hi = min(s + offset.crop, offset.original_dims[a])
        dst.append(slice(lo, hi))
        src.append(slice(lo - s, hi - s))
    full[tuple(dst)] = mask_data[tuple(src)]
    return Volume(data=full, spacing=spacing, origin=origin, kind=kind, space=space)


def fit_normalization(training_crops):
    """Pooled mean/std over every voxel of every cropped training PET."""
    if not training_crops:
        raise ValueError("fit_normalization needs at least one crop")
    pooled_n = sum(v.data.size for v in training_crops)
    pooled_sum = sum(v.data.sum(dtype=np.float64) for v in training_crops)
    mean = pooled_sum / pooled_n
    pooled_sq = sum(((v.data.astype(np.float64) - mean) ** 2).sum() for v in training_crops)
    std = np.sqrt(pooled_sq / pooled_n)
    if std <= 0:
        raise ValueError("pooled voxel standard deviation is zero; cannot normalize")
    return NormalizationStats(mean=float(mean), std=float(std),
                              cohort_size=len(training_crops))


def apply_normalization(volume, stats):
    """(x - mean) / std, returned as a new Volume."""
    data = ((volume.data.astype(np.float64) - stats.mean) / stats.std).astype(np.float32)
    return Volume(data=data, spacing=volume.spacing, origin=volume.origin,
                  kind=volume.kind, space=volume.space)


def threshold_gtv30(pet, prostate, fraction=0.30):
    """Threshold baseline: voxels inside the prostate at or above
    ``fraction`` of the intraprostatic SUV maximum."""
    validate_aligned(pet, prostate)
    pm = prostate.data > 0
    if not pm.any():
        raise ValueError("prostate mask is empty")
    suv_max = float(pet.data[pm].max())
    mask = pm & (pet.data >= fraction * suv_max)
    return Volume(data=mask.astype(np.float32), spacing=pet.spacing,
                  origin=pet.origin, kind="mask", space=pet.space)
