"""Synthetic PET phantoms: prostate ellipsoid, hot tumour lesions, an
adjacent hot bladder, PSF blur and noise, with exact ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .nrrd import Volume
from .preprocess import CaseRecord

_FWHM_TO_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


@dataclass
class PhantomSpec:
    seed: int = 0
    dims: tuple = (64, 64, 64)
    spacing: tuple = (2.0, 2.0, 2.0)
    prostate_axes_mm: tuple = (22.0, 18.0, 20.0)  # semi-axes
    lesion_count: int = 2
    lesion_radius_mm: tuple = (4.0, 8.0)
    lesion_suv: tuple = (6.0, 12.0)
    background_suv: float = 1.0
    bladder_suv: float = 10.0
    bladder_radius_mm: float = 14.0
    psf_fwhm_mm: float = 5.0
    noise_level: float = 0.05  # additive Gaussian sigma in SUV

    def __post_init__(self):
        if not (1 <= self.lesion_count <= 3):
            raise ValueError("lesion_count must be between 1 and 3")
        if any(d < 8 for d in self.dims):
            raise ValueError("phantom grid too small")


def _mm_grids(spec):
    return np.meshgrid(
        *[(np.arange(spec.dims[a]) - (spec.dims[a] - 1) / 2.0) * spec.spacing[a]
          for a in range(3)],
        indexing="ij")


def generate_phantom(spec, case_id=None):
    """Build one seeded synthetic case.

    PET = background + lesions + bladder hot sphere, blurred by the PSF
    and overlaid with Gaussian noise (clipped at zero). The tumour label
    is the pre-blur lesion voxel set; phantoms carry a perfect histology
    reference equal to the label.
    """
    rng = np.random.default_rng(spec.seed)
    x, y, z = _mm_grids(spec)
    ax, ay, az = spec.prostate_axes_mm
    prostate = (x / ax) ** 2 + (y / ay) ** 2 + (z / az) ** 2 <= 1.0

    lesions = np.zeros(spec.dims, dtype=bool)
    activity = np.full(spec.dims, spec.background_suv, dtype=np.float64)
    for _ in range(spec.lesion_count):
        placed = False
        for _attempt in range(100):
            r = rng.uniform(*spec.lesion_radius_mm)
            # conservative containment: lesion center inside the ellipsoid
            # shrunk by the lesion radius on every semi-axis
            sa = np.array([ax, ay, az]) - r
            if np.any(sa <= 0):
                continue
            c = rng.uniform(-1.0, 1.0, size=3) * sa
            if np.sum((c / sa) ** 2) > 1.0:
                continue
            ball = ((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) <= r ** 2
            if not ball.any():
                continue
            suv = rng.uniform(*spec.lesion_suv)
            lesions |= ball
            activity[ball] = np.maximum(activity[ball], suv)
            placed = True
            break
        if not placed:
            raise RuntimeError(
                "could not place a lesion inside the prostate after 100 attempts")

    # bladder sits superior to the gland and partially overlaps the crop
    bc = (0.0, 0.0, az + 0.8 * spec.bladder_radius_mm)
    bladder = ((x - bc[0]) ** 2 + (y - bc[1]) ** 2 + (z - bc[2]) ** 2
               ) <= spec.bladder_radius_mm ** 2
    activity[bladder & ~prostate] = spec.bladder_suv

    sigma_vox = [spec.psf_fwhm_mm / _FWHM_TO_SIGMA / spec.spacing[a] for a in range(3)]
    pet = ndimage.gaussian_filter(activity, sigma=sigma_vox, mode="nearest")
    pet = pet + rng.normal(0.0, spec.noise_level, size=spec.dims)
    pet = np.clip(pet, 0.0, None).astype(np.float32)

    label = (lesions & prostate).astype(np.float32)
    origin = (0.0, 0.0, 0.0)
    pet_vol = Volume(data=pet, spacing=spec.spacing, origin=origin, kind="pet")
    prostate_vol = Volume(data=prostate.astype(np.float32), spacing=spec.spacing,
                          origin=origin, kind="mask")
    gtv = Volume(data=label, spacing=spec.spacing, origin=origin, kind="mask")
    histo = Volume(data=label.copy(), spacing=spec.spacing, origin=origin, kind="mask")
    return CaseRecord(
        case_id=case_id or f"phantom-{spec.seed}",
        pet=pet_vol, prostate=prostate_vol, gtv_label=gtv, histo_ref=histo)
