"""Volumetric PET tumour segmentation toolkit.

A self-contained pipeline for delineating intraprostatic tumour volume
on PET images: NRRD volume I/O, multi-method resampling to a 2 mm grid,
a 3-level 3D U-Net on a numpy reverse-mode autodiff engine, dice-loss
training, and a surface-distance evaluation suite, exercised end to end
on synthetic phantoms.
"""

from .autodiff import LabelTensor, Tensor
from .nrrd import Volume, read_nrrd, validate_aligned, write_nrrd
from .preprocess import CaseRecord, NormalizationStats
from .resample import ResampleSpec, resample
from .unet import UNetConfig

__version__ = "0.1.0"

__all__ = [
    "Tensor", "LabelTensor", "Volume", "read_nrrd", "write_nrrd",
    "validate_aligned", "CaseRecord", "NormalizationStats", "ResampleSpec",
    "resample", "UNetConfig", "__version__",
]
