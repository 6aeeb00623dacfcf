"""Non-uniform FFTs with analytic trajectory Jacobians.

Subpackages cover exact and fast transforms (:mod:`ndft`, :mod:`nufft`),
MRI system models (:mod:`mri`), Jacobian products (:mod:`jacobians`),
solvers, reconstructions, trajectory learning and test-data generation.
"""

from .grid import ComplexImage, ImageGrid, KspaceData, Trajectory, nrmsd, psnr, ssim
from .mri import Encoding, FieldModel, Regularizer, SensitivityMaps
from .nufft import NufftPlan, plan

__version__ = "0.1.0"

__all__ = [
    "ComplexImage",
    "Encoding",
    "FieldModel",
    "ImageGrid",
    "KspaceData",
    "NufftPlan",
    "Regularizer",
    "SensitivityMaps",
    "Trajectory",
    "nrmsd",
    "plan",
    "psnr",
    "ssim",
]
