"""Reflectance-based segmentation and bias-field correction toolkit."""

from .estimator import ReflectanceSegmenter, image_to_log
from .grid import GaussianKernel, VectorField2, clip_field, divergence, gaussian_convolve, gradient, laplacian
from .metrics import ConfusionCounts, UndefinedMetricError, confusion, dice, precision, rtg_ratio, tenengrad
from .pgmio import INTENSITY_FLOOR, PgmParseError, RasterImage, from_log_domain, read_pgm, to_log_domain, write_pgm, write_report
from .prior import StructuralPrior, build_v_pre, prior_energy, structure_op, structure_op_adjoint
from .solver import SegmentationResult, SolverParams, run
from .spectral import NeumannSpectrum, dct2_forward, dct2_inverse, solve_bias, solve_helmholtz
from .synth import BiasSpec, NoiseSpec, PhantomSpec, apply_noise, generate

__version__ = "0.1.0"

__all__ = [
    "BiasSpec",
    "ConfusionCounts",
    "GaussianKernel",
    "INTENSITY_FLOOR",
    "NeumannSpectrum",
    "NoiseSpec",
    "PgmParseError",
    "PhantomSpec",
    "RasterImage",
    "ReflectanceSegmenter",
    "SegmentationResult",
    "SolverParams",
    "StructuralPrior",
    "UndefinedMetricError",
    "VectorField2",
    "apply_noise",
    "build_v_pre",
    "clip_field",
    "confusion",
    "dice",
    "dct2_forward",
    "dct2_inverse",
    "divergence",
    "from_log_domain",
    "gaussian_convolve",
    "generate",
    "gradient",
    "image_to_log",
    "laplacian",
    "precision",
    "prior_energy",
    "read_pgm",
    "rtg_ratio",
    "run",
    "solve_bias",
    "solve_helmholtz",
    "structure_op",
    "structure_op_adjoint",
    "tenengrad",
    "to_log_domain",
    "write_pgm",
    "write_report",
]
