"""Spectral-spatial hyperspectral image classification.

Pipeline: nested-sliding-window spectral reconstruction, PCA, one-against-one
nu-SVC with calibrated class probabilities, and smoothed-total-variation
regularization of the probability maps, followed by a per-pixel argmax.
"""
from .core import HsiCube, LabelRaster, ProbabilityTensor, TrainingSet, ValidationError, sample_training_set
from .evaluation import TrialReport, aa, confusion, kappa, oa
from .nsw import NswParams, reconstruct_cube
from .pca import fit_pca, transform
from .pipeline import PipelineConfig, StageError, ablate, run
from .stv import StvParams, classify, smooth_tensor, stv_denoise

__all__ = [
    "HsiCube", "LabelRaster", "ProbabilityTensor", "TrainingSet", "ValidationError", "sample_training_set",
    "TrialReport", "aa", "confusion", "kappa", "oa",
    "NswParams", "reconstruct_cube", "fit_pca", "transform",
    "PipelineConfig", "StageError", "ablate", "run",
    "StvParams", "classify", "smooth_tensor", "stv_denoise",
]
