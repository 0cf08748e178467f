"""Variational fusion of cloud-corrupted high-resolution series with a coarse cloud-free image."""

from .config import FusionConfig
from .fuse import (DescentError, DescentResult, FusionProblem, FusionResult, InfeasibleError, beta_scaling,
                   energy, energy_gradient, make_problem, run_extrapolation, run_interpolation,
                   run_restoration, solve, stationarity)
from .geometry import DirectionalOperator, apply_R, apply_R_adjoint, normal_field
from .metrics import corr, corr_laplace, haarpsi, ndvi, psnr, rmse, rmse_sqrt, ssim
from .predict import PredictionProblem, SolverError, predict_prototype
from .prototype import build_prototypes
from .raster import J1, J2, BandTag, GridSpec, Kernel, MultiBandImage, downsample
from .synth import make_instance, make_scene
from .texture import delta_lower_bound, texture_index_flow, texture_index_static

__version__ = "0.1.0"
