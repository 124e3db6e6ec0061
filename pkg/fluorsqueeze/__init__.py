"""Squeezing in the fluorescence of a feedback-controlled two-level atom."""

from .core_types import BlochVector, DensityMatrix, FluorsqueezeError, bloch_from_rho, rho_from_bloch, sigma_phi
from .dynamics import BlochAffine, ModelParams, bloch_affine, equilibrium, liouvillian_apply, validate
from .optimize import ControlSpec, OptimizationResult, OptimizeOptions, grid_scan, objective
from .spectrum import SpectrumSeries, spectrum_quadrature_oracle, spectrum_scan, spectrum_value
from .trajectories import SmeConfig, TrajectoryRecord, estimate_spectrum, simulate_trajectory

__version__ = "0.1.0"
