"""Divergence-free velocity and diffusivity estimation from concentration series."""

from .dataio import (
    SignalSeries,
    VolumeSeries,
    add_rician_noise,
    read_mask,
    read_series,
    signal_to_concentration,
    write_mask,
    write_series,
)
from .errors import (
    CFLError,
    FormatError,
    GridMismatchError,
    NumericalError,
    PdeflowError,
    UndefinedMetricError,
    ValidationError,
)
from .estimator import EstimatorConfig, FitResult, fit, predict_series
from .fields import (
    DiffusivityParamIso,
    Potentials,
    diffusivity_iso,
    feature_maps,
    velocity_from_potentials,
)
from .grid import DomainMask, Grid3, ScalarField, VectorField, divergence_fd, grad_fd
from .kernels import BACKEND
from .loss import LossConfig, loss_gradients, total_loss
from .metrics import abs_t, mae_maxnorm, mirror_mask, rel_mean, rel_std
from .solver import BoundaryData, Integrator, Mode, SolverConfig, cfl_check, integrate

__version__ = "0.1.0"

__all__ = [
    "SignalSeries",
    "VolumeSeries",
    "add_rician_noise",
    "read_mask",
    "read_series",
    "signal_to_concentration",
    "write_mask",
    "write_series",
    "CFLError",
    "FormatError",
    "GridMismatchError",
    "NumericalError",
    "PdeflowError",
    "UndefinedMetricError",
    "ValidationError",
    "EstimatorConfig",
    "FitResult",
    "fit",
    "predict_series",
    "DiffusivityParamIso",
    "Potentials",
    "diffusivity_iso",
    "feature_maps",
    "velocity_from_potentials",
    "DomainMask",
    "Grid3",
    "ScalarField",
    "VectorField",
    "divergence_fd",
    "grad_fd",
    "BACKEND",
    "LossConfig",
    "loss_gradients",
    "total_loss",
    "abs_t",
    "mae_maxnorm",
    "mirror_mask",
    "rel_mean",
    "rel_std",
    "BoundaryData",
    "Integrator",
    "Mode",
    "SolverConfig",
    "cfl_check",
    "integrate",
]

