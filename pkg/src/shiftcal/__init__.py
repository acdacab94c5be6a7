"""Calibration of probabilistic classifiers under covariate shift.

Calibrators are fit on labeled source-domain data with each sample's loss
weighted by the density ratio ``p_target(x) / p_source(x)``, which turns the
source loss into an estimate of the target-domain loss.
"""

from .calibration import (
    IsotonicCalibrator,
    PlattCalibrator,
    TemperatureCalibrator,
    apply,
    fit_calibrator,
    fit_isotonic,
    fit_platt,
    fit_temperature,
)
from .dataset import (
    GaussianShiftConfig,
    LabeledDataset,
    MixtureShiftConfig,
    generate_gaussian_shift,
    generate_mixture_shift,
    read_csv,
    split,
    write_csv,
)
from .errors import ShiftCalError
from .importance import (
    ImportanceWeights,
    add_weight_noise,
    clip,
    estimate_weights_discriminator,
    flatten,
    renyi_divergence_estimate,
    self_normalize,
    weighted_loss_variance_diagnostic,
)
from .learner import LearnerConfig, ProbabilisticModel, fit, softmax, weighted_nll
from .metrics import accuracy, ece, nll, reliability_bins

__version__ = "0.1.0"

__all__ = [
    "IsotonicCalibrator",
    "PlattCalibrator",
    "TemperatureCalibrator",
    "apply",
    "fit_calibrator",
    "fit_isotonic",
    "fit_platt",
    "fit_temperature",
    "GaussianShiftConfig",
    "LabeledDataset",
    "MixtureShiftConfig",
    "generate_gaussian_shift",
    "generate_mixture_shift",
    "read_csv",
    "split",
    "write_csv",
    "ShiftCalError",
    "ImportanceWeights",
    "add_weight_noise",
    "clip",
    "estimate_weights_discriminator",
    "flatten",
    "renyi_divergence_estimate",
    "self_normalize",
    "weighted_loss_variance_diagnostic",
    "LearnerConfig",
    "ProbabilisticModel",
    "fit",
    "softmax",
    "weighted_nll",
    "accuracy",
    "ece",
    "nll",
    "reliability_bins",
    "__version__",
]
