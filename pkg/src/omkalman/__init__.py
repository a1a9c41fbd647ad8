"""Continuous-time Gaussian state-space toolkit for monitored
cavity-optomechanical systems: model assembly, correlated-noise simulation,
Kalman estimation and innovation-based consistency checking."""

from .consistency import (InnovationReport, build_report, gaussianity_report,
                          in_band_fraction, innovation_stats,
                          normalize_innovations, periodogram,
                          reference_innovation_means, welch_spectrum)
from .kalman import (FilterRun, KalmanState, filter_run_to_csv, kalman_gain,
                     load_filter_run, riccati_rhs, run_filter,
                     save_filter_run, steady_state_covariance,
                     steady_state_discrete, uncertainty_ellipse,
                     unconditional_covariance)
from .noise import (ShapingFilter, broadband_filter, direct_detection_spectrum,
                    filter_spectrum, frequency_noise_spectrum,
                    homodyne_spectrum, lorentzian_line, self_homodyne_gain)
from .optomech import (BeamParams, DerivedParams, PhysicalParams,
                       assemble_full_model, build_cavity_model,
                       build_homodyne_model, build_loss_model, derive_params,
                       power_for_coupling, state_labels)
from .sim import (Trajectory, load_trajectory, save_trajectory, simulate,
                  thermal_occupation, trajectory_to_csv)
from .statespace import (DiscreteModel, ScheduleEntry, StateSpaceModel,
                         augment_colored_noise, discretize, load_model,
                         output_noise_spectrum, parallel_connect, save_model,
                         series_connect, stationary_covariance,
                         transfer_function, validate)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "StateSpaceModel", "DiscreteModel", "ScheduleEntry",
    "series_connect", "parallel_connect", "augment_colored_noise",
    "discretize", "transfer_function", "output_noise_spectrum",
    "stationary_covariance", "validate", "save_model", "load_model",
    "ShapingFilter", "lorentzian_line", "broadband_filter", "filter_spectrum",
    "self_homodyne_gain", "frequency_noise_spectrum",
    "direct_detection_spectrum", "homodyne_spectrum",
    "BeamParams", "PhysicalParams", "DerivedParams", "derive_params",
    "power_for_coupling", "build_cavity_model", "build_loss_model",
    "build_homodyne_model", "assemble_full_model", "state_labels",
    "Trajectory", "simulate", "thermal_occupation", "save_trajectory",
    "load_trajectory", "trajectory_to_csv",
    "KalmanState", "FilterRun", "kalman_gain", "riccati_rhs",
    "steady_state_covariance", "steady_state_discrete", "run_filter",
    "unconditional_covariance", "uncertainty_ellipse", "save_filter_run",
    "load_filter_run", "filter_run_to_csv",
    "InnovationReport", "normalize_innovations", "innovation_stats",
    "periodogram", "welch_spectrum", "in_band_fraction", "gaussianity_report",
    "build_report", "reference_innovation_means",
]
