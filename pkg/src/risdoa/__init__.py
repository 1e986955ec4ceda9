"""Perturbation-aware gridless DOA estimation for RIS-aided UAV swarms."""
from .anm import AnmOptions, DoaEstimate, DualPolynomial, estimate_doa, hyperparameter_t
from .baselines import beamform_spectrum, fft_estimate, omp_estimate, plain_anm
from .crb import FisherInfo, crb_bounds, fisher
from .errors import (ConfigError, FormulationError, IllPosedDictionaryError, InvalidInputError,
                     RisDoaError)
from .harness import ExperimentConfig, SweepResult, rmse, run_sweep
from .model import (ArrayGeometry, RisSchedule, Snapshot, TargetSet, make_ris_schedule,
                    snr_to_noise_variance, steering_matrix, steering_vector, synthesize)
from .perturb import (EstimationResult, GdOptions, RefinementTrace, estimate_signal,
                      grad_angles, grad_perturbation, objective_eta, refine, run_adpp)
from .sdp import AnmSdpProblem, SdpOptions, SdpSolution, formulate, solve
from .transform import TransformMatrix, build_dictionaries, estimate_transform, fit_transform

__all__ = [
    "AnmOptions", "AnmSdpProblem", "ArrayGeometry", "ConfigError", "DoaEstimate",
    "DualPolynomial", "EstimationResult", "ExperimentConfig", "FisherInfo", "FormulationError",
    "GdOptions", "IllPosedDictionaryError", "InvalidInputError", "RefinementTrace", "RisDoaError",
    "RisSchedule", "SdpOptions", "SdpSolution", "Snapshot", "SweepResult", "TargetSet",
    "TransformMatrix", "beamform_spectrum", "build_dictionaries", "crb_bounds", "estimate_doa",
    "estimate_signal", "estimate_transform", "fft_estimate", "fisher", "fit_transform",
    "formulate", "grad_angles", "grad_perturbation", "hyperparameter_t", "make_ris_schedule",
    "objective_eta", "omp_estimate", "plain_anm", "refine", "rmse", "run_adpp", "run_sweep",
    "snr_to_noise_variance", "solve", "steering_matrix", "steering_vector", "synthesize",
]
