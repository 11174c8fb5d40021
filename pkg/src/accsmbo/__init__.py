"""Gradient-accelerated sequential model-based hyperparameter optimisation."""

from .acquisition import (
    EPDF,
    AcquisitionContext,
    MetaRecord,
    expected_improvement,
    fit_epdf,
    meta_ac,
    read_meta_records,
)
from .exceptions import AccSMBOError
from .gp import History, Observation, SurrogateModel, fit_multikernel_grad_gp, fit_standard_gp, predict
from .harness import ExperimentConfig, load_config, run_benchmark
from .kernels import Box, CubicRBF, GaussianRBF, default_kernels
from .objective import LogisticObjective, QuadraticBilevel, SyntheticObjective
from .optimizer import (
    SMBOConfig,
    Trace,
    grid_search,
    hoag_descent,
    random_search,
    run_acc_smbo,
    run_smbo,
)

__all__ = [
    "EPDF", "AcquisitionContext", "MetaRecord", "expected_improvement", "fit_epdf", "meta_ac",
    "read_meta_records", "AccSMBOError", "History", "Observation", "SurrogateModel",
    "fit_multikernel_grad_gp", "fit_standard_gp", "predict", "ExperimentConfig", "load_config",
    "run_benchmark", "Box", "CubicRBF", "GaussianRBF", "default_kernels", "LogisticObjective",
    "QuadraticBilevel", "SyntheticObjective", "SMBOConfig", "Trace", "grid_search", "hoag_descent",
    "random_search", "run_acc_smbo", "run_smbo",
]
