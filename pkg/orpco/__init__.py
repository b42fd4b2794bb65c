"""
orpco: offline reliable process-control optimization.

Learns control policies for industrial processes from logged data. An
ensemble of conditional GANs models p(y | x, u); actions are scored with an
epistemic-uncertainty-penalized Monte-Carlo reward and searched with Bayesian
optimization (discrete control) or offline DDPG (continuous control).
Off-policy estimators score the resulting policies on held-out records.

Example usage:
    from orpco import load_config, load_dataset, split, train_ensemble, calibrate

    config = load_config("configs/discrete.yaml")
    dataset = load_dataset("data/process.csv")
    train, test = split(dataset, [0.8, 0.2], seed=0)
    ensemble = train_ensemble(train.fit_normalization(), 5, config.ensemble.cgan, seed=0)
"""

from .errors import (
    OrpcoError,
    ConfigError,
    DataError,
    ParseError,
    ValidationError,
    TrainingError,
    ModelStateError,
    NumericalError,
    EvaluationError,
)
from .config import ExperimentConfig, load_config, apply_smoke
from .data import (
    VariableSpace,
    DatasetSchema,
    ProcessRecord,
    ProcessDataset,
    Normalizer,
    Trajectory,
    load_dataset,
    save_dataset,
    split,
    carve_validation,
    randomize_dims,
    randomize_inputs,
)
from .synthetic import GeneratorSpec, GroundTruth, generate_synthetic_discrete, SyntheticBandit
from .function_approx import Mlp, MlpSpec, AdamOptimizer, soft_update, derive_seed
from .dynamics_cgan import DynamicsEnsemble, train_cgan, train_ensemble, energy_distance
from .dynamics_gpn import GpnModel, train_gpn, grid_search_gpn, train_gpn_ensemble
from .reward_eval import (
    RewardFunction,
    PenaltyCalibration,
    UncertaintyReport,
    Evaluator,
    tolerance_box_reward,
    ib_reward,
    squared_hellinger,
    compute_kappa,
    compute_varkappa,
    penalized_reward,
    calibrate,
    make_evaluator,
)
from .discrete_policy import DiscretePolicy, policy_value_true, policy_value_logging
from .continuous_policy import DdpgAgent, ReplayBuffer, train_offline_ddpg, evaluate_policy
from .ib_surrogate import IbEnvironment, IbState, ib_schema, rollout_dataset
from .ope import (
    OpeReport,
    RewardPredictor,
    fit_logging_propensity,
    fit_target_propensity,
    estimate_dm,
    estimate_ips,
    estimate_wis,
    estimate_dr,
    evaluate_ope,
)
from .plotting import compose_grid, line_plot, histogram_plot
from .logging_config import setup_logging, get_logger

__version__ = "0.1.0"
__all__ = [
    # Errors
    "OrpcoError",
    "ConfigError",
    "DataError",
    "ParseError",
    "ValidationError",
    "TrainingError",
    "ModelStateError",
    "NumericalError",
    "EvaluationError",
    # Config
    "ExperimentConfig",
    "load_config",
    "apply_smoke",
    # Data
    "VariableSpace",
    "DatasetSchema",
    "ProcessRecord",
    "ProcessDataset",
    "Normalizer",
    "Trajectory",
    "load_dataset",
    "save_dataset",
    "split",
    "carve_validation",
    "randomize_dims",
    "randomize_inputs",
    "GeneratorSpec",
    "GroundTruth",
    "generate_synthetic_discrete",
    "SyntheticBandit",
    # Networks
    "Mlp",
    "MlpSpec",
    "AdamOptimizer",
    "soft_update",
    "derive_seed",
    # Dynamics
    "DynamicsEnsemble",
    "train_cgan",
    "train_ensemble",
    "energy_distance",
    "GpnModel",
    "train_gpn",
    "grid_search_gpn",
    "train_gpn_ensemble",
    # Reward evaluation
    "RewardFunction",
    "PenaltyCalibration",
    "UncertaintyReport",
    "Evaluator",
    "tolerance_box_reward",
    "ib_reward",
    "squared_hellinger",
    "compute_kappa",
    "compute_varkappa",
    "penalized_reward",
    "calibrate",
    "make_evaluator",
    # Policies
    "DiscretePolicy",
    "policy_value_true",
    "policy_value_logging",
    "DdpgAgent",
    "ReplayBuffer",
    "train_offline_ddpg",
    "evaluate_policy",
    "IbEnvironment",
    "IbState",
    "ib_schema",
    "rollout_dataset",
    # Off-policy evaluation
    "OpeReport",
    "RewardPredictor",
    "fit_logging_propensity",
    "fit_target_propensity",
    "estimate_dm",
    "estimate_ips",
    "estimate_wis",
    "estimate_dr",
    "evaluate_ope",
    # Plotting
    "compose_grid",
    "line_plot",
    "histogram_plot",
    # Logging
    "setup_logging",
    "get_logger",
]
