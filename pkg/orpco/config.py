"""Configuration dataclasses and YAML loader for orpco experiments."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .errors import ConfigError
from .logging_config import get_logger


logger = get_logger("config")

EVALUATOR_TAGS = ("rp", "f1", "f3", "f4")
ENSEMBLE_KINDS = ("cgan", "gpn")
BEHAVIOR_TAGS = ("random", "safe")
REWARD_KINDS = ("auto", "box", "ib")


def _reject_unknown(cls, data: Dict, path: str) -> None:
    """Raise ConfigError for keys that are not fields of ``cls``."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: section must be a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s): {', '.join(unknown)}")


def _scalars(cls, data: Dict, path: str, nested: Sequence[str] = ()) -> Dict[str, Any]:
    """Keyword arguments for the scalar (non-nested) fields present in ``data``."""
    _reject_unknown(cls, data, path)
    kwargs = {k: v for k, v in data.items() if k not in nested}
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = list(value)
    return kwargs


@dataclass
class DataConfig:
    """Where the historical data comes from and how it is split."""

    path: Optional[str] = None  # CSV file; schema sidecar next to it
    schema_path: Optional[str] = None  # defaults to <path>.schema.json
    synthetic: Optional[Dict[str, Any]] = None  # inline generator spec
    synthetic_path: Optional[str] = None  # JSON generator spec
    n_records: int = 19760
    split_ratios: List[float] = field(default_factory=lambda: [0.8, 0.2])
    validation_fraction: float = 0.1
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "data") -> DataConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class CganConfig:
    """WGAN-GP training settings for one conditional GAN."""

    epochs: int = 3000
    batch_size: int = 256
    gp_lambda: float = 10.0
    critic_steps: int = 5
    noise_dim: Optional[int] = None  # None = dim(y) + 2
    hidden_dims: List[int] = field(default_factory=lambda: [64, 64])
    lr: float = 1e-4
    betas: List[float] = field(default_factory=lambda: [0.5, 0.9])
    log_every: int = 100

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "ensemble.cgan") -> CganConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class GpnConfig:
    """Gaussian probabilistic network settings and search grid."""

    grid_search: bool = True
    hidden_layers_grid: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    hidden_dims_grid: List[int] = field(
        default_factory=lambda: [8, 16, 32, 64, 128, 256]
    )
    epochs_grid: List[int] = field(default_factory=lambda: [50, 100, 200])
    hidden_layers: int = 2
    hidden_dim: int = 64
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    variance_floor: float = 1e-4

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "ensemble.gpn") -> GpnConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class EnsembleConfig:
    """Dynamics ensemble: M members sampled N times per evaluation."""

    kind: str = "cgan"
    members: int = 5
    samples: int = 1000
    workers: int = 1
    cgan: CganConfig = field(default_factory=CganConfig)
    gpn: GpnConfig = field(default_factory=GpnConfig)

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "ensemble") -> EnsembleConfig:
        if data is None:
            return cls()
        kwargs = _scalars(cls, data, path, nested=("cgan", "gpn"))
        return cls(
            cgan=CganConfig.from_dict(data.get("cgan"), f"{path}.cgan"),
            gpn=GpnConfig.from_dict(data.get("gpn"), f"{path}.gpn"),
            **kwargs,
        )


@dataclass
class PenaltyConfig:
    """Penalty settings for r_p and the comparator penalizers."""

    epsilon: Optional[float] = None  # None = calibrate on the validation split
    c: float = 0.0
    disc_threshold: Optional[float] = None  # None = calibrate (max disc)
    mopo_lambda: float = 1.0
    jitter: float = 1e-6

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "penalty") -> PenaltyConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class BoConfig:
    """Bayesian-optimization settings for the per-query discrete policy."""

    n_init: int = 10
    n_iter: int = 40
    acquisition: str = "ei"
    xi: float = 0.0
    n_candidates: int = 1024
    n_refine: int = 3
    noise: float = 1e-6
    lengthscale_bounds: List[float] = field(default_factory=lambda: [1e-2, 1e1])
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "bo") -> BoConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class DdpgConfig:
    """Offline DDPG settings for the continuous-control case."""

    episodes: int = 1500
    horizon: int = 100
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    buffer_capacity: int = 100_000
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    hidden_dims: List[int] = field(default_factory=lambda: [64, 64])
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    warmup: int = 128  # transitions collected before updates start
    report_last: int = 100

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "ddpg") -> DdpgConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class OpeConfig:
    """Off-policy evaluation settings."""

    n_repeats: int = 10
    density_floor: float = 1e-6
    weight_cap: float = 100.0
    predictor_hidden: List[int] = field(default_factory=lambda: [64, 64])
    predictor_epochs: int = 200
    predictor_lr: float = 1e-3
    predictor_batch_size: int = 256
    max_records: Optional[int] = None  # subsample test records for cost
    true_queries: int = 50  # fresh conditionals for ground-truth policy values

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "ope") -> OpeConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class ContinuousConfig:
    """Surrogate-benchmark case study settings."""

    behaviors: List[str] = field(default_factory=lambda: ["random", "safe"])
    n_traj: int = 300
    length: int = 100
    eval_episodes: int = 100
    penalty: PenaltyConfig = field(
        default_factory=lambda: PenaltyConfig(c=-2000.0, mopo_lambda=1000.0)
    )

    @classmethod
    def from_dict(
        cls, data: Optional[Dict], path: str = "continuous"
    ) -> ContinuousConfig:
        if data is None:
            return cls()
        kwargs = _scalars(cls, data, path, nested=("penalty",))
        penalty_data = {"c": -2000.0, "mopo_lambda": 1000.0}
        penalty_data.update(data.get("penalty") or {})
        return cls(
            penalty=PenaltyConfig.from_dict(penalty_data, f"{path}.penalty"), **kwargs
        )


@dataclass
class RewardConfig:
    """Known reward r(y); ``auto`` picks it from the data source."""

    kind: str = "auto"  # auto | box | ib
    lower: Optional[List[float]] = None  # box bounds, one per result
    upper: Optional[List[float]] = None
    consumption_index: int = 3
    fatigue_index: int = 4

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "reward") -> RewardConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class ReportConfig:
    """Out-of-distribution report settings."""

    n_inputs: int = 200
    bins: int = 30
    panel_size: List[int] = field(default_factory=lambda: [360, 480])  # (h, w)

    @classmethod
    def from_dict(cls, data: Optional[Dict], path: str = "report") -> ReportConfig:
        if data is None:
            return cls()
        return cls(**_scalars(cls, data, path))


@dataclass
class ExperimentConfig:
    """Main configuration for an orpco run."""

    name: str = "experiment"
    data: DataConfig = field(default_factory=DataConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    bo: BoConfig = field(default_factory=BoConfig)
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    ope: OpeConfig = field(default_factory=OpeConfig)
    continuous: ContinuousConfig = field(default_factory=ContinuousConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    evaluator: str = "rp"
    evaluators: List[str] = field(default_factory=lambda: list(EVALUATOR_TAGS))
    seeds: List[int] = field(default_factory=lambda: [0])
    smoke: bool = False
    runs_dir: str = "runs"

    _SECTIONS = {
        "data": DataConfig,
        "ensemble": EnsembleConfig,
        "penalty": PenaltyConfig,
        "bo": BoConfig,
        "ddpg": DdpgConfig,
        "ope": OpeConfig,
        "continuous": ContinuousConfig,
        "report": ReportConfig,
        "reward": RewardConfig,
    }

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> ExperimentConfig:
        data = data or {}
        kwargs = _scalars(cls, data, "config", nested=tuple(cls._SECTIONS))
        for name, section_cls in cls._SECTIONS.items():
            kwargs[name] = section_cls.from_dict(data.get(name), name)
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Short stable hash of the canonical config, used for run folders."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def resolve_runs_dir(self) -> str:
        """Output root; ``ORPCO_RUNS_DIR`` wins over the config value."""
        return os.environ.get("ORPCO_RUNS_DIR", self.runs_dir)


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    """Range-check every section; raises ConfigError naming the field."""
    _validate_data(config.data)
    _validate_ensemble(config.ensemble)
    _validate_penalty(config.penalty, "penalty")
    _validate_penalty(config.continuous.penalty, "continuous.penalty")
    _validate_bo(config.bo)
    _validate_ddpg(config.ddpg)
    _validate_ope(config.ope)

    if config.evaluator not in EVALUATOR_TAGS:
        raise ConfigError(
            f"evaluator: must be one of {', '.join(EVALUATOR_TAGS)}, got '{config.evaluator}'"
        )
    for tag in config.evaluators:
        if tag not in EVALUATOR_TAGS:
            raise ConfigError(f"evaluators: unknown evaluator '{tag}'")
    for tag in config.continuous.behaviors:
        if tag not in BEHAVIOR_TAGS:
            raise ConfigError(f"continuous.behaviors: unknown behavior policy '{tag}'")
    _validate_reward(config.reward)
    if not config.seeds:
        raise ConfigError("seeds: at least one seed is required")
    if config.continuous.n_traj < 1 or config.continuous.length < 1:
        raise ConfigError("continuous: n_traj and length must be >= 1")
    return config


def validate_split_ratios(ratios: Sequence[float], path: str = "data.split_ratios") -> None:
    if len(ratios) < 2:
        raise ConfigError(f"{path}: need at least two ratios")
    if any(r <= 0 for r in ratios):
        raise ConfigError(f"{path}: ratios must be positive, got {list(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"{path}: ratios must sum to 1, got {sum(ratios)}")


def _validate_data(data: DataConfig) -> None:
    validate_split_ratios(data.split_ratios)
    if not 0.0 < data.validation_fraction < 1.0:
        raise ConfigError("data.validation_fraction: must be in (0, 1)")
    if data.n_records < 0:
        raise ConfigError("data.n_records: must be >= 0")


def _validate_ensemble(ens: EnsembleConfig) -> None:
    if ens.kind not in ENSEMBLE_KINDS:
        raise ConfigError(
            f"ensemble.kind: must be 'cgan' or 'gpn', got '{ens.kind}'"
        )
    if ens.members < 2:
        raise ConfigError(
            f"ensemble.members: pairwise discrepancy needs M >= 2, got {ens.members}"
        )
    if ens.samples < 2:
        raise ConfigError(f"ensemble.samples: N must be >= 2, got {ens.samples}")
    if ens.workers < 1:
        raise ConfigError("ensemble.workers: must be >= 1")
    cg = ens.cgan
    if cg.epochs < 1 or cg.batch_size < 1 or cg.critic_steps < 1:
        raise ConfigError("ensemble.cgan: epochs, batch_size, critic_steps must be >= 1")
    if cg.gp_lambda < 0:
        raise ConfigError("ensemble.cgan.gp_lambda: must be >= 0")
    if not cg.hidden_dims or any(d < 1 for d in cg.hidden_dims):
        raise ConfigError("ensemble.cgan.hidden_dims: must be a non-empty list of positive ints")
    if cg.noise_dim is not None and cg.noise_dim < 1:
        raise ConfigError("ensemble.cgan.noise_dim: must be >= 1")
    gp = ens.gpn
    if gp.variance_floor <= 0:
        raise ConfigError("ensemble.gpn.variance_floor: must be > 0")
    if not gp.hidden_layers_grid or not gp.hidden_dims_grid or not gp.epochs_grid:
        raise ConfigError("ensemble.gpn: search grids must be non-empty")


def _validate_penalty(pen: PenaltyConfig, path: str) -> None:
    if pen.epsilon is not None and pen.epsilon <= 0:
        raise ConfigError(f"{path}.epsilon: must be > 0, got {pen.epsilon}")
    if pen.disc_threshold is not None and not 0 <= pen.disc_threshold <= 1:
        raise ConfigError(f"{path}.disc_threshold: must be in [0, 1]")
    if pen.mopo_lambda < 0:
        raise ConfigError(f"{path}.mopo_lambda: must be >= 0")
    if pen.jitter < 0:
        raise ConfigError(f"{path}.jitter: must be >= 0")


def _validate_bo(bo: BoConfig) -> None:
    if bo.n_init < 2:
        raise ConfigError(f"bo.n_init: must be >= 2, got {bo.n_init}")
    if bo.n_iter < 0:
        raise ConfigError(f"bo.n_iter: must be >= 0, got {bo.n_iter}")
    if bo.acquisition != "ei":
        raise ConfigError(f"bo.acquisition: only 'ei' is supported, got '{bo.acquisition}'")
    if bo.n_candidates < 1:
        raise ConfigError("bo.n_candidates: must be >= 1")


def _validate_ddpg(dd: DdpgConfig) -> None:
    if not 0.0 < dd.gamma < 1.0:
        raise ConfigError(f"ddpg.gamma: must be in (0, 1), got {dd.gamma}")
    if not 0.0 < dd.tau <= 1.0:
        raise ConfigError(f"ddpg.tau: must be in (0, 1], got {dd.tau}")
    if dd.episodes < 1 or dd.horizon < 1:
        raise ConfigError("ddpg: episodes and horizon must be >= 1")
    if dd.buffer_capacity < dd.batch_size:
        raise ConfigError("ddpg.buffer_capacity: must be >= batch_size")


def _validate_ope(ope: OpeConfig) -> None:
    if ope.n_repeats < 2:
        raise ConfigError("ope.n_repeats: must be >= 2")
    if ope.density_floor <= 0:
        raise ConfigError("ope.density_floor: must be > 0")
    if ope.weight_cap <= 0:
        raise ConfigError("ope.weight_cap: must be > 0")
    if ope.true_queries < 1:
        raise ConfigError("ope.true_queries: must be >= 1")


def _validate_reward(reward: RewardConfig) -> None:
    if reward.kind not in REWARD_KINDS:
        raise ConfigError(f"reward.kind: must be one of {', '.join(REWARD_KINDS)}, got '{reward.kind}'")
    if reward.kind == "box":
        if reward.lower is None or reward.upper is None:
            raise ConfigError("reward: box reward needs 'lower' and 'upper'")
        if len(reward.lower) != len(reward.upper):
            raise ConfigError("reward: 'lower' and 'upper' must have the same length")
        if any(lo > hi for lo, hi in zip(reward.lower, reward.upper)):
            raise ConfigError("reward: every lower bound must be <= its upper bound")


def apply_overrides(data: Dict, overrides: Sequence[str]) -> Dict:
    """
    Apply ``section.key=value`` overrides to a raw config mapping.

    Values are parsed as YAML scalars, so ``ensemble.members=2`` yields an int
    and ``penalty.epsilon=null`` yields None.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}': expected key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"override '{item}': invalid value: {e}")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{item}': '{key}' is not a section")
        node[keys[-1]] = value
    return data


def apply_smoke(config: ExperimentConfig) -> ExperimentConfig:
    """Scale the expensive knobs (K, M, N, epochs) down for CI runs."""
    cfg = dataclasses.replace(config)
    cfg.ensemble = dataclasses.replace(
        config.ensemble,
        members=2,
        samples=50,
        cgan=dataclasses.replace(
            config.ensemble.cgan,
            epochs=20,
            log_every=5,
            batch_size=min(config.ensemble.cgan.batch_size, 64),
        ),
        gpn=dataclasses.replace(
            config.ensemble.gpn,
            hidden_layers_grid=[1],
            hidden_dims_grid=[16],
            epochs_grid=[20],
        ),
    )
    cfg.data = dataclasses.replace(config.data, n_records=min(config.data.n_records, 2000))
    cfg.bo = dataclasses.replace(config.bo, n_init=4, n_iter=4, n_candidates=128)
    cfg.ddpg = dataclasses.replace(config.ddpg, episodes=20, horizon=20, warmup=32, report_last=5)
    cfg.ope = dataclasses.replace(
        config.ope, n_repeats=3, predictor_epochs=20, max_records=20, true_queries=10
    )
    cfg.continuous = dataclasses.replace(
        config.continuous, n_traj=10, length=20, eval_episodes=3
    )
    cfg.report = dataclasses.replace(config.report, n_inputs=20)
    cfg.smoke = True
    return cfg


def load_config(
    config_path: Optional[str] = None, overrides: Sequence[str] = ()
) -> ExperimentConfig:
    """
    Load configuration from a YAML file.

    Args:
        config_path: Path to the YAML configuration file, or None for defaults.
        overrides: ``section.key=value`` strings applied after loading.

    Returns:
        Validated ExperimentConfig.

    Raises:
        ConfigError: If the file doesn't exist, YAML is invalid, keys are
            unknown or values are out of range.
    """
    data: Dict = {}
    if config_path is not None:
        if not os.path.exists(config_path):
            raise ConfigError(f"Configuration file not found: {config_path}")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {config_path}: {e}")
        if data is None:
            raise ConfigError(f"Configuration file is empty: {config_path}")
        if not isinstance(data, dict):
            raise ConfigError(
                f"Configuration must be a YAML mapping, got {type(data).__name__}"
            )

    data = apply_overrides(data, overrides)
    config = ExperimentConfig.from_dict(data)
    if config.smoke:
        config = apply_smoke(config)
    validate_config(config)
    logger.info(
        f"Loaded config '{config.name}' ({config_path or 'defaults'}): "
        f"ensemble={config.ensemble.kind} M={config.ensemble.members} "
        f"N={config.ensemble.samples}, seeds={config.seeds}, smoke={config.smoke}"
    )
    return config


def betas_tuple(betas: Sequence[float]) -> Tuple[float, float]:
    if len(betas) != 2:
        raise ConfigError(f"betas: expected two moment decays, got {list(betas)}")
    return float(betas[0]), float(betas[1])
