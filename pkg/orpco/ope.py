"""Off-policy evaluation of discrete-control policies on logged test records.

Four estimators of the value of a target policy pi from records (x_k, u_k, y_k)
logged under p_log:

* DM:  mean of r_hat(x_k, u*_k), with u*_k the policy's control at x_k
* IPS: mean of w_k r(y_k),  w_k = p_pi(u_k | x_k) / p_log(u_k | x_k)
* WIS: sum w_k r(y_k) / sum w_k
* DR:  mean of r_hat(x_k, u*_k) + w_k (r(y_k) - r_hat(x_k, u_k))

Both propensities are floored densities. Headline estimates use the raw weights;
a weight-capped copy is reported as a diagnostic only.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import stats

from .config import GpnConfig, OpeConfig
from .data import Normalizer, ProcessDataset
from .dynamics_cgan import _normalized_inputs, _require_normalized
from .dynamics_gpn import GaussianNetwork, fit_gaussian_network
from .errors import ConfigError, ModelStateError, TrainingError
from .function_approx import (
    AdamOptimizer,
    Mlp,
    MlpSpec,
    as_tensor,
    derive_seed,
    iterate_minibatches,
)
from .logging_config import get_logger
from .reward_eval import RewardFunction


logger = get_logger("ope")

DENSITY_FLOOR = 1e-6
VARIANCE_FLOOR = 1e-6


def _gaussian_density(u: np.ndarray, mean: np.ndarray, var: np.ndarray, floor: float) -> np.ndarray:
    """Product of per-component normal densities over the last axis, floored."""
    log_pdf = stats.norm.logpdf(u, loc=mean, scale=np.sqrt(var)).sum(axis=-1)
    return np.maximum(np.exp(log_pdf), floor)


@dataclass(frozen=True)
class DiagonalGaussian:
    mean: np.ndarray
    var: np.ndarray

    def density(self, u, floor: float = DENSITY_FLOOR) -> float:
        return float(_gaussian_density(np.asarray(u, dtype=np.float64), self.mean, self.var, floor))


class PropensityModel(ABC):
    """
    Conditional control density q(u | x) in data units.

    ``source`` is ``logging`` for the network fitted on historical data and
    ``target`` for per-record Gaussians fitted to repeated policy outputs.
    """

    source: str = ""

    def __init__(self, density_floor: float = DENSITY_FLOOR):
        self.density_floor = density_floor

    @abstractmethod
    def density(self, X, U) -> np.ndarray:
        """Density of each row of U given the matching row of X, floored at ``density_floor``."""


class LoggingPropensity(PropensityModel):
    """GPN over u given x, trained on normalized data."""

    source = "logging"

    def __init__(self, network: GaussianNetwork, normalizer: Normalizer, density_floor: float = DENSITY_FLOOR):
        super().__init__(density_floor)
        self.network = network
        self.normalizer = normalizer

    def moments(self, X) -> tuple:
        """Mean and variance of u given each row of X, in data units."""
        Xn = self.normalizer.normalize("conditional", np.atleast_2d(X))
        with torch.no_grad():
            mean, var = self.network(Xn)
        scale = self.normalizer.scale["control"]
        return (
            self.normalizer.denormalize("control", mean.numpy()),
            var.numpy() * scale**2,
        )

    def density(self, X, U) -> np.ndarray:
        mean, var = self.moments(X)
        return _gaussian_density(np.atleast_2d(U), mean, var, self.density_floor)


class TargetPropensity(PropensityModel):
    """One Gaussian per evaluated record; rows of X must match the fitted records."""

    source = "target"

    def __init__(self, gaussians: Sequence[DiagonalGaussian], density_floor: float = DENSITY_FLOOR):
        super().__init__(density_floor)
        self.gaussians = list(gaussians)

    def density(self, X, U) -> np.ndarray:
        U = np.atleast_2d(U)
        if len(U) != len(self.gaussians):
            raise ValueError(f"expected {len(self.gaussians)} rows, got {len(U)}")
        return np.array([g.density(u, self.density_floor) for g, u in zip(self.gaussians, U)])


def fit_logging_propensity(
    train: ProcessDataset,
    config: GpnConfig,
    seed: int,
    density_floor: float = DENSITY_FLOOR,
) -> LoggingPropensity:
    """Fit p_log(u | x) with the Gaussian-network machinery, targets being the controls."""
    normalizer = _require_normalized(train)
    if len(train) == 0:
        raise ConfigError("cannot fit a logging propensity on an empty dataset")
    network, log = fit_gaussian_network(
        train.normalized("conditional"), train.normalized("control"), config, seed
    )
    logger.info(f"Fitted logging propensity on {len(train)} records (train NLL {log.last('train_nll'):.4f})")
    return LoggingPropensity(network, normalizer, density_floor)


def fit_target_propensity(
    policy, x, n_repeats: int = 10, seed: int = 0, variance_floor: float = VARIANCE_FLOOR
) -> DiagonalGaussian:
    """Diagonal Gaussian fitted to ``n_repeats`` seed-varied policy outputs at ``x``."""
    return _fit_outputs(repeated_controls(policy, x, n_repeats, seed), variance_floor)


def repeated_controls(policy, x, n_repeats: int, seed: int) -> np.ndarray:
    """Policy outputs at ``x`` for child seeds ``(seed, j)``; shape (n_repeats, q)."""
    if n_repeats < 2:
        raise ValueError(f"n_repeats must be >= 2, got {n_repeats}")
    return np.array([policy.choose(x, derive_seed(seed, j)) for j in range(n_repeats)])


def _fit_outputs(outputs: np.ndarray, variance_floor: float) -> DiagonalGaussian:
    return DiagonalGaussian(outputs.mean(axis=0), outputs.var(axis=0, ddof=1) + variance_floor)


class RewardPredictor:
    """MLP regression r_hat(x, u) of realized rewards, on normalized inputs."""

    def __init__(self, net: Mlp, normalizer: Normalizer, trained: bool = False):
        self.net = net
        self.normalizer = normalizer
        self.trained = trained

    def _inputs(self, X, U) -> np.ndarray:
        Xn, Un = _normalized_inputs(self.normalizer, X, U)
        return np.concatenate([Xn, Un], axis=1)

    def predict(self, X, U) -> np.ndarray:
        if not self.trained:
            raise ModelStateError("reward predictor is not trained")
        with torch.no_grad():
            return self.net(self._inputs(X, U))[:, 0].numpy()

    @classmethod
    def fit(
        cls, train: ProcessDataset, reward: RewardFunction, config: OpeConfig, seed: int
    ) -> RewardPredictor:
        normalizer = _require_normalized(train)
        if len(train) == 0:
            raise ConfigError("cannot fit a reward predictor on an empty dataset")
        spec = MlpSpec(
            train.schema.dim("conditional") + train.schema.dim("control"),
            tuple(config.predictor_hidden),
            1,
        )
        predictor = cls(Mlp(spec, seed=derive_seed(seed, 0)), normalizer)
        inputs = as_tensor(predictor._inputs(train.X, train.U))
        targets = as_tensor(reward(train.Y)).reshape(-1, 1)
        optimizer = AdamOptimizer(predictor.net.params, lr=config.predictor_lr)
        rng = np.random.default_rng(derive_seed(seed, 1))
        batch_size = min(config.predictor_batch_size, len(train))
        loss = float("nan")
        for epoch in range(config.predictor_epochs):
            losses = []
            for batch in iterate_minibatches(len(train), batch_size, rng):
                idx = torch.as_tensor(batch)
                mse = F.mse_loss(predictor.net(inputs[idx]), targets[idx])
                if not torch.isfinite(mse):
                    raise TrainingError(f"non-finite reward-predictor loss {float(mse)}", epoch=epoch)
                losses.append(optimizer.minimize(mse))
            loss = float(np.mean(losses))
        predictor.trained = True
        logger.info(f"Fitted reward predictor {spec.hidden_dims} on {len(train)} records (MSE {loss:.4g})")
        return predictor


# -- estimators ------------------------------------------------------------------


def compute_weights(p_target: np.ndarray, p_log: np.ndarray) -> np.ndarray:
    p_target = np.asarray(p_target, dtype=np.float64)
    p_log = np.asarray(p_log, dtype=np.float64)
    if np.any(p_log <= 0):
        raise ValueError("logging densities must be positive")
    return p_target / p_log


def estimate_dm(predicted_at_policy: np.ndarray) -> float:
    return float(np.mean(predicted_at_policy))


def estimate_ips(weights: np.ndarray, rewards: np.ndarray) -> float:
    return float(np.mean(np.asarray(weights) * np.asarray(rewards)))


def estimate_wis(weights: np.ndarray, rewards: np.ndarray) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if not total > 0:
        raise ValueError("self-normalized estimate needs a positive weight sum")
    return float(np.sum(weights * np.asarray(rewards)) / total)


def estimate_dr(
    predicted_at_policy: np.ndarray,
    predicted_at_logged: np.ndarray,
    weights: np.ndarray,
    rewards: np.ndarray,
) -> float:
    correction = np.asarray(weights) * (np.asarray(rewards) - np.asarray(predicted_at_logged))
    return float(np.mean(np.asarray(predicted_at_policy) + correction))


def effective_sample_size(weights: np.ndarray) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    return float(weights.sum() ** 2 / np.sum(weights**2))


@dataclass
class OpeReport:
    dm: float
    ips: float
    wis: float
    dr: float
    weights: np.ndarray = field(repr=False)
    effective_sample_size: float = 0.0
    max_weight: float = 0.0
    weight_cap: float = 100.0
    n_capped: int = 0
    capped: Dict[str, float] = field(default_factory=dict)
    true_value: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            "dm": self.dm,
            "ips": self.ips,
            "wis": self.wis,
            "dr": self.dr,
            "true": self.true_value,
            "n_records": int(len(self.weights)),
            "effective_sample_size": self.effective_sample_size,
            "max_weight": self.max_weight,
            "weight_cap": self.weight_cap,
            "n_capped": self.n_capped,
            "capped": dict(self.capped),
            "weights": self.weights.tolist(),
        }


def ope_report(
    predicted_at_policy: np.ndarray,
    predicted_at_logged: np.ndarray,
    weights: np.ndarray,
    rewards: np.ndarray,
    weight_cap: float = 100.0,
) -> OpeReport:
    """All four estimates plus weight diagnostics from per-record arrays."""
    weights = np.asarray(weights, dtype=np.float64)
    capped = np.minimum(weights, weight_cap)
    return OpeReport(
        dm=estimate_dm(predicted_at_policy),
        ips=estimate_ips(weights, rewards),
        wis=estimate_wis(weights, rewards),
        dr=estimate_dr(predicted_at_policy, predicted_at_logged, weights, rewards),
        weights=weights,
        effective_sample_size=effective_sample_size(weights),
        max_weight=float(weights.max()),
        weight_cap=weight_cap,
        n_capped=int(np.sum(weights > weight_cap)),
        capped={
            "ips": estimate_ips(capped, rewards),
            "wis": estimate_wis(capped, rewards),
            "dr": estimate_dr(predicted_at_policy, predicted_at_logged, capped, rewards),
        },
    )


def evaluate_ope(
    test: ProcessDataset,
    policy,
    reward: RewardFunction,
    logging_propensity: PropensityModel,
    predictor: RewardPredictor,
    config: OpeConfig,
    seed: int,
) -> OpeReport:
    """
    Run the four estimators for ``policy`` on the test records.

    The policy is optimized ``config.n_repeats`` times per record with different
    seeds; the first output is u*_k and all of them fit the target propensity.
    """
    if len(test) == 0:
        raise ConfigError("off-policy evaluation needs a non-empty test split")
    if config.max_records is not None and len(test) > config.max_records:
        rng = np.random.default_rng(derive_seed(seed, 0))
        test = test.subset(np.sort(rng.choice(len(test), config.max_records, replace=False)))

    chosen: List[np.ndarray] = []
    gaussians: List[DiagonalGaussian] = []
    for k, x in enumerate(test.X):
        outputs = repeated_controls(policy, x, config.n_repeats, derive_seed(seed, 1, k))
        chosen.append(outputs[0])
        gaussians.append(_fit_outputs(outputs, VARIANCE_FLOOR))
    target = TargetPropensity(gaussians, config.density_floor)

    weights = compute_weights(
        target.density(test.X, test.U), logging_propensity.density(test.X, test.U)
    )
    rewards = reward(test.Y)
    report = ope_report(
        predictor.predict(test.X, np.asarray(chosen)),
        predictor.predict(test.X, test.U),
        weights,
        rewards,
        config.weight_cap,
    )
    logger.info(
        f"OPE on {len(test)} records: DM={report.dm:.4g} IPS={report.ips:.4g} "
        f"WIS={report.wis:.4g} DR={report.dr:.4g} (ESS {report.effective_sample_size:.1f}, "
        f"max weight {report.max_weight:.3g}, {report.n_capped} above cap)"
    )
    return report
