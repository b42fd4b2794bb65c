"""Ensemble-based reward evaluation with epistemic-uncertainty penalties.

For an input (x, u) every ensemble member draws N result vectors. From one such
sampling pass we get

* the Monte-Carlo expected reward over all M * N draws,
* kappa: mean pairwise squared Hellinger distance between the members'
  Gaussian moment fits (disagreement),
* disc: the maximum of those pairwise distances,
* varkappa: mean Frobenius norm of the members' covariances (spread).

The penalized reward scales the expected reward by (1 - kappa) or (1 + kappa)
inside the trust region varkappa <= epsilon and replaces it by the floor c
outside. Moments are taken on normalized results so that one epsilon fits all
result scales; rewards are computed in data units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .config import EVALUATOR_TAGS, PenaltyConfig
from .data import ProcessDataset
from .dynamics_cgan import DynamicsEnsemble, batch_moments
from .errors import ConfigError, NumericalError
from .function_approx import derive_seed
from .logging_config import get_logger


logger = get_logger("reward_eval")

BRANCHES = ("penalized_positive", "penalized_negative", "cutoff")

_EXP_FLOOR = -50.0

Moments = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class RewardFunction:
    """Known reward r(y), vectorized over rows of result vectors."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    bounds: Optional[Tuple[float, float]] = None

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(y)), dtype=np.float64)


def tolerance_box_reward(lower: Sequence[float], upper: Sequence[float]) -> RewardFunction:
    """1 when every result lies inside [lower, upper], else 0."""
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)

    def fn(y: np.ndarray) -> np.ndarray:
        return np.all((y >= lo) & (y <= hi), axis=1).astype(np.float64)

    return RewardFunction("tolerance_box", fn, (0.0, 1.0))


def ib_reward(consumption_index: int = 3, fatigue_index: int = 4) -> RewardFunction:
    """Benchmark cost reward r = -consumption - 3 * fatigue of the next observation."""

    def fn(y: np.ndarray) -> np.ndarray:
        return -y[:, consumption_index] - 3.0 * y[:, fatigue_index]

    return RewardFunction("ib_cost", fn)


def constant_reward(value: float) -> RewardFunction:
    return RewardFunction("constant", lambda y: np.full(len(y), float(value)), (value, value))


# -- divergences -----------------------------------------------------------------


def _cholesky(cov: np.ndarray, what: str):
    try:
        return linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(f"{what} covariance is not positive definite after jitter")


def _log_det(factor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def squared_hellinger(
    mu_i: np.ndarray,
    cov_i: np.ndarray,
    mu_j: np.ndarray,
    cov_j: np.ndarray,
    jitter: float = 1e-6,
) -> float:
    """
    Closed-form squared Hellinger distance between two Gaussians.

    H^2 = 1 - det(S_i)^1/4 det(S_j)^1/4 / det(S)^1/2 * exp(-1/8 d^T S^-1 d),
    S = (S_i + S_j) / 2, d = mu_i - mu_j. Determinants and the solve go through
    Cholesky factors in log space; ``jitter * I`` is added to both covariances.
    """
    mu_i, mu_j = np.atleast_1d(mu_i).astype(np.float64), np.atleast_1d(mu_j).astype(np.float64)
    d = len(mu_i)
    cov_i = np.asarray(cov_i, dtype=np.float64).reshape(d, d) + jitter * np.eye(d)
    cov_j = np.asarray(cov_j, dtype=np.float64).reshape(d, d) + jitter * np.eye(d)
    mid = 0.5 * (cov_i + cov_j)

    f_i = _cholesky(cov_i, "member")
    f_j = _cholesky(cov_j, "member")
    f_mid = _cholesky(mid, "midpoint")
    diff = mu_i - mu_j
    mahalanobis = float(diff @ linalg.cho_solve(f_mid, diff))

    log_coeff = 0.25 * _log_det(f_i) + 0.25 * _log_det(f_j) - 0.5 * _log_det(f_mid)
    arg = max(log_coeff - mahalanobis / 8.0, _EXP_FLOOR)
    return float(min(1.0, max(0.0, 1.0 - np.exp(arg))))


def pairwise_squared_hellinger(moments: Sequence[Moments], jitter: float = 1e-6) -> np.ndarray:
    """H^2 for every unordered member pair i < j, in ``combinations`` order."""
    return np.array(
        [
            squared_hellinger(moments[i][0], moments[i][1], moments[j][0], moments[j][1], jitter)
            for i, j in combinations(range(len(moments)), 2)
        ]
    )


def compute_kappa(moments: Sequence[Moments], jitter: float = 1e-6) -> float:
    """Mean squared Hellinger distance over all member pairs."""
    if len(moments) < 2:
        raise ValueError(f"kappa needs at least 2 members, got {len(moments)}")
    return float(pairwise_squared_hellinger(moments, jitter).mean())


def compute_disc(moments: Sequence[Moments], jitter: float = 1e-6) -> float:
    """Maximum pairwise squared Hellinger distance."""
    if len(moments) < 2:
        raise ValueError(f"disc needs at least 2 members, got {len(moments)}")
    return float(pairwise_squared_hellinger(moments, jitter).max())


def compute_varkappa(moments: Sequence[Moments]) -> float:
    """Mean Frobenius norm of the member covariances."""
    if len(moments) < 1:
        raise ValueError("varkappa needs at least one member")
    return float(np.mean([np.linalg.norm(cov, "fro") for _, cov in moments]))


# -- reports -----------------------------------------------------------------------


@dataclass(frozen=True)
class PenaltyCalibration:
    """Trust-region threshold and penalty constants for one ensemble."""

    epsilon: float
    c: float
    M: int
    N: int
    disc_threshold: Optional[float] = None
    mopo_lambda: float = 1.0
    jitter: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"penalty.epsilon: must be > 0, got {self.epsilon}")
        if self.N < 2:
            raise ConfigError(f"ensemble.samples: N must be >= 2, got {self.N}")

    def to_dict(self) -> Dict:
        return {
            "epsilon": self.epsilon,
            "c": self.c,
            "M": self.M,
            "N": self.N,
            "disc_threshold": self.disc_threshold,
            "mopo_lambda": self.mopo_lambda,
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> PenaltyCalibration:
        return cls(**data)


@dataclass
class UncertaintyMeasure:
    """Everything one sampling pass yields before the penalty is applied."""

    raw_reward: float
    kappa: float
    disc: float
    varkappa: float
    max_cov_norm: float
    per_member_moments: List[Moments] = field(repr=False)


@dataclass
class UncertaintyReport:
    kappa: float
    varkappa: float
    disc: float
    raw_reward: float
    penalized_reward: float
    branch: str
    max_cov_norm: float = 0.0
    per_member_moments: List[Moments] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict:
        return {
            "kappa": self.kappa,
            "varkappa": self.varkappa,
            "disc": self.disc,
            "raw_reward": self.raw_reward,
            "penalized_reward": self.penalized_reward,
            "branch": self.branch,
            "max_cov_norm": self.max_cov_norm,
            "per_member_moments": [
                {"mean": mu.tolist(), "cov": cov.tolist()} for mu, cov in self.per_member_moments
            ],
        }


def penalize(raw_reward: float, kappa: float, varkappa: float, epsilon: float, c: float) -> Tuple[float, str]:
    """The r_p rule; a tie varkappa == epsilon stays inside the trust region."""
    if varkappa > epsilon:
        return float(c), "cutoff"
    if raw_reward > 0:
        return (1.0 - kappa) * raw_reward, "penalized_positive"
    return (1.0 + kappa) * raw_reward, "penalized_negative"


def _draw(
    ensemble: DynamicsEnsemble, x, u, n_samples: int, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized draws (M, N, r) and the same draws in data units."""
    normalized = ensemble.sample_all_normalized(x, u, n_samples, seed)[0]
    return normalized, ensemble.normalizer.denormalize("result", normalized)


def expected_reward(
    ensemble: DynamicsEnsemble, x, u, reward: RewardFunction, n_samples: int, seed: int
) -> float:
    """Monte-Carlo mean of r over N draws from each of the M members."""
    _, samples = _draw(ensemble, x, u, n_samples, seed)
    return float(reward(samples.reshape(-1, samples.shape[-1])).mean())


def measure(
    ensemble: DynamicsEnsemble,
    x,
    u,
    reward: RewardFunction,
    n_samples: int,
    seed: int,
    jitter: float = 1e-6,
) -> UncertaintyMeasure:
    """Expected reward and uncertainty signals from one sampling pass."""
    if n_samples < 2:
        raise ValueError(f"N must be >= 2 for covariance estimates, got {n_samples}")
    normalized, samples = _draw(ensemble, x, u, n_samples, seed)
    return measure_draws(normalized, samples, reward, jitter)


def measure_draws(
    normalized: np.ndarray, samples: np.ndarray, reward: RewardFunction, jitter: float = 1e-6
) -> UncertaintyMeasure:
    """:func:`measure` on draws already taken, given as (M, N, r) in both unit systems."""
    raw = float(reward(samples.reshape(-1, samples.shape[-1])).mean())
    means, covs = batch_moments(normalized)
    moments = list(zip(means, covs))
    pairs = pairwise_squared_hellinger(moments, jitter)
    norms = np.linalg.norm(covs, ord="fro", axis=(1, 2))
    return UncertaintyMeasure(
        raw_reward=raw,
        kappa=float(pairs.mean()),
        disc=float(pairs.max()),
        varkappa=float(norms.mean()),
        max_cov_norm=float(norms.max()),
        per_member_moments=moments,
    )


def report_from_measure(m: UncertaintyMeasure, calib: PenaltyCalibration) -> UncertaintyReport:
    value, branch = penalize(m.raw_reward, m.kappa, m.varkappa, calib.epsilon, calib.c)
    return UncertaintyReport(
        kappa=m.kappa,
        varkappa=m.varkappa,
        disc=m.disc,
        raw_reward=m.raw_reward,
        penalized_reward=value,
        branch=branch,
        max_cov_norm=m.max_cov_norm,
        per_member_moments=m.per_member_moments,
    )


def penalized_reward(
    ensemble: DynamicsEnsemble,
    x,
    u,
    reward: RewardFunction,
    calib: PenaltyCalibration,
    seed: int,
) -> UncertaintyReport:
    """r_p at (x, u) with all intermediates."""
    m = measure(ensemble, x, u, reward, calib.N, seed, calib.jitter)
    return report_from_measure(m, calib)


def evaluate_inputs(
    ensemble: DynamicsEnsemble,
    X: np.ndarray,
    U: np.ndarray,
    reward: RewardFunction,
    n_samples: int,
    seed: int,
    jitter: float = 1e-6,
) -> List[UncertaintyMeasure]:
    """One measure per input row; row ``k`` uses the child seed ``(seed, k)``."""
    X, U = np.atleast_2d(X), np.atleast_2d(U)
    return [
        measure(ensemble, X[k], U[k], reward, n_samples, derive_seed(seed, k), jitter)
        for k in range(len(X))
    ]


def _calibration_measures(
    ensemble: DynamicsEnsemble, validation: ProcessDataset, n_samples: int, seed: int, jitter: float
) -> List[UncertaintyMeasure]:
    if len(validation) == 0:
        raise ConfigError("calibration needs a non-empty validation set")
    return evaluate_inputs(
        ensemble, validation.X, validation.U, constant_reward(0.0), n_samples, seed, jitter
    )


def calibrate_epsilon(
    ensemble: DynamicsEnsemble, validation: ProcessDataset, n_samples: int, seed: int,
    jitter: float = 1e-6,
) -> float:
    """epsilon = max varkappa over the validation inputs."""
    measures = _calibration_measures(ensemble, validation, n_samples, seed, jitter)
    return max(m.varkappa for m in measures)


def calibrate_disc_threshold(
    ensemble: DynamicsEnsemble, validation: ProcessDataset, n_samples: int, seed: int,
    jitter: float = 1e-6,
) -> float:
    """Threshold for the discrepancy-only penalizer: max disc over validation inputs."""
    measures = _calibration_measures(ensemble, validation, n_samples, seed, jitter)
    return max(m.disc for m in measures)


def calibrate(
    ensemble: DynamicsEnsemble,
    validation: ProcessDataset,
    penalty: PenaltyConfig,
    n_samples: int,
    seed: int,
) -> PenaltyCalibration:
    """
    Build the calibration for an ensemble from one pass over the validation set.

    Configured ``epsilon`` / ``disc_threshold`` values win over calibrated ones.
    """
    epsilon, threshold = penalty.epsilon, penalty.disc_threshold
    if epsilon is None or threshold is None:
        measures = _calibration_measures(ensemble, validation, n_samples, seed, penalty.jitter)
        if epsilon is None:
            epsilon = max(m.varkappa for m in measures)
        if threshold is None:
            threshold = max(m.disc for m in measures)
    calib = PenaltyCalibration(
        epsilon=epsilon,
        c=penalty.c,
        M=ensemble.M,
        N=n_samples,
        disc_threshold=threshold,
        mopo_lambda=penalty.mopo_lambda,
        jitter=penalty.jitter,
    )
    logger.info(
        f"Calibrated penalty on {len(validation)} validation inputs: "
        f"epsilon={calib.epsilon:.5g}, disc_threshold={calib.disc_threshold:.5g}, c={calib.c}"
    )
    return calib


# -- comparator penalizers -----------------------------------------------------------


def f1_unpenalized(
    ensemble: DynamicsEnsemble, x, u, reward: RewardFunction, n_samples: int, seed: int
) -> float:
    return expected_reward(ensemble, x, u, reward, n_samples, seed)


def f3_value(m: UncertaintyMeasure, threshold: float) -> float:
    return m.raw_reward if m.disc <= threshold else 0.0


def f4_value(m: UncertaintyMeasure, mopo_lambda: float) -> float:
    return m.raw_reward - mopo_lambda * m.max_cov_norm


def f3_morel(
    ensemble: DynamicsEnsemble, x, u, reward: RewardFunction, threshold: float,
    n_samples: int, seed: int,
) -> float:
    """Raw reward while the maximum pairwise discrepancy stays under ``threshold``, else 0."""
    return f3_value(measure(ensemble, x, u, reward, n_samples, seed), threshold)


def f4_mopo(
    ensemble: DynamicsEnsemble, x, u, reward: RewardFunction, mopo_lambda: float,
    n_samples: int, seed: int,
) -> float:
    """Raw reward minus lambda times the largest member covariance norm."""
    return f4_value(measure(ensemble, x, u, reward, n_samples, seed), mopo_lambda)


@dataclass
class Evaluator:
    """
    Scalar objective f(u | x) for one evaluator tag.

    ``rp`` is the penalized reward, ``f1`` the raw expected reward, ``f3`` the
    discrepancy-thresholded reward and ``f4`` the spread-penalized reward.
    """

    tag: str
    ensemble: DynamicsEnsemble
    reward: RewardFunction
    calibration: PenaltyCalibration

    def __post_init__(self):
        if self.tag not in EVALUATOR_TAGS:
            raise ConfigError(
                f"evaluator: must be one of {', '.join(EVALUATOR_TAGS)}, got '{self.tag}'"
            )
        if self.tag == "f3" and self.calibration.disc_threshold is None:
            raise ConfigError("evaluator f3 needs a disc threshold")

    def evaluate(self, x, u, seed: int) -> Tuple[float, UncertaintyReport]:
        value, report, _ = self.evaluate_with_samples(x, u, seed)
        return value, report

    def evaluate_with_samples(
        self, x, u, seed: int
    ) -> Tuple[float, UncertaintyReport, np.ndarray]:
        """Value, report and the (M, N, r) draws in data units they came from."""
        calib = self.calibration
        if calib.N < 2:
            raise ValueError(f"N must be >= 2 for covariance estimates, got {calib.N}")
        normalized, samples = _draw(self.ensemble, x, u, calib.N, seed)
        m = measure_draws(normalized, samples, self.reward, calib.jitter)
        report = report_from_measure(m, calib)
        if self.tag == "rp":
            value = report.penalized_reward
        elif self.tag == "f1":
            value = m.raw_reward
        elif self.tag == "f3":
            value = f3_value(m, calib.disc_threshold)
        else:
            value = f4_value(m, calib.mopo_lambda)
        return float(value), report, samples

    def __call__(self, x, u, seed: int) -> float:
        return self.evaluate(x, u, seed)[0]


def make_evaluator(
    tag: str, ensemble: DynamicsEnsemble, reward: RewardFunction, calib: PenaltyCalibration
) -> Evaluator:
    return Evaluator(tag, ensemble, reward, calib)
