"""Synthetic process generators with known ground truth.

The discrete-control generator stands in for proprietary production data: a
Gaussian-mixture conditional p*(y|x,u) with full per-component covariances and
input-dependent mixture weights, logged under a narrow logging policy, scored by a
tolerance-box quality rule. Because the process is known, true expected rewards
are available in closed form for oracle checks.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.special import softmax

from .data import DatasetSchema, ProcessDataset
from .errors import ConfigError
from .logging_config import get_logger


logger = get_logger("synthetic")


@dataclass
class TrapSpec:
    """Region of control space, unseen in the logs, where the true process degrades."""

    enabled: bool = False
    start: float = 0.6  # threshold on the mean control value
    strength: float = 8.0

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> TrapSpec:
        if data is None:
            return cls()
        return cls(
            enabled=data.get("enabled", True),
            start=data.get("start", 0.6),
            strength=data.get("strength", 8.0),
        )


@dataclass
class GeneratorSpec:
    """Parameters of the synthetic discrete-control process."""

    dims: Tuple[int, int, int] = (3, 4, 7)
    n_components: int = 3
    component_scales: List[float] = field(default_factory=lambda: [0.15, 0.25, 0.2])
    component_spread: float = 0.1  # offset magnitude between mixture components
    weight_gain: float = 2.0  # how strongly (x, u) move the mixture weights
    base_correlation: float = 0.5  # correlation decays as base ** |i - j|
    correlations: List[Tuple[int, int, float]] = field(default_factory=list)
    x_loading_scale: float = 0.1
    u_gain: float = 1.0
    u_optimum: float = 0.75  # beyond the default trap start
    u_optimum_slope: float = 0.2
    logging_center: float = 0.4
    logging_slope: float = 0.1
    logging_noise: float = 0.06
    y_bound: float = 3.0
    box_half_width: float = 0.5
    trap: TrapSpec = field(default_factory=TrapSpec)
    param_seed: int = 1234

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> GeneratorSpec:
        if data is None:
            return cls()
        defaults = cls()
        known = set(defaults.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"generator spec: unknown key(s): {', '.join(unknown)}")
        kwargs = {k: v for k, v in data.items() if k != "trap"}
        if "dims" in kwargs:
            kwargs["dims"] = tuple(int(d) for d in kwargs["dims"])
        if "correlations" in kwargs:
            kwargs["correlations"] = [(int(i), int(j), float(r)) for i, j, r in kwargs["correlations"]]
        spec = cls(trap=TrapSpec.from_dict(data.get("trap")), **kwargs)
        spec.validate()
        return spec

    def validate(self) -> None:
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ConfigError(f"generator spec.dims: need three positive dims, got {self.dims}")
        if self.n_components < 1 or len(self.component_scales) != self.n_components:
            raise ConfigError("generator spec: one component scale per mixture component")
        if any(s <= 0 for s in self.component_scales):
            raise ConfigError("generator spec.component_scales: must be positive")
        if not 0 < self.box_half_width < self.y_bound:
            raise ConfigError("generator spec.box_half_width: box must lie inside the y bounds")
        if self.logging_noise < 0:
            raise ConfigError("generator spec.logging_noise: must be >= 0")


def load_generator_spec(path: str) -> GeneratorSpec:
    if not os.path.exists(path):
        raise ConfigError(f"generator spec not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return GeneratorSpec.from_dict(json.load(f))


class GroundTruth:
    """
    Known conditional p*(y|x,u) and logging policy of a synthetic process.

    All variables live in [0, 1] except results, which live in
    [-y_bound, y_bound]; samples are clipped to those bounds. The reward is 1 when
    every result falls inside the tolerance box [-h, h] and 0 otherwise; since the
    box lies strictly inside the bounds, clipping never changes a reward.
    """

    def __init__(self, spec: GeneratorSpec):
        spec.validate()
        self.spec = spec
        p, q, r = spec.dims
        self.p, self.q, self.r = p, q, r
        rng = np.random.default_rng(spec.param_seed)

        K = spec.n_components
        self.weight_matrix = rng.normal(0.0, 1.0, size=(K, p + q))
        offsets = np.zeros((K, r))
        for k in range(1, K):
            signs = np.where(np.arange(r) % K == k % K, 1.0, -0.5)
            offsets[k] = spec.component_spread * signs * (1 if k % 2 else -1)
        x_loading = rng.normal(0.0, spec.x_loading_scale, size=(r, p))
        self.optimum_slope = rng.normal(0.0, spec.u_optimum_slope, size=(q, p))
        self.logging_slope = rng.normal(0.0, spec.logging_slope, size=(q, p))

        self.correlation = self._correlation_matrix()
        # planted pairs share their mean so the pooled correlation stays near rho
        for i, j, _ in spec.correlations:
            offsets[:, j] = offsets[:, i]
            x_loading[j] = x_loading[i]
        self.offsets = offsets
        self.x_loading = x_loading
        self.covariances = np.stack(
            [s**2 * self.correlation for s in spec.component_scales]
        )
        self.box_lower = -spec.box_half_width * np.ones(r)
        self.box_upper = spec.box_half_width * np.ones(r)

    def _correlation_matrix(self) -> np.ndarray:
        r = self.r
        idx = np.arange(r)
        corr = self.spec.base_correlation ** np.abs(idx[:, None] - idx[None, :])
        for i, j, rho in self.spec.correlations:
            if not (0 <= i < r and 0 <= j < r and i != j):
                raise ConfigError(f"generator spec.correlations: bad pair ({i}, {j})")
            corr[i, j] = corr[j, i] = rho
        try:
            np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            raise ConfigError("generator spec.correlations: matrix is not positive definite")
        return corr

    def schema(self) -> DatasetSchema:
        b = self.spec.y_bound
        return DatasetSchema.build(
            conditional=[(0.0, 1.0)] * self.p,
            control=[(0.0, 1.0)] * self.q,
            result=[(-b, b)] * self.r,
        )

    # -- process ---------------------------------------------------------------

    def optimal_controls(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        u = self.spec.u_optimum + (x - 0.5) @ self.optimum_slope.T
        return np.clip(u, 0.0, 1.0)

    def mixture(self, x: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mixture weights (n, K) and component means (n, K, r) for batches of inputs."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        inputs = np.concatenate([x, u], axis=1) - 0.5
        weights = softmax(self.spec.weight_gain * inputs @ self.weight_matrix.T, axis=1)

        shift = (u - self.optimal_controls(x)).mean(axis=1, keepdims=True)
        base = (x - 0.5) @ self.x_loading.T + self.spec.u_gain * shift
        trap = self.spec.trap
        if trap.enabled:
            excess = np.maximum(0.0, u.mean(axis=1, keepdims=True) - trap.start)
            base = base + trap.strength * excess
        means = base[:, None, :] + self.offsets[None, :, :]
        return weights, means

    def sample_results(
        self, x: np.ndarray, u: np.ndarray, n: int, rng: np.random.Generator
    ) -> np.ndarray:
        """``n`` draws of y at a single (x, u)."""
        weights, means = self.mixture(x, u)
        comps = rng.choice(self.spec.n_components, size=n, p=weights[0])
        chol = np.linalg.cholesky(self.correlation)
        noise = rng.standard_normal((n, self.r)) @ chol.T
        scales = np.asarray(self.spec.component_scales)[comps][:, None]
        y = means[0, comps] + scales * noise
        return np.clip(y, -self.spec.y_bound, self.spec.y_bound)

    def sample_batch(
        self, X: np.ndarray, U: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """One draw of y per (x, u) row."""
        weights, means = self.mixture(X, U)
        n = len(weights)
        cum = np.cumsum(weights, axis=1)
        comps = (rng.random((n, 1)) > cum).sum(axis=1)
        comps = np.minimum(comps, self.spec.n_components - 1)
        chol = np.linalg.cholesky(self.correlation)
        noise = rng.standard_normal((n, self.r)) @ chol.T
        scales = np.asarray(self.spec.component_scales)[comps][:, None]
        y = means[np.arange(n), comps] + scales * noise
        return np.clip(y, -self.spec.y_bound, self.spec.y_bound)

    def reward(self, y: np.ndarray) -> np.ndarray:
        """Tolerance-box quality rule: 1 if every result is inside the box."""
        y = np.atleast_2d(y)
        inside = (y >= self.box_lower) & (y <= self.box_upper)
        return inside.all(axis=1).astype(np.float64)

    def true_expected_reward(self, x: np.ndarray, u: np.ndarray) -> float:
        """Exact P(y in box | x, u) as a weighted sum of Gaussian box probabilities."""
        weights, means = self.mixture(x, u)
        total = 0.0
        for k in range(self.spec.n_components):
            mvn = stats.multivariate_normal(mean=means[0, k], cov=self.covariances[k])
            prob = mvn.cdf(self.box_upper, lower_limit=self.box_lower)
            total += weights[0, k] * float(prob)
        return total

    # -- logging ---------------------------------------------------------------

    def sample_conditionals(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(n, self.p))

    def logging_controls(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        X = np.atleast_2d(X)
        mean = self.spec.logging_center + (X - 0.5) @ self.logging_slope.T
        noise = rng.normal(0.0, self.spec.logging_noise, size=mean.shape)
        return np.clip(mean + noise, 0.0, 1.0)

    def logging_value(self, n_queries: int, seed: int) -> float:
        """True value of the logging policy, averaged over fresh (x, u) draws."""
        rng = np.random.default_rng(seed)
        X = self.sample_conditionals(n_queries, rng)
        U = self.logging_controls(X, rng)
        return float(np.mean([self.true_expected_reward(x, u) for x, u in zip(X, U)]))


def generate_synthetic_discrete(
    spec: GeneratorSpec, n: int, seed: int
) -> ProcessDataset:
    """
    Sample ``n`` records from the logging policy and p*.

    The returned dataset carries its GroundTruth in ``dataset.ground_truth``.
    """
    if n < 0:
        raise ConfigError(f"n must be >= 0, got {n}")
    truth = GroundTruth(spec)
    rng = np.random.default_rng(seed)
    X = truth.sample_conditionals(n, rng)
    U = truth.logging_controls(X, rng)
    Y = truth.sample_batch(X, U, rng) if n else np.zeros((0, truth.r))
    dataset = ProcessDataset(truth.schema(), X, U, Y, ground_truth=truth)
    if n == 0:
        return dataset
    logger.info(f"Generated {n} synthetic records with dims {spec.dims} (seed {seed})")
    return dataset.fit_normalization()


def toy_dataset(kind: str, n: int, seed: int, noise: float = 0.1) -> ProcessDataset:
    """
    One-dimensional toy processes used to sanity-check the dynamics models.

    ``identity``: y = u + noise * eps. ``double``: y = 2u. ``constant``: y = 0.5.
    The conditional variable is uniform and irrelevant.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 1))
    U = rng.uniform(0.0, 1.0, size=(n, 1))
    if kind == "identity":
        Y = U + noise * rng.standard_normal((n, 1))
        bounds = (-1.0, 2.0)
    elif kind == "double":
        Y = 2.0 * U
        bounds = (0.0, 2.0)
    elif kind == "constant":
        Y = np.full((n, 1), 0.5)
        bounds = (0.0, 1.0)
    else:
        raise ValueError(f"unknown toy process '{kind}'")
    schema = DatasetSchema.build([(0.0, 1.0)], [(0.0, 1.0)], [bounds])
    return ProcessDataset(schema, X, U, np.clip(Y, *bounds)).fit_normalization()


@dataclass
class SyntheticBandit:
    """
    Continuous-action bandit with Gaussian logging and target policies.

    Reward is ``a - b (u - x)^2 + noise``, so the target policy's value is known:
    ``a - b (offset_target^2 + sigma_target^2)``.
    """

    a: float = 1.0
    b: float = 1.0
    offset_log: float = -0.2
    sigma_log: float = 0.3
    offset_target: float = 0.1
    sigma_target: float = 0.2
    reward_noise: float = 0.1

    def true_value(self) -> float:
        return self.a - self.b * (self.offset_target**2 + self.sigma_target**2)

    def log_density(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return stats.norm.pdf(u, loc=x + self.offset_log, scale=self.sigma_log)

    def target_density(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return stats.norm.pdf(u, loc=x + self.offset_target, scale=self.sigma_target)

    def expected_reward(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.a - self.b * (np.asarray(u) - np.asarray(x)) ** 2

    def sample(self, n: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        x = rng.uniform(0.0, 1.0, size=n)
        u = x + self.offset_log + self.sigma_log * rng.standard_normal(n)
        r = self.expected_reward(x, u) + self.reward_noise * rng.standard_normal(n)
        return {"x": x, "u": u, "reward": r}