"""Per-query Bayesian optimization of control parameters.

For a given conditional vector x the policy searches u* = argmax_u f(u | x) over
the control box with a Gaussian-process surrogate and expected improvement. The
objective is any evaluator (penalized or comparator); all trials of one query
share an evaluation seed so their values are comparable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import optimize, stats
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel

from .config import BoConfig
from .errors import EvaluationError
from .function_approx import derive_seed
from .logging_config import get_logger


logger = get_logger("discrete_policy")

Objective = Callable[[np.ndarray, np.ndarray, int], float]


@dataclass
class TrialTrace:
    """Every (u, value) tried for one query, in trial order."""

    controls: List[np.ndarray] = field(default_factory=list)
    values: List[float] = field(default_factory=list)

    def add(self, u: np.ndarray, value: float) -> None:
        self.controls.append(np.asarray(u, dtype=np.float64))
        self.values.append(float(value))

    @property
    def best_index(self) -> int:
        # np.argmax returns the first maximum: ties go to the earliest trial
        return int(np.argmax(self.values))

    @property
    def best_values(self) -> np.ndarray:
        """Running maximum over trials."""
        return np.maximum.accumulate(np.asarray(self.values))

    def to_dict(self) -> Dict:
        return {
            "controls": [u.tolist() for u in self.controls],
            "values": list(self.values),
            "best_index": self.best_index,
        }


def expected_improvement(
    mean: np.ndarray, std: np.ndarray, best: float, xi: float = 0.0
) -> np.ndarray:
    """EI for maximization; zero where the surrogate is certain."""
    improvement = mean - best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, improvement / std, 0.0)
    ei = improvement * stats.norm.cdf(z) + std * stats.norm.pdf(z)
    return np.where(std > 0, np.maximum(ei, 0.0), 0.0)


class DiscretePolicy:
    """
    Bayesian-optimization policy over a box of controls.

    Args:
        objective: ``f(x, u, seed) -> value``, typically an Evaluator.
        lower, upper: Control-space bounds in data units.
        config: Search settings.
        tag: Evaluator tag, for reporting.
    """

    def __init__(
        self,
        objective: Objective,
        lower: Sequence[float],
        upper: Sequence[float],
        config: BoConfig,
        tag: str = "rp",
    ):
        self.objective = objective
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape or np.any(self.upper <= self.lower):
            raise ValueError("control bounds must have matching shapes with lower < upper")
        self.config = config
        self.tag = tag

    @property
    def dim(self) -> int:
        return len(self.lower)

    def _to_controls(self, unit: np.ndarray) -> np.ndarray:
        return self.lower + np.clip(unit, 0.0, 1.0) * (self.upper - self.lower)

    def _surrogate(self, seed: int) -> GaussianProcessRegressor:
        lo, hi = self.config.lengthscale_bounds
        kernel = ConstantKernel(1.0, (1e-5, 1e5)) * RBF(
            length_scale=np.full(self.dim, 0.3), length_scale_bounds=(lo, hi)
        )
        return GaussianProcessRegressor(
            kernel=kernel, alpha=self.config.noise, normalize_y=True, random_state=seed
        )

    def _next_trial(
        self, trials: np.ndarray, values: np.ndarray, rng: np.random.Generator, seed: int
    ) -> np.ndarray:
        gp = self._surrogate(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gp.fit(trials, values)
        best = float(values.max())
        xi = self.config.xi

        def negative_ei(u: np.ndarray) -> float:
            mean, std = gp.predict(np.atleast_2d(u), return_std=True)
            return -float(expected_improvement(mean, std, best, xi)[0])

        candidates = rng.random((self.config.n_candidates, self.dim))
        mean, std = gp.predict(candidates, return_std=True)
        scores = expected_improvement(mean, std, best, xi)
        starts = candidates[np.argsort(-scores, kind="stable")[: self.config.n_refine]]

        best_u, best_score = starts[0], -float(scores.max())
        for start in starts:
            result = optimize.minimize(
                negative_ei, start, method="L-BFGS-B", bounds=[(0.0, 1.0)] * self.dim
            )
            if result.fun < best_score:
                best_u, best_score = result.x, float(result.fun)
        return np.clip(best_u, 0.0, 1.0)

    def optimize_controls(self, x, seed: Optional[int] = None) -> Tuple[np.ndarray, TrialTrace]:
        """
        Search the control box for the best value of the objective at ``x``.

        Returns the best trial (earliest among ties) and the full trial trace.

        Raises:
            EvaluationError: the objective failed, naming the trial index.
        """
        seed = self.config.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        eval_seed = derive_seed(seed, 1)
        x = np.asarray(x, dtype=np.float64)
        trace = TrialTrace()
        unit_trials: List[np.ndarray] = []

        def trial(unit: np.ndarray) -> None:
            u = self._to_controls(unit)
            try:
                value = self.objective(x, u, eval_seed)
            except Exception as e:
                raise EvaluationError(str(e), trial=len(trace.values)) from e
            unit_trials.append(unit)
            trace.add(u, value)

        for unit in rng.random((self.config.n_init, self.dim)):
            trial(unit)
        for step in range(self.config.n_iter):
            unit = self._next_trial(
                np.asarray(unit_trials), np.asarray(trace.values), rng, derive_seed(seed, 2, step)
            )
            trial(unit)

        best = trace.best_index
        logger.debug(
            f"[{self.tag}] {len(trace.values)} trials, best value {trace.values[best]:.5g} at trial {best}"
        )
        return trace.controls[best].copy(), trace

    def choose(self, x, seed: int) -> np.ndarray:
        return self.optimize_controls(x, seed)[0]


class ControlPolicy(Protocol):
    def choose(self, x: np.ndarray, seed: int) -> np.ndarray: ...


class LoggingPolicy:
    """Replays the synthetic logging policy; used as the behavior-clone baseline."""

    def __init__(self, ground_truth):
        self.ground_truth = ground_truth

    def choose(self, x: np.ndarray, seed: int) -> np.ndarray:
        return self.ground_truth.logging_controls(x, np.random.default_rng(seed))[0]


def policy_true_values(
    policy: ControlPolicy,
    ground_truth,
    n_queries: int,
    seed: int,
    n_mc: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    True expected reward of the policy's controls for ``n_queries`` fresh x draws.

    With ``n_mc`` the truth is estimated by brute-force sampling from the ground
    truth process instead of the closed form.

    Returns:
        (conditionals, controls, values), one row per query.
    """
    rng = np.random.default_rng(seed)
    X = ground_truth.sample_conditionals(n_queries, rng)
    controls, values = [], []
    for k, x in enumerate(X):
        u = np.asarray(policy.choose(x, derive_seed(seed, k)), dtype=np.float64)
        if n_mc is None:
            value = ground_truth.true_expected_reward(x, u)
        else:
            y = ground_truth.sample_results(x, u, n_mc, np.random.default_rng(derive_seed(seed, k, 1)))
            value = float(ground_truth.reward(y).mean())
        controls.append(u)
        values.append(value)
    return X, np.asarray(controls), np.asarray(values)


def policy_value_true(
    policy: ControlPolicy, ground_truth, n_queries: int, seed: int, n_mc: Optional[int] = None
) -> float:
    """Average true expected reward of the policy over ``n_queries`` conditionals."""
    return float(policy_true_values(policy, ground_truth, n_queries, seed, n_mc)[2].mean())


def policy_value_logging(ground_truth, n_queries: int, seed: int) -> float:
    """Value of the logging policy under the same query protocol."""
    return policy_value_true(LoggingPolicy(ground_truth), ground_truth, n_queries, seed)
