"""Surrogate industrial benchmark with velocity, gain and shift steering.

Observation (= conditional vector and, one step later, result vector):
``[v, g, s, consumption, fatigue]``; action: ``[dv, dg, ds]`` in [-1, 1], each
unit moving its steering variable by 10. Consumption and fatigue follow
transparent stand-in laws:

    fatigue'     = clip(0.9 f + 0.01 relu(v' - 60) + 0.01 relu(g' - 60) + sf * eta', 0, F_MAX)
    consumption' = clip(0.02 g' + 0.01 |v' - 50| + 0.5 fatigue' + sc * eta, 0, C_MAX)
    reward       = -consumption' - 3 fatigue'

CSV columns keep the generic ``x0..x4, u0..u2, y0..y4`` names in that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .config import BEHAVIOR_TAGS
from .data import DatasetSchema, ProcessDataset, Trajectory
from .errors import ConfigError
from .logging_config import get_logger


logger = get_logger("ib_surrogate")

STEERING_MAX = 100.0
STEP_SCALE = 10.0
# declared schema ranges only; from steering in [0, 100] fatigue settles below 9
CONSUMPTION_MAX = 100.0
FATIGUE_MAX = 100.0
SAFE_LOW, SAFE_HIGH = 40.0, 60.0
SAFE_PUSH_MEAN = 0.5
SAFE_PUSH_STD = 1.0 / np.sqrt(3.0)


@dataclass(frozen=True)
class IbState:
    v: float
    g: float
    s: float
    consumption: float = 0.0
    fatigue: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.array([self.v, self.g, self.s, self.consumption, self.fatigue])

    @classmethod
    def from_vector(cls, vector) -> IbState:
        v, g, s, c, f = (float(a) for a in vector)
        return cls(v, g, s, c, f)


def ib_schema() -> DatasetSchema:
    """Schema of surrogate data; every result component feeds the next observation."""
    state_bounds = [(0.0, STEERING_MAX)] * 3 + [(0.0, CONSUMPTION_MAX), (0.0, FATIGUE_MAX)]
    return DatasetSchema.build(
        conditional=state_bounds,
        control=[(-1.0, 1.0)] * 3,
        result=state_bounds,
        next_state_map=range(5),
    )


class IbEnvironment:
    """Stateless transition law plus a resettable episode cursor."""

    def __init__(self, consumption_noise: float = 0.2, fatigue_noise: float = 0.05):
        self.consumption_noise = consumption_noise
        self.fatigue_noise = fatigue_noise
        self.state: Optional[IbState] = None

    def step_from(
        self, state: IbState, action, rng: np.random.Generator
    ) -> Tuple[IbState, float]:
        """Apply ``action`` (clipped to [-1, 1]) to ``state``; returns (next state, reward)."""
        dv, dg, ds = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        v = float(np.clip(state.v + STEP_SCALE * dv, 0.0, STEERING_MAX))
        g = float(np.clip(state.g + STEP_SCALE * dg, 0.0, STEERING_MAX))
        s = float(np.clip(state.s + STEP_SCALE * ds, 0.0, STEERING_MAX))
        eta_f, eta_c = rng.standard_normal(2)
        fatigue = (
            0.9 * state.fatigue
            + 0.01 * max(0.0, v - 60.0)
            + 0.01 * max(0.0, g - 60.0)
            + self.fatigue_noise * eta_f
        )
        fatigue = max(0.0, float(fatigue))
        consumption = 0.02 * g + 0.01 * abs(v - 50.0) + 0.5 * fatigue + self.consumption_noise * eta_c
        consumption = max(0.0, float(consumption))
        nxt = IbState(v, g, s, consumption, fatigue)
        return nxt, -consumption - 3.0 * fatigue

    def reset(self, rng: np.random.Generator) -> IbState:
        """Steering uniform on [20, 80]; costs from one zero-action burn-in step."""
        v, g, s = rng.uniform(20.0, 80.0, size=3)
        self.state, _ = self.step_from(IbState(v, g, s), np.zeros(3), rng)
        return self.state

    def step(self, action, rng: np.random.Generator) -> Tuple[IbState, float]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        self.state, reward = self.step_from(self.state, action, rng)
        return self.state, reward


def behavior_random(rng: np.random.Generator) -> np.ndarray:
    """Each component i.i.d. uniform on (-1, 1)."""
    return rng.uniform(-1.0, 1.0, size=3)


def _push(value: float, rng: np.random.Generator) -> float:
    if value < SAFE_LOW:
        return float(rng.normal(SAFE_PUSH_MEAN, SAFE_PUSH_STD))
    if value > SAFE_HIGH:
        return -float(rng.normal(SAFE_PUSH_MEAN, SAFE_PUSH_STD))
    return float(rng.uniform(-1.0, 1.0))


def behavior_safe(state: IbState, rng: np.random.Generator) -> np.ndarray:
    """
    Keep velocity and gain in the medium range.

    Below 40 the delta is a N(0.5, 1/sqrt(3)) draw, above 60 its negation, and
    uniform on (-1, 1) otherwise; shift is always uniform. Draws are returned as
    sampled; the environment clips them when the action is applied.
    """
    return np.array([_push(state.v, rng), _push(state.g, rng), float(rng.uniform(-1.0, 1.0))])


def behavior_action(tag: str, state: IbState, rng: np.random.Generator) -> np.ndarray:
    if tag == "random":
        return behavior_random(rng)
    if tag == "safe":
        return behavior_safe(state, rng)
    raise ConfigError(f"unknown behavior policy '{tag}', expected one of {', '.join(BEHAVIOR_TAGS)}")


def rollout_dataset(
    policy: str,
    n_traj: int,
    T: int,
    seed: int,
    env: Optional[IbEnvironment] = None,
) -> Tuple[ProcessDataset, List[Trajectory]]:
    """
    Simulate ``n_traj`` behavior-policy trajectories of length ``T``.

    Record t of a trajectory holds x = state_t, u = clipped action_t and
    y = state_{t+1}; the ``t`` column is the step index.
    """
    if policy not in BEHAVIOR_TAGS:
        raise ConfigError(f"unknown behavior policy '{policy}', expected one of {', '.join(BEHAVIOR_TAGS)}")
    if n_traj < 1 or T < 1:
        raise ConfigError("n_traj and T must be >= 1")
    env = env or IbEnvironment()
    rng = np.random.default_rng(seed)
    X, U, Y, steps = [], [], [], []
    trajectories = []
    for _ in range(n_traj):
        state = env.reset(rng)
        trajectory = Trajectory()
        for t in range(T):
            action = np.clip(behavior_action(policy, state, rng), -1.0, 1.0)
            nxt, reward = env.step(action, rng)
            x, y = state.to_vector(), nxt.to_vector()
            trajectory.append(x, action, reward, y)
            X.append(x)
            U.append(action)
            Y.append(y)
            steps.append(t)
            state = nxt
        trajectories.append(trajectory)
    dataset = ProcessDataset(ib_schema(), np.array(X), np.array(U), np.array(Y), np.array(steps))
    dataset.validate()
    logger.info(f"Simulated {n_traj} '{policy}' trajectories of length {T} ({len(dataset)} records)")
    return dataset.fit_normalization(), trajectories


def coverage_outside(dataset: ProcessDataset, low: float = 35.0, high: float = 65.0) -> float:
    """Fraction of records whose velocity lies outside [low, high]."""
    v = dataset.X[:, 0]
    return float(np.mean((v < low) | (v > high)))
