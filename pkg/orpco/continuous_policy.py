"""Offline DDPG trained inside the dynamics ensemble.

Rollouts never touch the real process: at every step the ensemble draws N results
from each member at (x_t, u_t), the evaluator turns them into a (penalized)
reward and one pooled draw, projected through the schema's next-state map,
becomes x_{t+1}. The trained actor is then scored on the surrogate environment.
"""

from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from .config import DdpgConfig
from .data import Normalizer, ProcessDataset
from .dynamics_cgan import DynamicsEnsemble
from .errors import ConfigError, TrainingError
from .function_approx import (
    AdamOptimizer,
    Mlp,
    MlpSpec,
    as_tensor,
    derive_seed,
    load_checkpoint,
    save_checkpoint,
    soft_update,
)
from .ib_surrogate import IbEnvironment, IbState, behavior_action
from .logging_config import get_logger
from .reward_eval import (
    PenaltyCalibration,
    RewardFunction,
    UncertaintyReport,
    ib_reward,
    make_evaluator,
)


logger = get_logger("continuous_policy")


@dataclass
class RolloutStep:
    """One model transition; ``seed`` reproduces the draws it came from."""

    x: np.ndarray
    u: np.ndarray
    reward: float
    x_next: np.ndarray
    report: Optional[UncertaintyReport] = field(default=None, repr=False)
    seed: Optional[int] = None


class ReplayBuffer:
    """FIFO transition store; the oldest transitions are evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.steps: Deque[RolloutStep] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.steps)

    def add(self, step: RolloutStep) -> None:
        self.steps.append(step)

    def sample(
        self, batch_size: int, rng: np.random.Generator
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Uniform draw with replacement: (states, actions, rewards, next states)."""
        if not self.steps:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(len(self.steps), size=batch_size)
        batch = [self.steps[i] for i in idx]
        return (
            np.stack([s.x for s in batch]),
            np.stack([s.u for s in batch]),
            np.array([s.reward for s in batch]),
            np.stack([s.x_next for s in batch]),
        )


class OrnsteinUhlenbeckNoise:
    """Temporally correlated exploration noise dX = theta (mu - X) + sigma dW."""

    def __init__(self, dim: int, theta: float = 0.15, sigma: float = 0.2, mu: float = 0.0):
        self.dim = dim
        self.theta = theta
        self.sigma = sigma
        self.mu = mu
        self.state = np.full(dim, mu, dtype=np.float64)

    def reset(self) -> None:
        self.state = np.full(self.dim, self.mu, dtype=np.float64)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        self.state = (
            self.state
            + self.theta * (self.mu - self.state)
            + self.sigma * rng.standard_normal(self.dim)
        )
        return self.state.copy()


class DdpgAgent:
    """
    Deterministic actor, Q critic and their target copies.

    The actor ends in tanh; its output a in [-1, 1] is mapped affinely onto the
    control box, so every action lies within the control bounds. Both networks
    read normalized conditionals, and the critic reads the action in the same
    [-1, 1] units.
    """

    def __init__(
        self,
        normalizer: Normalizer,
        control_lower: np.ndarray,
        control_upper: np.ndarray,
        config: DdpgConfig,
        seed: int = 0,
        networks: Optional[Dict[str, Mlp]] = None,
    ):
        self.normalizer = normalizer
        self.lower = np.asarray(control_lower, dtype=np.float64)
        self.upper = np.asarray(control_upper, dtype=np.float64)
        self.config = config
        p = len(normalizer.scale["conditional"])
        q = len(self.lower)
        if networks is None:
            hidden = tuple(config.hidden_dims)
            actor = Mlp(MlpSpec(p, hidden, q, output_activation="tanh"), seed=derive_seed(seed, 0))
            critic = Mlp(MlpSpec(p + q, hidden, 1), seed=derive_seed(seed, 1))
            networks = {
                "actor": actor,
                "critic": critic,
                "target_actor": actor.copy(),
                "target_critic": critic.copy(),
            }
        self.actor = networks["actor"]
        self.critic = networks["critic"]
        self.target_actor = networks["target_actor"]
        self.target_critic = networks["target_critic"]
        self.actor_optimizer = AdamOptimizer(self.actor.params, lr=config.actor_lr)
        self.critic_optimizer = AdamOptimizer(self.critic.params, lr=config.critic_lr)
        self.noise = OrnsteinUhlenbeckNoise(q, config.ou_theta, config.ou_sigma)
        self.episode_returns: List[float] = []
        self.critic_losses: List[float] = []
        self.updates = 0

    def _states(self, x) -> torch.Tensor:
        return as_tensor(self.normalizer.normalize("conditional", np.atleast_2d(x)))

    def to_unit(self, u) -> np.ndarray:
        return 2.0 * (np.atleast_2d(u) - self.lower) / (self.upper - self.lower) - 1.0

    def from_unit(self, a) -> np.ndarray:
        return self.lower + (np.clip(a, -1.0, 1.0) + 1.0) / 2.0 * (self.upper - self.lower)

    def act(self, x, noise: Optional[np.ndarray] = None) -> np.ndarray:
        """Control for a single conditional vector, in data units."""
        with torch.no_grad():
            a = self.actor(self._states(x))[0].numpy()
        if noise is not None:
            a = a + noise
        return self.from_unit(a)

    def act_batch(self, X) -> np.ndarray:
        with torch.no_grad():
            a = self.actor(self._states(X)).numpy()
        return self.from_unit(a)

    def q_values(self, X, U) -> np.ndarray:
        with torch.no_grad():
            inputs = torch.cat([self._states(X), as_tensor(self.to_unit(U))], dim=1)
            return self.critic(inputs)[:, 0].numpy()

    def update(
        self, states, actions, rewards, next_states, episode: Optional[int] = None
    ) -> Tuple[float, float]:
        """
        One critic regression step towards r + gamma Q'(x', pi'(x')), one actor
        ascent step on Q(x, pi(x)), then soft target updates.

        Returns (critic loss, actor loss).
        """
        s = self._states(states)
        s_next = self._states(next_states)
        a = as_tensor(self.to_unit(actions))
        r = as_tensor(rewards).reshape(-1, 1)
        with torch.no_grad():
            a_next = self.target_actor(s_next)
            target = r + self.config.gamma * self.target_critic(torch.cat([s_next, a_next], dim=1))

        critic_loss = F.mse_loss(self.critic(torch.cat([s, a], dim=1)), target)
        if not torch.isfinite(critic_loss):
            raise TrainingError(f"non-finite critic loss {float(critic_loss)}", episode=episode)
        critic_value = self.critic_optimizer.minimize(critic_loss)

        actor_loss = -self.critic(torch.cat([s, self.actor(s)], dim=1)).mean()
        actor_value = self.actor_optimizer.minimize(actor_loss)
        # actor backward also fills the critic gradient
        self.critic.params.grad = None

        soft_update(self.target_critic.params, self.critic.params, self.config.tau)
        soft_update(self.target_actor.params, self.actor.params, self.config.tau)
        self.updates += 1
        self.critic_losses.append(critic_value)
        return critic_value, actor_value

    def return_summary(self, last: Optional[int] = None) -> Tuple[float, float]:
        """Mean and std of the training returns over the last ``last`` episodes."""
        last = last or self.config.report_last
        tail = np.asarray(self.episode_returns[-last:])
        if tail.size == 0:
            return float("nan"), float("nan")
        return float(tail.mean()), float(tail.std())

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("actor", "critic", "target_actor", "target_critic"):
            net = getattr(self, name)
            save_checkpoint(directory / name, net.spec, net.params)
        with open(directory / "agent.json", "w", encoding="utf-8") as f:
            json.dump(
                {
                    "config": asdict(self.config),
                    "control_lower": self.lower.tolist(),
                    "control_upper": self.upper.tolist(),
                    "normalizer": self.normalizer.to_dict(),
                    "episode_returns": self.episode_returns,
                    "updates": self.updates,
                },
                f,
                indent=2,
            )
        logger.info(f"Saved DDPG agent to {directory}")
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> DdpgAgent:
        directory = Path(directory)
        with open(directory / "agent.json", "r", encoding="utf-8") as f:
            meta = json.load(f)
        networks = {}
        for name in ("actor", "critic", "target_actor", "target_critic"):
            spec, params, _ = load_checkpoint(directory / name)
            networks[name] = Mlp(spec, params=params)
        agent = cls(
            Normalizer.from_dict(meta["normalizer"]),
            np.asarray(meta["control_lower"]),
            np.asarray(meta["control_upper"]),
            DdpgConfig.from_dict(meta["config"]),
            networks=networks,
        )
        agent.episode_returns = list(meta.get("episode_returns", []))
        agent.updates = int(meta.get("updates", 0))
        return agent


def _initial_states(dataset: ProcessDataset) -> np.ndarray:
    """Conditionals at t == 0 when the dataset has a time column, else all of them."""
    if dataset.T is not None and np.any(dataset.T == 0):
        return dataset.X[dataset.T == 0]
    return dataset.X


@dataclass
class DdpgRun:
    """Trained agent plus the bookkeeping of the model rollouts."""

    agent: DdpgAgent
    buffer: ReplayBuffer
    branches: Counter = field(default_factory=Counter)

    @property
    def episode_returns(self) -> List[float]:
        return self.agent.episode_returns


def train_offline_ddpg(
    ensemble: DynamicsEnsemble,
    dataset: ProcessDataset,
    calib: PenaltyCalibration,
    config: DdpgConfig,
    seed: int,
    reward: Optional[RewardFunction] = None,
    evaluator: str = "rp",
) -> DdpgRun:
    """
    Train a DDPG agent purely on ensemble rollouts.

    Each episode starts from a logged initial conditional and runs
    ``config.horizon`` steps. The transition reward is the ``evaluator`` value
    (penalized by default); the next conditional is one uniformly chosen pooled
    ensemble draw projected through ``schema.next_state_map``. After
    ``config.warmup`` transitions the agent takes one update per step.

    Raises:
        ConfigError: the schema declares no next-state map, or the dataset is empty.
        TrainingError: a critic loss was non-finite (carries the episode index).
    """
    schema = ensemble.schema
    if schema.next_state_map is None:
        raise ConfigError("schema.next_state_map: continuous control needs a y -> x mapping")
    if len(dataset) == 0:
        raise ConfigError("cannot sample initial states from an empty dataset")
    next_map = np.asarray(schema.next_state_map)
    objective = make_evaluator(evaluator, ensemble, reward or ib_reward(), calib)
    lower, upper = schema.bounds("control")
    agent = DdpgAgent(ensemble.normalizer, lower, upper, config, seed)
    buffer = ReplayBuffer(config.buffer_capacity)
    rng = np.random.default_rng(derive_seed(seed, 2))
    starts = _initial_states(dataset)
    branches: Counter = Counter()
    warmup = max(config.warmup, 1)

    for episode in range(config.episodes):
        x = starts[rng.integers(len(starts))].copy()
        agent.noise.reset()
        total = 0.0
        for t in range(config.horizon):
            u = agent.act(x, agent.noise.sample(rng))
            step_seed = derive_seed(seed, 3, episode, t)
            value, report, samples = objective.evaluate_with_samples(x, u, step_seed)
            pooled = samples.reshape(-1, samples.shape[-1])
            x_next = pooled[rng.integers(len(pooled))][next_map]
            buffer.add(RolloutStep(x, u, value, x_next, report, step_seed))
            branches[report.branch] += 1
            total += value
            if len(buffer) >= warmup:
                batch = buffer.sample(min(config.batch_size, len(buffer)), rng)
                agent.update(*batch, episode=episode)
            x = x_next
        agent.episode_returns.append(total)
        logger.debug(f"[{evaluator}] episode {episode}: return {total:.4g}")

    mean, std = agent.return_summary()
    logger.info(
        f"Offline DDPG ({evaluator}) finished {config.episodes} episodes, {agent.updates} updates; "
        f"last-{config.report_last} return {mean:.4g} +/- {std:.4g}; branches {dict(branches)}"
    )
    return DdpgRun(agent, buffer, branches)


def _run_episodes(
    choose: Callable[[IbState, np.random.Generator], np.ndarray],
    env: IbEnvironment,
    n_episodes: int,
    T: int,
    seed: int,
) -> Tuple[float, float]:
    returns = []
    for episode in range(n_episodes):
        rng = np.random.default_rng(derive_seed(seed, episode))
        state = env.reset(rng)
        total = 0.0
        for _ in range(T):
            state, r = env.step(choose(state, rng), rng)
            total += r
        returns.append(total)
    returns = np.asarray(returns)
    return float(returns.mean()), float(returns.std())


def evaluate_policy(
    agent, env: IbEnvironment, n_episodes: int, T: int, seed: int
) -> Tuple[float, float]:
    """Mean and std of undiscounted returns of the noise-free actor on ``env``."""
    return _run_episodes(lambda state, _: agent.act(state.to_vector()), env, n_episodes, T, seed)


def evaluate_behavior_policy(
    tag: str, env: IbEnvironment, n_episodes: int, T: int, seed: int
) -> Tuple[float, float]:
    """The same protocol for a behavior policy (``random`` or ``safe``)."""
    return _run_episodes(lambda state, rng: behavior_action(tag, state, rng), env, n_episodes, T, seed)
