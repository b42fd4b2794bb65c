"""Conditional GAN dynamics models and the M-member dynamics ensemble.

Each member is a WGAN-GP conditional GAN: the generator maps uniform noise plus
the normalized condition (x, u) to a normalized result vector, the critic scores
(y, x, u). Members differ only in their seed (initialization and shuffling).
"""

from __future__ import annotations

import json
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch
from scipy.spatial.distance import cdist

from .config import CganConfig, betas_tuple
from .data import DatasetSchema, Normalizer, ProcessDataset
from .errors import ConfigError, DataError, ModelStateError, TrainingError
from .function_approx import (
    AdamOptimizer,
    Mlp,
    MlpSpec,
    as_tensor,
    derive_seed,
    forward,
    grad_input,
    iterate_minibatches,
    load_checkpoint,
    save_checkpoint,
    torch_generator,
)
from .logging_config import get_logger


logger = get_logger("dynamics_cgan")

_MANIFEST = "manifest.json"


class ResultSampler(Protocol):
    """What an ensemble member must offer; CGAN and GPN members both do."""

    normalizer: Normalizer
    trained: bool

    def sample_normalized(
        self, Xn: np.ndarray, Un: np.ndarray, n_samples: int, generator: torch.Generator
    ) -> np.ndarray: ...

    def save(self, directory: Union[str, Path]) -> None: ...


@dataclass
class TrainingLog:
    """Per-epoch mean losses of one training run."""

    epochs: List[int] = field(default_factory=list)
    losses: Dict[str, List[float]] = field(default_factory=dict)

    def record(self, epoch: int, **values: float) -> None:
        self.epochs.append(epoch)
        for key, value in values.items():
            self.losses.setdefault(key, []).append(float(value))

    def last(self, key: str) -> float:
        return self.losses[key][-1]

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> TrainingLog:
        if not data:
            return cls()
        return cls(list(data.get("epochs", [])), {k: list(v) for k, v in data.get("losses", {}).items()})


def _normalized_inputs(normalizer: Normalizer, x, u) -> Tuple[np.ndarray, np.ndarray]:
    return (
        normalizer.normalize("conditional", np.atleast_2d(x)),
        normalizer.normalize("control", np.atleast_2d(u)),
    )


def _require_normalized(dataset: ProcessDataset) -> Normalizer:
    if dataset.normalizer is None:
        raise DataError("training data has no fitted normalization")
    return dataset.normalizer


def _check_batch(dataset: ProcessDataset, batch_size: int) -> None:
    if len(dataset) < batch_size:
        raise ConfigError(
            f"training set has {len(dataset)} records, smaller than one batch ({batch_size})"
        )


class CganModel:
    """Generator G(z | x, u) and critic D(y | x, u) of one conditional GAN."""

    def __init__(
        self,
        generator: Mlp,
        discriminator: Mlp,
        noise_dim: int,
        normalizer: Normalizer,
        trained: bool = False,
        log: Optional[TrainingLog] = None,
    ):
        result_dim = generator.spec.output_dim
        cond_dim = generator.spec.input_dim - noise_dim
        if discriminator.spec.output_dim != 1:
            raise ValueError("discriminator must have a scalar output")
        if discriminator.spec.input_dim != result_dim + cond_dim:
            raise ValueError("discriminator input must be dim(y) + dim(x) + dim(u)")
        self.generator = generator
        self.discriminator = discriminator
        self.noise_dim = noise_dim
        self.normalizer = normalizer
        self.trained = trained
        self.log = log or TrainingLog()

    @classmethod
    def build(
        cls, schema: DatasetSchema, normalizer: Normalizer, config: CganConfig, seed: int
    ) -> CganModel:
        p, q, r = (schema.dim(k) for k in ("conditional", "control", "result"))
        noise_dim = config.noise_dim or r + 2
        hidden = tuple(config.hidden_dims)
        gen_spec = MlpSpec(noise_dim + p + q, hidden, r)
        disc_spec = MlpSpec(r + p + q, hidden, 1)
        return cls(
            Mlp(gen_spec, seed=derive_seed(seed, 0)),
            Mlp(disc_spec, seed=derive_seed(seed, 1)),
            noise_dim,
            normalizer,
        )

    @property
    def result_dim(self) -> int:
        return self.generator.spec.output_dim

    def generate(self, z: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.generator(torch.cat([z, cond], dim=1))

    def critic(self, y: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.discriminator(torch.cat([y, cond], dim=1)).squeeze(1)

    def critic_input_gradient(self, y: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """dD/dy at (y, cond), differentiable with respect to the critic parameters."""
        inputs = torch.cat([y, cond], dim=1)
        grad = grad_input(self.discriminator.spec, self.discriminator.params, inputs)
        return grad[:, : self.result_dim]

    def sample_normalized(
        self, Xn: np.ndarray, Un: np.ndarray, n_samples: int, generator: torch.Generator
    ) -> np.ndarray:
        """``n_samples`` normalized draws per condition row, shape (rows, n_samples, r)."""
        if not self.trained:
            raise ModelStateError("CGAN member is not trained")
        if n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {n_samples}")
        cond = as_tensor(np.concatenate([Xn, Un], axis=1))
        rows = cond.shape[0]
        z = torch.rand(rows * n_samples, self.noise_dim, generator=generator, dtype=cond.dtype)
        cond = cond.repeat_interleave(n_samples, dim=0)
        with torch.no_grad():
            y = forward(self.generator.spec, self.generator.params, torch.cat([z, cond], dim=1))
        return y.numpy().reshape(rows, n_samples, self.result_dim)

    def sample(self, x, u, n_samples: int, seed: int) -> np.ndarray:
        """``n_samples`` result vectors in data units at a single (x, u)."""
        Xn, Un = _normalized_inputs(self.normalizer, x, u)
        yn = self.sample_normalized(Xn[:1], Un[:1], n_samples, torch_generator(seed))[0]
        return self.normalizer.denormalize("result", yn)

    def save(self, directory: Union[str, Path]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_checkpoint(directory / "generator", self.generator.spec, self.generator.params)
        save_checkpoint(directory / "discriminator", self.discriminator.spec, self.discriminator.params)
        with open(directory / "model.json", "w", encoding="utf-8") as f:
            json.dump(
                {
                    "kind": "cgan",
                    "noise_dim": self.noise_dim,
                    "trained": self.trained,
                    "normalizer": self.normalizer.to_dict(),
                    "log": self.log.to_dict(),
                },
                f,
            )

    @classmethod
    def load(cls, directory: Union[str, Path]) -> CganModel:
        directory = Path(directory)
        with open(directory / "model.json", "r", encoding="utf-8") as f:
            meta = json.load(f)
        gen_spec, gen_params, _ = load_checkpoint(directory / "generator")
        disc_spec, disc_params, _ = load_checkpoint(directory / "discriminator")
        return cls(
            Mlp(gen_spec, params=gen_params),
            Mlp(disc_spec, params=disc_params),
            int(meta["noise_dim"]),
            Normalizer.from_dict(meta["normalizer"]),
            trained=bool(meta["trained"]),
            log=TrainingLog.from_dict(meta.get("log")),
        )


def train_cgan(train: ProcessDataset, config: CganConfig, seed: int) -> CganModel:
    """
    Train one conditional GAN with the Wasserstein gradient-penalty objectives.

    Critic loss: E[D(G(z|x,u))] - E[D(y)] + lambda * E[(||dD/dy'|| - 1)^2], with
    y' a uniform random point on the segment between a real and a generated
    result. Generator loss: -E[D(G(z|x,u))]. The critic takes ``critic_steps``
    minibatch updates per generator update.

    Raises:
        ConfigError: fewer records than one batch.
        TrainingError: a non-finite loss, carrying the epoch index.
    """
    normalizer = _require_normalized(train)
    _check_batch(train, config.batch_size)
    model = CganModel.build(train.schema, normalizer, config, seed)

    Xn = train.normalized("conditional")
    Un = train.normalized("control")
    Yn = train.normalized("result")
    cond_all = as_tensor(np.concatenate([Xn, Un], axis=1))
    y_all = as_tensor(Yn)

    rng = np.random.default_rng(derive_seed(seed, 2))
    noise = torch_generator(derive_seed(seed, 3))
    betas = betas_tuple(config.betas)
    gen_opt = AdamOptimizer(model.generator.params, lr=config.lr, betas=betas)
    disc_opt = AdamOptimizer(model.discriminator.params, lr=config.lr, betas=betas)

    critic_updates = 0
    for epoch in range(config.epochs):
        d_losses, g_losses = [], []
        for batch in iterate_minibatches(len(train), config.batch_size, rng, drop_last=True):
            idx = torch.as_tensor(batch)
            cond, y_real = cond_all[idx], y_all[idx]
            n = len(batch)

            z = torch.rand(n, model.noise_dim, generator=noise, dtype=cond.dtype)
            with torch.no_grad():
                y_fake = model.generate(z, cond)
            alpha = torch.rand(n, 1, generator=noise, dtype=cond.dtype)
            y_mix = alpha * y_real + (1.0 - alpha) * y_fake
            grad = model.critic_input_gradient(y_mix, cond)
            penalty = ((grad.norm(dim=1) - 1.0) ** 2).mean()
            d_loss = (
                model.critic(y_fake, cond).mean()
                - model.critic(y_real, cond).mean()
                + config.gp_lambda * penalty
            )
            if not torch.isfinite(d_loss):
                raise TrainingError(f"non-finite critic loss {float(d_loss)}", epoch=epoch)
            d_losses.append(disc_opt.minimize(d_loss))
            critic_updates += 1

            if critic_updates % config.critic_steps == 0:
                z = torch.rand(n, model.noise_dim, generator=noise, dtype=cond.dtype)
                g_loss = -model.critic(model.generate(z, cond), cond).mean()
                if not torch.isfinite(g_loss):
                    raise TrainingError(f"non-finite generator loss {float(g_loss)}", epoch=epoch)
                g_losses.append(gen_opt.minimize(g_loss))

        d_mean = float(np.mean(d_losses))
        g_mean = float(np.mean(g_losses)) if g_losses else float("nan")
        model.log.record(epoch, critic=d_mean, generator=g_mean)
        if config.log_every and (epoch + 1) % config.log_every == 0:
            logger.debug(f"epoch {epoch + 1}/{config.epochs}: critic={d_mean:.4f} generator={g_mean:.4f}")

    model.trained = True
    logger.info(
        f"Trained CGAN (seed {seed}) for {config.epochs} epochs: "
        f"critic={model.log.last('critic'):.4f}"
    )
    return model


def penalty_gradient_norm(model: CganModel, dataset: ProcessDataset, seed: int) -> float:
    """Mean critic input-gradient norm on real/generated interpolates over ``dataset``."""
    normalizer = model.normalizer
    Xn, Un = _normalized_inputs(normalizer, dataset.X, dataset.U)
    cond = as_tensor(np.concatenate([Xn, Un], axis=1))
    y_real = as_tensor(normalizer.normalize("result", dataset.Y))
    gen = torch_generator(seed)
    z = torch.rand(len(dataset), model.noise_dim, generator=gen, dtype=cond.dtype)
    alpha = torch.rand(len(dataset), 1, generator=gen, dtype=cond.dtype)
    with torch.no_grad():
        y_fake = model.generate(z, cond)
    grad = model.critic_input_gradient(alpha * y_real + (1.0 - alpha) * y_fake, cond)
    return float(grad.norm(dim=1).mean().detach())


class DynamicsEnsemble:
    """
    M trained result samplers sharing one schema.

    Inputs and outputs of the sampling methods are in data units; moments used for
    the uncertainty signals come from :meth:`sample_all_normalized`.
    """

    def __init__(
        self,
        members: Sequence[ResultSampler],
        schema: DatasetSchema,
        kind: str,
        config: Optional[Dict] = None,
    ):
        if len(members) < 2:
            raise ConfigError(f"ensemble needs M >= 2 members, got {len(members)}")
        self.members = list(members)
        self.schema = schema
        self.kind = kind
        self.normalizer = self.members[0].normalizer
        self.config = config or {}

    def __len__(self) -> int:
        return len(self.members)

    @property
    def M(self) -> int:
        return len(self.members)

    def _member_generator(self, member: int, seed: int) -> torch.Generator:
        return torch_generator(derive_seed(seed, member))

    def sample(self, member: int, x, u, n_samples: int, seed: int) -> np.ndarray:
        """``n_samples`` draws of y from one member at (x, u); shape (n_samples, r)."""
        return self.normalizer.denormalize(
            "result", self.sample_member_normalized(member, x, u, n_samples, seed)[0]
        )

    def sample_member_normalized(
        self, member: int, X, U, n_samples: int, seed: int
    ) -> np.ndarray:
        Xn, Un = _normalized_inputs(self.normalizer, X, U)
        return self.members[member].sample_normalized(
            Xn, Un, n_samples, self._member_generator(member, seed)
        )

    def sample_all_normalized(self, X, U, n_samples: int, seed: int) -> np.ndarray:
        """Normalized draws from every member with independent streams: (rows, M, N, r)."""
        per_member = [
            self.sample_member_normalized(i, X, U, n_samples, seed) for i in range(self.M)
        ]
        return np.stack(per_member, axis=1)

    def sample_all(self, x, u, n_samples: int, seed: int) -> np.ndarray:
        """Draws from every member at one (x, u) in data units: (M, N, r)."""
        yn = self.sample_all_normalized(x, u, n_samples, seed)[0]
        return self.normalizer.denormalize("result", yn)

    def save(self, directory: Union[str, Path]) -> Path:
        """Write one sub-folder per member plus the ensemble manifest."""
        directory = Path(directory)
        staging = directory.with_name(directory.name + ".partial")
        if staging.exists():
            shutil.rmtree(staging)
        staging.mkdir(parents=True)
        for i, member in enumerate(self.members):
            member.save(staging / f"member_{i}")
        manifest = {
            "kind": self.kind,
            "M": self.M,
            "schema": self.schema.to_dict(),
            "schema_hash": self.schema.schema_hash(),
            "config": self.config,
        }
        with open(staging / _MANIFEST, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, default=str)
        if directory.exists():
            shutil.rmtree(directory)
        os.replace(staging, directory)
        logger.info(f"Saved {self.kind} ensemble of {self.M} members to {directory}")
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> DynamicsEnsemble:
        directory = Path(directory)
        manifest_path = directory / _MANIFEST
        if not manifest_path.exists():
            raise DataError(f"ensemble manifest not found: {manifest_path}")
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        kind = manifest["kind"]
        if kind == "cgan":
            loader = CganModel.load
        elif kind == "gpn":
            from .dynamics_gpn import GpnModel

            loader = GpnModel.load
        else:
            raise DataError(f"unknown ensemble kind '{kind}' in {manifest_path}")
        schema = DatasetSchema.from_dict(manifest["schema"])
        if schema.schema_hash() != manifest["schema_hash"]:
            raise DataError(f"schema hash mismatch in {manifest_path}")
        members = [loader(directory / f"member_{i}") for i in range(int(manifest["M"]))]
        return cls(members, schema, kind, manifest.get("config"))


def member_seeds(seed: int, M: int) -> List[int]:
    return [derive_seed(seed, 1000 + i) for i in range(M)]


def train_members(train_fn, M: int, seed: int, workers: int = 1) -> List:
    """
    Run ``train_fn(member_seed)`` for M members, optionally on a thread pool.

    Failures are re-raised annotated with the member index.
    """
    seeds = member_seeds(seed, M)

    def run(index: int):
        try:
            return train_fn(seeds[index])
        except TrainingError as e:
            raise e.for_member(index) from e

    if workers <= 1:
        return [run(i) for i in range(M)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(run, i) for i in range(M)]
        return [f.result() for f in futures]


def train_ensemble(
    train: ProcessDataset, M: int, config: CganConfig, seed: int, workers: int = 1
) -> DynamicsEnsemble:
    """Train M independently seeded CGANs; member results do not depend on ``workers``."""
    if M < 2:
        raise ConfigError(f"ensemble.members: pairwise discrepancy needs M >= 2, got {M}")
    members = train_members(lambda s: train_cgan(train, config, s), M, seed, workers)
    return DynamicsEnsemble(members, train.schema, "cgan", {"cgan": asdict(config), "M": M})


def empirical_moments(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased (N - 1) covariance of ``(N, d)`` samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError(f"samples must be (N, d), got shape {samples.shape}")
    if len(samples) < 2:
        raise ValueError(f"need N >= 2 samples, got {len(samples)}")
    return samples.mean(axis=0), np.cov(samples, rowvar=False, ddof=1).reshape(
        samples.shape[1], samples.shape[1]
    )


def batch_moments(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Moments over the sample axis of ``(..., N, d)``: means (..., d), covariances (..., d, d)."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[-2]
    if n < 2:
        raise ValueError(f"need N >= 2 samples, got {n}")
    mean = samples.mean(axis=-2)
    centered = samples - mean[..., None, :]
    cov = np.einsum("...ni,...nj->...ij", centered, centered) / (n - 1)
    return mean, cov


def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Multivariate energy distance 2E|A-B| - E|A-A'| - E|B-B'|."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    return float(
        2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean()
    )
