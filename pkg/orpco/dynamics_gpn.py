"""Gaussian probabilistic networks: diagonal-Gaussian baseline dynamics.

A GPN maps (x, u) to a mean and a diagonal variance over results, trained on the
Gaussian negative log-likelihood. The same network machinery fits the logging
propensity q(u | x) in the OPE module.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from .config import GpnConfig, betas_tuple
from .data import Normalizer, ProcessDataset
from .dynamics_cgan import (
    DynamicsEnsemble,
    TrainingLog,
    _check_batch,
    _normalized_inputs,
    _require_normalized,
    train_members,
)
from .errors import ConfigError, ModelStateError, TrainingError
from .function_approx import (
    AdamOptimizer,
    Mlp,
    MlpSpec,
    as_tensor,
    derive_seed,
    iterate_minibatches,
    load_checkpoint,
    save_checkpoint,
    torch_generator,
)
from .logging_config import get_logger


logger = get_logger("dynamics_gpn")


class GaussianNetwork:
    """Network emitting ``[mean, raw variance]``; variance = softplus(raw) + floor."""

    def __init__(self, net: Mlp, variance_floor: float):
        if net.spec.output_dim % 2:
            raise ValueError("Gaussian network output must hold a mean and a variance per target")
        self.net = net
        self.variance_floor = variance_floor

    @classmethod
    def build(
        cls, input_dim: int, target_dim: int, hidden_layers: int, hidden_dim: int,
        variance_floor: float, seed: int,
    ) -> GaussianNetwork:
        spec = MlpSpec(input_dim, (hidden_dim,) * hidden_layers, 2 * target_dim)
        return cls(Mlp(spec, seed=seed), variance_floor)

    @property
    def target_dim(self) -> int:
        return self.net.spec.output_dim // 2

    def __call__(self, inputs) -> Tuple[torch.Tensor, torch.Tensor]:
        out = self.net(inputs)
        d = self.target_dim
        return out[:, :d], F.softplus(out[:, d:]) + self.variance_floor

    def nll(self, inputs, targets, full: bool = False) -> torch.Tensor:
        """Mean Gaussian negative log-likelihood per target component."""
        mean, var = self(inputs)
        return F.gaussian_nll_loss(mean, as_tensor(targets), var, full=full, eps=1e-12)


def fit_gaussian_network(
    inputs: np.ndarray,
    targets: np.ndarray,
    config: GpnConfig,
    seed: int,
    hidden_layers: Optional[int] = None,
    hidden_dim: Optional[int] = None,
    epochs: Optional[int] = None,
    validation: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tuple[GaussianNetwork, TrainingLog]:
    """
    Minimize the Gaussian NLL of normalized ``targets`` given normalized ``inputs``.

    Per-epoch training NLL is logged, and validation NLL when ``validation`` is given.
    """
    hidden_layers = hidden_layers or config.hidden_layers
    hidden_dim = hidden_dim or config.hidden_dim
    epochs = epochs or config.epochs
    network = GaussianNetwork.build(
        inputs.shape[1], targets.shape[1], hidden_layers, hidden_dim,
        config.variance_floor, derive_seed(seed, 0),
    )
    x_all, y_all = as_tensor(inputs), as_tensor(targets)
    rng = np.random.default_rng(derive_seed(seed, 1))
    optimizer = AdamOptimizer(network.net.params, lr=config.lr, betas=betas_tuple(config.betas))
    batch_size = min(config.batch_size, len(inputs))
    log = TrainingLog()

    for epoch in range(epochs):
        losses = []
        for batch in iterate_minibatches(len(inputs), batch_size, rng):
            idx = torch.as_tensor(batch)
            loss = network.nll(x_all[idx], y_all[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite NLL {float(loss)}", epoch=epoch)
            losses.append(optimizer.minimize(loss))
        values = {"train_nll": float(np.mean(losses))}
        if validation is not None:
            with torch.no_grad():
                values["validation_nll"] = float(network.nll(*validation, full=True))
        log.record(epoch, **values)
    logger.debug(
        f"Gaussian network {hidden_layers}x{hidden_dim}, {epochs} epochs: "
        f"train NLL {log.last('train_nll'):.4f}"
    )
    return network, log


class GpnModel:
    """Diagonal-Gaussian dynamics model p(y | x, u) = N(mu(x, u), diag(var(x, u)))."""

    def __init__(
        self,
        network: GaussianNetwork,
        normalizer: Normalizer,
        trained: bool = False,
        log: Optional[TrainingLog] = None,
    ):
        self.network = network
        self.normalizer = normalizer
        self.trained = trained
        self.log = log or TrainingLog()

    def _check_trained(self) -> None:
        if not self.trained:
            raise ModelStateError("GPN member is not trained")

    def predict(self, x, u) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and standard deviation of y in data units, one row per input row."""
        self._check_trained()
        Xn, Un = _normalized_inputs(self.normalizer, x, u)
        with torch.no_grad():
            mean, var = self.network(np.concatenate([Xn, Un], axis=1))
        scale = self.normalizer.scale["result"]
        return (
            self.normalizer.denormalize("result", mean.numpy()),
            np.sqrt(var.numpy()) * scale,
        )

    def sample_normalized(
        self, Xn: np.ndarray, Un: np.ndarray, n_samples: int, generator: torch.Generator
    ) -> np.ndarray:
        """Draws mu + sigma * eps, eps ~ N(0, I); shape (rows, n_samples, r)."""
        self._check_trained()
        if n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {n_samples}")
        with torch.no_grad():
            mean, var = self.network(np.concatenate([Xn, Un], axis=1))
            eps = torch.randn(
                mean.shape[0], n_samples, mean.shape[1], generator=generator, dtype=mean.dtype
            )
            y = mean[:, None, :] + var.sqrt()[:, None, :] * eps
        return y.numpy()

    def sample(self, x, u, n_samples: int, seed: int) -> np.ndarray:
        Xn, Un = _normalized_inputs(self.normalizer, x, u)
        yn = self.sample_normalized(Xn[:1], Un[:1], n_samples, torch_generator(seed))[0]
        return self.normalizer.denormalize("result", yn)

    def save(self, directory: Union[str, Path]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_checkpoint(directory / "network", self.network.net.spec, self.network.net.params)
        with open(directory / "model.json", "w", encoding="utf-8") as f:
            json.dump(
                {
                    "kind": "gpn",
                    "variance_floor": self.network.variance_floor,
                    "trained": self.trained,
                    "normalizer": self.normalizer.to_dict(),
                    "log": self.log.to_dict(),
                },
                f,
            )

    @classmethod
    def load(cls, directory: Union[str, Path]) -> GpnModel:
        directory = Path(directory)
        with open(directory / "model.json", "r", encoding="utf-8") as f:
            meta = json.load(f)
        spec, params, _ = load_checkpoint(directory / "network")
        return cls(
            GaussianNetwork(Mlp(spec, params=params), float(meta["variance_floor"])),
            Normalizer.from_dict(meta["normalizer"]),
            trained=bool(meta["trained"]),
            log=TrainingLog.from_dict(meta.get("log")),
        )


def _dataset_arrays(dataset: ProcessDataset, normalizer: Normalizer) -> Tuple[np.ndarray, np.ndarray]:
    Xn, Un = _normalized_inputs(normalizer, dataset.X, dataset.U)
    return np.concatenate([Xn, Un], axis=1), normalizer.normalize("result", dataset.Y)


@dataclass(frozen=True)
class GpnChoice:
    hidden_layers: int
    hidden_dim: int
    epochs: int


def train_gpn(
    train: ProcessDataset,
    config: GpnConfig,
    seed: int,
    validation: Optional[ProcessDataset] = None,
    choice: Optional[GpnChoice] = None,
) -> GpnModel:
    """Train one GPN on the normalized (x, u) -> y data."""
    normalizer = _require_normalized(train)
    if len(train) == 0:
        raise ConfigError("cannot train a GPN on an empty dataset")
    inputs, targets = _dataset_arrays(train, normalizer)
    val = _dataset_arrays(validation, normalizer) if validation is not None and len(validation) else None
    choice = choice or GpnChoice(config.hidden_layers, config.hidden_dim, config.epochs)
    network, log = fit_gaussian_network(
        inputs, targets, config, seed,
        hidden_layers=choice.hidden_layers,
        hidden_dim=choice.hidden_dim,
        epochs=choice.epochs,
        validation=val,
    )
    return GpnModel(network, normalizer, trained=True, log=log)


def grid_search_gpn(
    train: ProcessDataset, validation: ProcessDataset, config: GpnConfig, seed: int
) -> Tuple[GpnChoice, List[Dict]]:
    """
    Exhaustive search over layers x widths x epochs by validation NLL.

    Returns the best choice and one result row per grid point. Ties keep the
    earliest grid point.
    """
    if len(validation) == 0:
        raise ConfigError("GPN grid search needs a non-empty validation split")
    normalizer = _require_normalized(train)
    val = _dataset_arrays(validation, normalizer)
    inputs, targets = _dataset_arrays(train, normalizer)
    results = []
    best: Optional[Tuple[float, GpnChoice]] = None
    grid = itertools.product(config.hidden_layers_grid, config.hidden_dims_grid, config.epochs_grid)
    for layers, width, epochs in grid:
        choice = GpnChoice(layers, width, epochs)
        network, _ = fit_gaussian_network(
            inputs, targets, config, seed,
            hidden_layers=layers, hidden_dim=width, epochs=epochs,
        )
        with torch.no_grad():
            nll = float(network.nll(*val, full=True))
        results.append({**asdict(choice), "validation_nll": nll})
        if np.isfinite(nll) and (best is None or nll < best[0]):
            best = (nll, choice)
    if best is None:
        raise TrainingError("every GPN grid point produced a non-finite validation NLL")
    logger.info(
        f"GPN grid search over {len(results)} points: best {best[1]} "
        f"(validation NLL {best[0]:.4f})"
    )
    return best[1], results


def train_gpn_ensemble(
    train: ProcessDataset,
    M: int,
    config: GpnConfig,
    seed: int,
    validation: Optional[ProcessDataset] = None,
    workers: int = 1,
) -> Tuple[DynamicsEnsemble, List[Dict]]:
    """
    Train M GPNs behind the common ensemble interface.

    With ``config.grid_search`` and a validation split, the architecture is chosen
    by :func:`grid_search_gpn` first; the search log is returned alongside.
    """
    if M < 2:
        raise ConfigError(f"ensemble.members: pairwise discrepancy needs M >= 2, got {M}")
    _require_normalized(train)
    _check_batch(train, 1)
    choice = GpnChoice(config.hidden_layers, config.hidden_dim, config.epochs)
    search_log: List[Dict] = []
    if config.grid_search and validation is not None and len(validation):
        choice, search_log = grid_search_gpn(train, validation, config, seed)
    members = train_members(
        lambda s: train_gpn(train, config, s, validation=validation, choice=choice),
        M, seed, workers,
    )
    ensemble = DynamicsEnsemble(
        members, train.schema, "gpn", {"gpn": asdict(config), "M": M, "choice": asdict(choice)}
    )
    return ensemble, search_log
