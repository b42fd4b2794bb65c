"""Feed-forward network substrate shared by every learned component.

Parameters live in one flat float64 vector per network so that optimizers,
soft target updates and checkpoints work on a single tensor. Gradients come from
torch autograd; ``grad_input`` keeps its graph so the gradient penalty can be
differentiated again with respect to the parameters.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError, TrainingError
from .logging_config import get_logger


logger = get_logger("function_approx")

DTYPE = torch.float64

ParamVector = torch.Tensor

ACTIVATIONS: Dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "softplus": F.softplus,
    "identity": lambda t: t,
}


def as_tensor(values) -> torch.Tensor:
    """float64 tensor view of an array-like."""
    if isinstance(values, torch.Tensor):
        return values.to(DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)


@dataclass(frozen=True)
class MlpSpec:
    """Shape and activations of a fully connected network."""

    input_dim: int
    hidden_dims: Tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(
                f"MlpSpec: input_dim and output_dim must be positive, got "
                f"{self.input_dim}, {self.output_dim}"
            )
        if not self.hidden_dims or any(d < 1 for d in self.hidden_dims):
            raise ValueError(f"MlpSpec: hidden_dims must be non-empty and positive, got {self.hidden_dims}")
        for name in (self.hidden_activation, self.output_activation):
            if name not in ACTIVATIONS:
                raise ValueError(
                    f"MlpSpec: unknown activation '{name}', expected one of {', '.join(ACTIVATIONS)}"
                )

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self.layer_dims)

    def to_dict(self) -> Dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> MlpSpec:
        return cls(
            input_dim=int(data["input_dim"]),
            hidden_dims=tuple(data["hidden_dims"]),
            output_dim=int(data["output_dim"]),
            hidden_activation=data.get("hidden_activation", "relu"),
            output_activation=data.get("output_activation", "identity"),
        )


class LayerSlice(NamedTuple):
    """Offsets of one layer's weight matrix and bias inside a ParamVector."""

    weight: slice
    bias: slice
    shape: Tuple[int, int]  # (out, in)


def layer_offsets(spec: MlpSpec) -> List[LayerSlice]:
    slices = []
    offset = 0
    for n_in, n_out in spec.layer_dims:
        w_end = offset + n_in * n_out
        b_end = w_end + n_out
        slices.append(LayerSlice(slice(offset, w_end), slice(w_end, b_end), (n_out, n_in)))
        offset = b_end
    return slices


def param_count(spec: MlpSpec) -> int:
    return spec.param_count


def init_params(spec: MlpSpec, seed: Union[int, torch.Generator]) -> ParamVector:
    """Uniform fan-in initialization: every layer draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    gen = seed if isinstance(seed, torch.Generator) else torch.Generator().manual_seed(int(seed))
    flat = torch.empty(spec.param_count, dtype=DTYPE)
    for layer in layer_offsets(spec):
        bound = 1.0 / math.sqrt(layer.shape[1])
        for part in (layer.weight, layer.bias):
            n = part.stop - part.start
            flat[part] = (torch.rand(n, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound
    return flat


def params_from_layers(
    spec: MlpSpec, layers: Sequence[Tuple[np.ndarray, np.ndarray]]
) -> ParamVector:
    """Pack explicit ``(weight (out, in), bias (out,))`` pairs into a flat vector."""
    slices = layer_offsets(spec)
    if len(layers) != len(slices):
        raise ValueError(f"expected {len(slices)} layers, got {len(layers)}")
    flat = torch.zeros(spec.param_count, dtype=DTYPE)
    for layer, (w, b) in zip(slices, layers):
        w, b = as_tensor(w), as_tensor(b)
        if tuple(w.shape) != layer.shape or tuple(b.shape) != (layer.shape[0],):
            raise ValueError(f"layer shape mismatch: expected {layer.shape}, got {tuple(w.shape)}")
        flat[layer.weight] = w.reshape(-1)
        flat[layer.bias] = b
    return flat


def forward(spec: MlpSpec, params: ParamVector, inputs) -> torch.Tensor:
    """Evaluate the network on a batch ``(n, input_dim)``."""
    h = as_tensor(inputs)
    if h.dim() == 1:
        h = h.unsqueeze(0)
    if h.dim() != 2 or h.shape[1] != spec.input_dim:
        raise ValueError(f"input width must be {spec.input_dim}, got shape {tuple(h.shape)}")
    if params.shape != (spec.param_count,):
        raise ValueError(f"expected {spec.param_count} parameters, got {tuple(params.shape)}")
    slices = layer_offsets(spec)
    hidden = ACTIVATIONS[spec.hidden_activation]
    for i, layer in enumerate(slices):
        weight = params[layer.weight].view(layer.shape)
        h = F.linear(h, weight, params[layer.bias])
        if i < len(slices) - 1:
            h = hidden(h)
    return ACTIVATIONS[spec.output_activation](h)


def grad_params(
    loss_fn: Callable[[ParamVector], torch.Tensor], params: ParamVector
) -> ParamVector:
    """Exact reverse-mode gradient of a scalar loss built from forward passes."""
    p = params.detach().clone().requires_grad_(True)
    loss = loss_fn(p)
    if not loss.requires_grad:
        return torch.zeros_like(p)
    (grad,) = torch.autograd.grad(loss, p, allow_unused=True)
    return torch.zeros_like(p) if grad is None else grad


def grad_input(
    spec: MlpSpec, params: ParamVector, inputs, create_graph: bool = True
) -> torch.Tensor:
    """
    Gradient of the scalar network output with respect to each input row.

    The returned tensor stays attached to ``params`` when ``create_graph`` is set,
    so a penalty on its norm can be backpropagated to the parameters.
    """
    if spec.output_dim != 1:
        raise ValueError(f"grad_input needs a scalar-output network, output_dim={spec.output_dim}")
    x = as_tensor(inputs)
    if not x.requires_grad:
        x = x.detach().clone().requires_grad_(True)
    out = forward(spec, params, x)
    (grad,) = torch.autograd.grad(out.sum(), x, create_graph=create_graph)
    return grad


class Mlp(nn.Module):
    """nn.Module holding one flat parameter vector for an MlpSpec."""

    def __init__(self, spec: MlpSpec, seed: int = 0, params: Optional[ParamVector] = None):
        super().__init__()
        self.spec = spec
        initial = init_params(spec, seed) if params is None else as_tensor(params).clone()
        self.params = nn.Parameter(initial)

    def forward(self, inputs) -> torch.Tensor:
        return forward(self.spec, self.params, inputs)

    def copy(self) -> Mlp:
        return Mlp(self.spec, params=self.params.detach().clone())


class AdamOptimizer:
    """
    Adaptive-moment optimizer over one flat parameter.

    Wraps ``torch.optim.Adam`` and refuses non-finite gradients, reporting the
    index of the step that produced them.
    """

    def __init__(
        self, params: nn.Parameter, lr: float = 1e-3, betas: Tuple[float, float] = (0.9, 0.999)
    ):
        self.params = params
        self.optimizer = torch.optim.Adam([params], lr=lr, betas=betas)
        self.steps = 0

    def step(self, grads: Optional[torch.Tensor] = None) -> None:
        if grads is not None:
            self.params.grad = grads.detach().clone()
        grad = self.params.grad
        if grad is None:
            raise ValueError("no gradient to apply")
        if not torch.isfinite(grad).all():
            raise TrainingError("non-finite gradient component", step=self.steps)
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        self.steps += 1

    def minimize(self, loss: torch.Tensor) -> float:
        """Backpropagate ``loss`` into the parameter and take one step."""
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value}", step=self.steps)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.step()
        return value

    def moments(self) -> Tuple[torch.Tensor, torch.Tensor]:
        state = self.optimizer.state.get(self.params, {})
        zeros = torch.zeros_like(self.params)
        return state.get("exp_avg", zeros), state.get("exp_avg_sq", zeros)


def sgd_step(
    params: nn.Parameter, grads: torch.Tensor, optimizer: AdamOptimizer
) -> Tuple[nn.Parameter, AdamOptimizer]:
    """Apply one adaptive-moment update; ``optimizer`` carries the moment state."""
    if grads.shape != params.shape:
        raise ValueError(f"gradient length {tuple(grads.shape)} != params {tuple(params.shape)}")
    if optimizer.params is not params:
        raise ValueError("optimizer is bound to a different parameter")
    optimizer.step(grads)
    return params, optimizer


@torch.no_grad()
def soft_update(target: nn.Parameter, source: nn.Parameter, tau: float) -> None:
    """Polyak averaging: target <- (1 - tau) * target + tau * source."""
    target.mul_(1.0 - tau).add_(source.detach(), alpha=tau)


def iterate_minibatches(
    n: int, batch_size: int, rng: np.random.Generator, drop_last: bool = False
) -> Iterator[np.ndarray]:
    """Index batches over a fresh permutation of ``range(n)``."""
    order = rng.permutation(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        batch = order[start : start + batch_size]
        if len(batch):
            yield batch


def torch_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def derive_seed(*keys: int) -> int:
    """Independent child seed for a (seed, member, ...) key; stable across runs."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(
    path: Union[str, Path], spec: MlpSpec, params: ParamVector, extra: Optional[Dict] = None
) -> None:
    """Write ``<path>.pt`` (parameters) and ``<path>.json`` (spec manifest)."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    torch.save(params.detach().clone(), base.with_suffix(".pt"))
    manifest = {"spec": spec.to_dict(), "param_count": spec.param_count}
    if extra:
        manifest.update(extra)
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)


def load_checkpoint(path: Union[str, Path]) -> Tuple[MlpSpec, ParamVector, Dict]:
    base = Path(path)
    manifest_path = base.with_suffix(".json")
    if not os.path.exists(manifest_path):
        raise DataError(f"checkpoint manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    spec = MlpSpec.from_dict(manifest["spec"])
    params = torch.load(base.with_suffix(".pt"))
    if params.shape != (spec.param_count,):
        raise DataError(
            f"checkpoint {base}: {tuple(params.shape)} parameters do not match spec ({spec.param_count})"
        )
    return spec, params.to(DTYPE), manifest
