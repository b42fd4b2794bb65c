"""Shared fixtures: analytic Gaussian ensemble members with known moments."""

import numpy as np
import pytest
import torch

from orpco import DynamicsEnsemble
from orpco.data import DatasetSchema, Normalizer


class GaussianMember:
    """y_n = offset + slope * mean(u_n) + (std + std_slope * mean(u_n)) * eps, in normalized units."""

    trained = True

    def __init__(
        self, normalizer: Normalizer, offset: float, std: float, slope: float = 0.0, std_slope: float = 0.0
    ):
        self.normalizer = normalizer
        self.offset = offset
        self.std = std
        self.slope = slope
        self.std_slope = std_slope

    def sample_normalized(self, Xn, Un, n_samples, generator):
        r = len(self.normalizer.shift["result"])
        level = np.asarray(Un).mean(axis=1)
        centre = self.offset + self.slope * level
        spread = self.std + self.std_slope * level
        eps = torch.randn(len(Un), n_samples, r, generator=generator, dtype=torch.float64).numpy()
        return centre[:, None, None] + spread[:, None, None] * eps

    def save(self, directory):
        raise NotImplementedError


def unit_schema(p: int = 1, q: int = 1, r: int = 1) -> DatasetSchema:
    return DatasetSchema.build([(0.0, 1.0)] * p, [(0.0, 1.0)] * q, [(0.0, 1.0)] * r)


@pytest.fixture
def make_ensemble():
    """Factory: one member per offset, all sharing ``std``, ``slope`` and ``std_slope``, on unit boxes."""

    def build(offsets, std=0.05, slope=0.0, p=1, q=1, r=1, std_slope=0.0):
        schema = unit_schema(p, q, r)
        normalizer = Normalizer.from_bounds(schema)
        members = [GaussianMember(normalizer, o, std, slope, std_slope) for o in offsets]
        return DynamicsEnsemble(members, schema, "gaussian")

    return build
