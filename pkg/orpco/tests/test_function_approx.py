"""Tests for the MLP substrate, gradients, Adam and checkpoints."""

import numpy as np
import pytest
import torch

from orpco import AdamOptimizer, DataError, Mlp, MlpSpec, TrainingError, derive_seed, soft_update
from orpco.function_approx import (
    as_tensor,
    forward,
    grad_input,
    grad_params,
    init_params,
    iterate_minibatches,
    load_checkpoint,
    params_from_layers,
    save_checkpoint,
    sgd_step,
)


@pytest.fixture
def spec():
    return MlpSpec(3, (5, 4), 1, hidden_activation="tanh")


class TestMlpSpec:
    def test_param_count(self, spec):
        assert spec.param_count == (3 * 5 + 5) + (5 * 4 + 4) + (4 * 1 + 1)

    def test_rejects_empty_hidden(self):
        with pytest.raises(ValueError, match="hidden_dims"):
            MlpSpec(2, (), 1)

    def test_rejects_unknown_activation(self):
        with pytest.raises(ValueError, match="unknown activation"):
            MlpSpec(2, (4,), 1, output_activation="gelu")

    def test_dict_round_trip(self, spec):
        assert MlpSpec.from_dict(spec.to_dict()) == spec


class TestForward:
    def test_matches_explicit_layers(self):
        spec = MlpSpec(2, (2,), 1)
        params = params_from_layers(
            spec,
            [
                (np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([0.0, 0.5])),
                (np.array([[2.0, 3.0]]), np.array([1.0])),
            ],
        )
        out = forward(spec, params, np.array([[1.0, 2.0]]))
        # hidden = relu([1, -1.5]) = [1, 0]; out = 2 * 1 + 1
        assert float(out) == pytest.approx(3.0)

    def test_output_activation(self):
        spec = MlpSpec(1, (3,), 2, output_activation="tanh")
        out = forward(spec, init_params(spec, 0) * 100.0, np.ones((4, 1)))
        assert out.shape == (4, 2)
        assert torch.all(out.abs() <= 1.0)

    def test_single_row_promoted(self, spec):
        assert forward(spec, init_params(spec, 0), np.zeros(3)).shape == (1, 1)

    def test_width_mismatch(self, spec):
        with pytest.raises(ValueError, match="input width"):
            forward(spec, init_params(spec, 0), np.zeros((2, 4)))

    def test_param_length_mismatch(self, spec):
        with pytest.raises(ValueError, match="parameters"):
            forward(spec, torch.zeros(3, dtype=torch.float64), np.zeros((1, 3)))

    def test_init_is_deterministic(self, spec):
        assert torch.equal(init_params(spec, 4), init_params(spec, 4))
        assert not torch.equal(init_params(spec, 4), init_params(spec, 5))

    def test_init_bounds(self, spec):
        params = init_params(spec, 0)
        assert params.abs().max() <= 1.0 / np.sqrt(3) + 1e-12


class TestGradients:
    def test_grad_params_gradcheck(self, spec):
        x = as_tensor(np.random.default_rng(0).normal(size=(6, 3)))

        def loss(p):
            return (forward(spec, p, x) ** 2).mean()

        params = init_params(spec, 1).requires_grad_(True)
        assert torch.autograd.gradcheck(loss, (params,))
        expected = torch.autograd.grad(loss(params), params)[0]
        torch.testing.assert_close(grad_params(loss, params.detach()), expected)

    def test_grad_params_constant_loss_is_zero(self, spec):
        params = init_params(spec, 0)
        grad = grad_params(lambda p: torch.tensor(1.0, dtype=torch.float64), params)
        assert torch.count_nonzero(grad) == 0

    def test_grad_input_linear_network(self):
        spec = MlpSpec(2, (2,), 1, hidden_activation="identity")
        params = params_from_layers(
            spec, [(np.eye(2), np.zeros(2)), (np.array([[3.0, -2.0]]), np.zeros(1))]
        )
        grad = grad_input(spec, params, np.ones((4, 2)), create_graph=False)
        torch.testing.assert_close(grad, as_tensor(np.tile([3.0, -2.0], (4, 1))))

    def test_grad_input_double_backprop(self, spec):
        x = as_tensor(np.random.default_rng(1).normal(size=(5, 3)))

        def penalty(p):
            g = grad_input(spec, p, x, create_graph=True)
            return ((g.norm(dim=1) - 1.0) ** 2).mean()

        params = init_params(spec, 2).requires_grad_(True)
        assert torch.autograd.gradcheck(penalty, (params,))

    def test_grad_input_needs_scalar_output(self):
        spec = MlpSpec(2, (3,), 2)
        with pytest.raises(ValueError, match="scalar-output"):
            grad_input(spec, init_params(spec, 0), np.zeros((1, 2)))


class TestAdamOptimizer:
    def test_minimizes_quadratic_bowl(self):
        target = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64)
        param = torch.nn.Parameter(torch.zeros(3, dtype=torch.float64))
        opt = AdamOptimizer(param, lr=1e-2)
        for _ in range(2000):
            opt.minimize(((param - target) ** 2).sum())
        torch.testing.assert_close(param.detach(), target, atol=1e-3, rtol=0)

    def test_first_step_moves_by_lr(self):
        param = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        opt = AdamOptimizer(param, lr=0.1)
        opt.step(torch.tensor([3.0, -0.5], dtype=torch.float64))
        torch.testing.assert_close(param.detach(), torch.tensor([-0.1, 0.1], dtype=torch.float64))

    def test_non_finite_gradient(self):
        param = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        opt = AdamOptimizer(param)
        with pytest.raises(TrainingError, match="non-finite gradient"):
            opt.step(torch.tensor([float("nan"), 0.0], dtype=torch.float64))

    def test_non_finite_loss(self):
        param = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))
        opt = AdamOptimizer(param)
        with pytest.raises(TrainingError, match="non-finite loss"):
            opt.minimize((param * float("inf")).sum())

    def test_moments_tracked(self):
        param = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))
        opt = AdamOptimizer(param, betas=(0.5, 0.9))
        opt.step(torch.tensor([2.0], dtype=torch.float64))
        m, v = opt.moments()
        assert float(m) == pytest.approx(1.0)
        assert float(v) == pytest.approx(0.4)

    def test_sgd_step_checks_binding(self):
        a = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        b = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        with pytest.raises(ValueError, match="different parameter"):
            sgd_step(b, torch.ones(2, dtype=torch.float64), AdamOptimizer(a))

    def test_sgd_step_updates(self):
        a = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        params, opt = sgd_step(a, torch.ones(2, dtype=torch.float64), AdamOptimizer(a, lr=0.5))
        assert opt.steps == 1
        torch.testing.assert_close(params.detach(), torch.full((2,), -0.5, dtype=torch.float64))


class TestSoftUpdate:
    def test_polyak_average(self):
        target = torch.nn.Parameter(torch.zeros(3, dtype=torch.float64))
        source = torch.nn.Parameter(torch.ones(3, dtype=torch.float64))
        soft_update(target, source, 0.25)
        torch.testing.assert_close(target.detach(), torch.full((3,), 0.25, dtype=torch.float64))

    def test_tau_one_copies(self):
        target = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        source = torch.nn.Parameter(torch.tensor([3.0, 4.0], dtype=torch.float64))
        soft_update(target, source, 1.0)
        torch.testing.assert_close(target.detach(), source.detach())


class TestMlpModule:
    def test_copy_is_independent(self, spec):
        net = Mlp(spec, seed=3)
        clone = net.copy()
        with torch.no_grad():
            clone.params.add_(1.0)
        assert not torch.equal(net.params, clone.params)

    def test_forward_matches_functional(self, spec):
        net = Mlp(spec, seed=3)
        x = np.ones((2, 3))
        torch.testing.assert_close(net(x), forward(spec, net.params, x))


class TestCheckpoints:
    def test_round_trip(self, spec, tmp_path):
        params = init_params(spec, 7)
        save_checkpoint(tmp_path / "net", spec, params, extra={"role": "critic"})
        loaded_spec, loaded, manifest = load_checkpoint(tmp_path / "net")
        assert loaded_spec == spec
        assert torch.equal(loaded, params)
        assert manifest["role"] == "critic"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest not found"):
            load_checkpoint(tmp_path / "absent")


class TestSeedsAndBatches:
    def test_derive_seed_stable_and_distinct(self):
        assert derive_seed(1, 2) == derive_seed(1, 2)
        assert derive_seed(1, 2) != derive_seed(2, 1)

    def test_minibatches_cover_range(self):
        batches = list(iterate_minibatches(10, 4, np.random.default_rng(0)))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))

    def test_drop_last(self):
        batches = list(iterate_minibatches(10, 4, np.random.default_rng(0), drop_last=True))
        assert [len(b) for b in batches] == [4, 4]
