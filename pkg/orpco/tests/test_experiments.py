"""Tests for run bookkeeping and the data side of the experiment pipelines."""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from orpco import ConfigError, DataError, ExperimentConfig, GeneratorSpec, ib_schema, rollout_dataset
from orpco.config import ContinuousConfig, DataConfig, RewardConfig, load_config
from orpco.data import load_dataset, save_dataset
from orpco.experiments import (
    GPN_METHOD,
    RunContext,
    RunManifest,
    _auroc,
    _summary_table,
    build_reward,
    cmd_eval_reward,
    cmd_experiment_continuous,
    cmd_experiment_discrete,
    cmd_ope,
    cmd_optimize,
    cmd_report_ood,
    cmd_simulate,
    cmd_train_dynamics,
    cmd_train_policy,
    load_data,
    load_trained,
    prepare_splits,
    reward_spec,
)
from orpco.reward_eval import BRANCHES
from orpco.synthetic import generate_synthetic_discrete, toy_dataset


@pytest.fixture
def config(tmp_path, monkeypatch):
    monkeypatch.delenv("ORPCO_RUNS_DIR", raising=False)
    return ExperimentConfig(runs_dir=str(tmp_path / "runs"))


class TestRunManifest:
    def test_missing_artifacts(self, tmp_path):
        present = tmp_path / "a.json"
        present.write_text("{}", encoding="utf-8")
        manifest = RunManifest("x", "abc", [0], artifacts={"a": str(present), "b": str(tmp_path / "b.json")})
        assert manifest.missing_artifacts() == ["b"]

    def test_to_dict(self):
        data = RunManifest("ope", "abc", [0, 1]).to_dict()
        assert data["command"] == "ope"
        assert data["seeds"] == [0, 1]
        assert data["artifacts"] == {}


class TestRunContext:
    def test_root_under_config_hash(self, config, tmp_path):
        run = RunContext(config, "optimize")
        assert run.root == tmp_path / "runs" / config.config_hash()

    def test_unknown_area(self, config):
        with pytest.raises(ValueError, match="unknown run area"):
            RunContext(config, "x").path("scratch", "a.json")

    def test_write_and_finish(self, config):
        run = RunContext(config, "eval-reward")
        run.write_json("values", {"a": np.float64(0.5), "b": np.arange(3)})
        run.write_table("table", pd.DataFrame({"v": [1.0, 2.0]}))
        with run.stage("work"):
            pass
        path = run.finish()
        manifest = json.loads(path.read_text(encoding="utf-8"))
        assert set(manifest["artifacts"]) == {"values", "table"}
        assert "work" in manifest["timings"]
        payload = json.loads((run.root / "reports" / "values.json").read_text(encoding="utf-8"))
        assert payload == {"a": 0.5, "b": [0, 1, 2]}

    def test_finish_checks_artifacts(self, config, tmp_path):
        run = RunContext(config, "train-policy")
        run.artifact("agent", tmp_path / "never_written")
        with pytest.raises(DataError, match="agent"):
            run.finish()


class TestPrepareSplits:
    def test_validation_carved_from_train(self, config):
        dataset = toy_dataset("double", 200, seed=0)
        train, validation, test = prepare_splits(dataset, config)
        assert len(train) + len(validation) + len(test) == 200
        assert len(test) == 40
        assert validation.normalizer is train.normalizer
        assert test.normalizer is train.normalizer

    def test_three_ratios(self, config):
        config.data = DataConfig(split_ratios=[0.6, 0.2, 0.2])
        train, validation, test = prepare_splits(toy_dataset("double", 100, seed=0), config)
        assert (len(train), len(validation), len(test)) == (60, 20, 20)

    def test_deterministic(self, config):
        dataset = toy_dataset("identity", 100, seed=1)
        a = prepare_splits(dataset, config)[2]
        b = prepare_splits(dataset, config)[2]
        np.testing.assert_array_equal(a.X, b.X)


class TestRewardSpec:
    def test_auto_uses_ground_truth_box(self, config):
        dataset = generate_synthetic_discrete(GeneratorSpec(), 20, seed=0)
        spec = reward_spec(config, dataset)
        assert spec["kind"] == "box"
        assert spec["lower"] == dataset.ground_truth.box_lower.tolist()

    def test_auto_detects_surrogate(self, config):
        dataset, _ = rollout_dataset("safe", 1, 3, seed=0)
        assert dataset.schema == ib_schema()
        assert reward_spec(config, dataset)["kind"] == "ib"

    def test_auto_fails_without_hint(self, config):
        with pytest.raises(ConfigError, match="cannot infer a reward"):
            reward_spec(config, toy_dataset("double", 10, seed=0))

    def test_box_dimension_checked(self, config):
        config.reward = RewardConfig(kind="box", lower=[0.0, 0.0], upper=[1.0, 1.0])
        with pytest.raises(ConfigError, match="box needs 1 bounds"):
            reward_spec(config, toy_dataset("double", 10, seed=0))

    def test_explicit_box_builds_reward(self, config):
        config.reward = RewardConfig(kind="box", lower=[0.4], upper=[0.6])
        reward = build_reward(reward_spec(config, toy_dataset("double", 10, seed=0)))
        np.testing.assert_array_equal(reward(np.array([[0.5], [0.9]])), [1.0, 0.0])


class TestLoadTrained:
    def test_missing_calibration(self, tmp_path):
        with pytest.raises(DataError, match="calibration not found"):
            load_trained(tmp_path)


class TestSimulate:
    def test_writes_dataset_and_trajectories(self, config, tmp_path):
        config.continuous = ContinuousConfig(n_traj=2, length=5)
        out = tmp_path / "sim"
        dataset = cmd_simulate(config, "safe", out, seed=0)
        assert len(dataset) == 10
        loaded = load_dataset(out / "safe.csv")
        np.testing.assert_allclose(loaded.Y, dataset.Y)
        trajectories = json.loads((out / "safe_trajectories.json").read_text(encoding="utf-8"))
        assert len(trajectories) == 2
        assert (RunContext(config, "simulate").root / "reports" / "manifest-simulate.json").exists()


class TestSummaries:
    def test_summary_table(self):
        rows = [
            {"method": "rp", "seed": 0, "DR": 1.0},
            {"method": "rp", "seed": 1, "DR": 3.0},
            {"method": "f1", "seed": 0, "DR": 0.5},
        ]
        table = _summary_table(rows, ["method"], ["DR"])
        assert list(table.index) == ["rp", "f1"]
        assert table.loc["rp", "DR"] == 2.0
        assert table.loc["rp", "DR_std"] == 1.0
        assert table.loc["f1", "DR_std"] == 0.0

    def test_auroc(self):
        assert _auroc(np.array([0.1, 0.2]), np.array([0.8, 0.9])) == 1.0
        assert _auroc(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.5


SMOKE_CONFIG = Path(__file__).resolve().parents[2] / "configs" / "smoke.yaml"


def read_manifest(config, command):
    path = RunContext(config, command).root / "reports" / f"manifest-{command}.json"
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture(scope="class")
def runs(tmp_path_factory):
    with pytest.MonkeyPatch.context() as mp:
        mp.delenv("ORPCO_RUNS_DIR", raising=False)
        yield tmp_path_factory.mktemp("runs")


@pytest.mark.slow
class TestSmokePipelines:
    @pytest.fixture(scope="class")
    def smoke(self, runs):
        return load_config(str(SMOKE_CONFIG), [f"runs_dir={runs / 'discrete'}"])

    @pytest.fixture(scope="class")
    def csv_splits(self, smoke, runs):
        train, _, test = prepare_splits(load_data(smoke), smoke)
        save_dataset(train, runs / "train.csv")
        save_dataset(test, runs / "test.csv")
        return runs / "train.csv", runs / "test.csv"

    @pytest.fixture(scope="class")
    def ensemble_dir(self, smoke):
        return cmd_train_dynamics(smoke)

    @pytest.fixture(scope="class")
    def surrogate(self, runs):
        out = runs / "simulated"
        config = load_config(str(SMOKE_CONFIG), [f"runs_dir={runs / 'surrogate'}"])
        cmd_simulate(config, "safe", out, seed=0)
        config = load_config(
            str(SMOKE_CONFIG), [f"runs_dir={runs / 'surrogate'}", f"data.path={out / 'safe.csv'}"]
        )
        return config, cmd_train_dynamics(config), out / "safe.csv"

    def test_train_dynamics(self, smoke, ensemble_dir):
        metrics = read_manifest(smoke, "train-dynamics")["metrics"]
        assert (ensemble_dir / "calibration.json").exists()
        assert metrics["epsilon"] > 0.0
        assert (metrics["M"], metrics["N"]) == (2, 50)

    def test_eval_reward(self, smoke, ensemble_dir, csv_splits):
        frame = cmd_eval_reward(smoke, ensemble_dir, csv_splits[1])
        assert len(frame) == len(load_dataset(csv_splits[1]))
        assert set(frame["branch"]) <= set(BRANCHES)
        metrics = read_manifest(smoke, "eval-reward")["metrics"]
        assert metrics["mean_value"] == pytest.approx(frame["value"].mean())

    def test_optimize(self, smoke, ensemble_dir):
        results = cmd_optimize(smoke, ensemble_dir, x=[0.5, 0.5])
        assert len(results) == 1
        assert all(0.0 <= u <= 1.0 for u in results[0]["u"])
        assert len(results[0]["trace"]["values"]) == smoke.bo.n_init + smoke.bo.n_iter

    def test_ope(self, smoke, ensemble_dir, csv_splits):
        train_csv, test_csv = csv_splits
        report = cmd_ope(smoke, ensemble_dir, test_csv, train_csv)
        metrics = read_manifest(smoke, "ope")["metrics"]
        for key in ("dm", "ips", "wis", "dr"):
            assert np.isfinite(metrics[key])
            assert metrics[key] == report[key]

    def test_train_policy(self, surrogate):
        config, ensemble_dir, data_csv = surrogate
        frame = cmd_train_policy(config, ensemble_dir, data_csv)
        assert list(frame.index) == config.seeds
        assert np.isfinite(frame["eval_return_mean"]).all()
        assert read_manifest(config, "train-policy")["metrics"]["policies"][0]["seed"] == 0

    def test_report_ood(self, smoke):
        result = cmd_report_ood(smoke)
        metrics = read_manifest(smoke, "report-ood")["metrics"]
        assert metrics["spearman_varkappa"] == pytest.approx(result["spearman_varkappa"])
        assert set(metrics["auroc"]) == {"full", "controls"}
        assert (RunContext(smoke, "report-ood").root / "reports" / "ood_curves.png").exists()

    def test_experiment_discrete(self, smoke):
        table = cmd_experiment_discrete(smoke)
        metrics = read_manifest(smoke, "experiment-discrete")["metrics"]
        assert {"rp", "f1", "f3", "f4", GPN_METHOD, "logging"} <= set(table.index)
        assert "rp_vs_f1" in metrics
        assert np.isfinite(table.loc[["rp", "f1", "logging"], "TRUE"]).all()
        # trap lies outside the logs
        assert table.loc["rp"].to_dict() != table.loc["f1"].to_dict()

    def test_experiment_continuous(self, smoke):
        table = cmd_experiment_continuous(smoke)
        assert {("safe", "behavior"), ("safe", "rp"), ("safe", "f1")} <= set(table.index)
        assert np.isfinite(table["return"]).all()

    def test_report_ood_is_bit_reproducible(self, runs):
        metrics = []
        for name in ("first", "second"):
            config = load_config(str(SMOKE_CONFIG), [f"runs_dir={runs / name}"])
            cmd_report_ood(config, seed=0)
            metrics.append(read_manifest(config, "report-ood")["metrics"])
        assert metrics[0] == metrics[1]


@pytest.mark.slow
class TestAcceptanceProperties:
    """Headline properties at a scale where the ensembles are trained to convergence."""

    def test_uncertainty_grows_and_separates_ood(self, runs):
        config = load_config(
            str(SMOKE_CONFIG),
            [
                f"runs_dir={runs / 'ood'}",
                "smoke=false",
                "ensemble.members=5",
                "ensemble.samples=1000",
                "ensemble.cgan.epochs=300",
                "ensemble.cgan.batch_size=64",
                "ensemble.cgan.lr=0.001",
                "report.n_inputs=100",
            ],
        )
        cmd_report_ood(config)
        metrics = read_manifest(config, "report-ood")["metrics"]
        assert metrics["spearman_varkappa"] >= 0.95
        assert metrics["auroc"]["full"]["rp"] >= 0.95
        assert metrics["auroc"]["controls"]["rp"] >= 0.95

    def test_penalized_agent_beats_behavior_and_f1(self, runs):
        config = load_config(
            str(SMOKE_CONFIG),
            [
                f"runs_dir={runs / 'continuous'}",
                "smoke=false",
                "seeds=[0, 1, 2]",
                "evaluators=[rp, f1]",
                "continuous.n_traj=100",
                "continuous.length=50",
                "continuous.eval_episodes=10",
                "ensemble.members=3",
                "ensemble.samples=100",
                "ensemble.cgan.epochs=200",
                "ensemble.cgan.batch_size=64",
                "ensemble.cgan.lr=0.001",
                "ensemble.gpn.grid_search=false",
                "ddpg.episodes=150",
                "ddpg.horizon=50",
                "ddpg.report_last=20",
            ],
        )
        table = cmd_experiment_continuous(config)
        returns = table["return"]
        assert returns[("safe", "rp")] >= returns[("safe", "behavior")]
        assert returns[("safe", "rp")] >= returns[("safe", "f1")]
