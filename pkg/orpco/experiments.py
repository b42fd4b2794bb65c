"""Experiment pipelines, run layout and artifact bookkeeping.

Every command writes below ``<runs_dir>/<config hash>/`` into ``ensemble/``,
``policy/`` and ``reports/`` and finishes with a RunManifest listing every
artifact, the per-stage wall-clock and the headline metrics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.metrics import roc_auc_score

from .config import ExperimentConfig, PenaltyConfig
from .continuous_policy import evaluate_behavior_policy, evaluate_policy, train_offline_ddpg
from .data import ProcessDataset, carve_validation, load_dataset, randomize_inputs, save_dataset, split
from .discrete_policy import DiscretePolicy, policy_true_values
from .dynamics_cgan import DynamicsEnsemble, train_ensemble
from .dynamics_gpn import train_gpn_ensemble
from .errors import ConfigError, DataError
from .function_approx import derive_seed
from .ib_surrogate import IbEnvironment, coverage_outside, ib_schema, rollout_dataset
from .logging_config import get_logger, stage_timer
from .ope import RewardPredictor, evaluate_ope, fit_logging_propensity
from .plotting import histogram_plot, line_plot, save_panels
from .reward_eval import (
    PenaltyCalibration,
    RewardFunction,
    calibrate,
    evaluate_inputs,
    ib_reward,
    make_evaluator,
    report_from_measure,
    tolerance_box_reward,
)
from .synthetic import GeneratorSpec, generate_synthetic_discrete, load_generator_spec


logger = get_logger("experiments")

AREAS = ("ensemble", "policy", "reports")
GPN_METHOD = "gpn-rp"
ESTIMATORS = ("DM", "IPS", "WIS", "DR")


# -- run bookkeeping ---------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seeds: List[int]
    artifacts: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)

    def missing_artifacts(self) -> List[str]:
        return [name for name, path in self.artifacts.items() if not Path(path).exists()]

    def to_dict(self) -> Dict:
        return asdict(self)


class RunContext:
    """Output folders and manifest of one command invocation."""

    def __init__(self, config: ExperimentConfig, command: str):
        self.config = config
        self.root = Path(config.resolve_runs_dir()) / config.config_hash()
        self.manifest = RunManifest(command, config.config_hash(), list(config.seeds))

    def path(self, area: str, *parts: str) -> Path:
        if area not in AREAS:
            raise ValueError(f"unknown run area '{area}'")
        path = self.root.joinpath(area, *parts)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def stage(self, name: str):
        return stage_timer(name, self.manifest.timings, logger)

    def artifact(self, name: str, path: Union[str, Path]) -> Path:
        self.manifest.artifacts[name] = str(path)
        return Path(path)

    def write_json(self, name: str, payload: Any, area: str = "reports") -> Path:
        path = self.path(area, f"{name}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, default=_json_default)
        return self.artifact(name, path)

    def write_table(self, name: str, frame: pd.DataFrame, area: str = "reports") -> Path:
        path = self.path(area, f"{name}.csv")
        frame.to_csv(path, float_format="%.17g", encoding="utf-8")
        return self.artifact(name, path)

    def finish(self) -> Path:
        """Write the manifest; every listed artifact must exist."""
        missing = self.manifest.missing_artifacts()
        if missing:
            raise DataError(f"artifacts missing at the end of '{self.manifest.command}': {', '.join(missing)}")
        path = self.path("reports", f"manifest-{self.manifest.command}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.manifest.to_dict(), f, indent=2, default=_json_default)
        logger.info(f"Run '{self.manifest.command}' complete: {path}")
        return path


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


# -- data and models ---------------------------------------------------------------


def load_data(config: ExperimentConfig) -> ProcessDataset:
    """The historical dataset: a CSV file or the synthetic generator."""
    data = config.data
    if data.path is not None:
        return load_dataset(data.path, data.schema_path)
    if data.synthetic is not None or data.synthetic_path is not None:
        spec = (
            load_generator_spec(data.synthetic_path)
            if data.synthetic_path is not None
            else GeneratorSpec.from_dict(data.synthetic)
        )
        dataset = generate_synthetic_discrete(spec, data.n_records, data.seed)
        logger.info(f"Generated {len(dataset)} synthetic records (seed {data.seed})")
        return dataset
    raise ConfigError("data: set one of 'path', 'synthetic' or 'synthetic_path'")


def prepare_splits(
    dataset: ProcessDataset, config: ExperimentConfig
) -> Tuple[ProcessDataset, ProcessDataset, ProcessDataset]:
    """
    (train, validation, test) with normalization fitted on train only.

    With two split ratios the validation part is carved off the training split.
    """
    data = config.data
    parts = split(dataset, data.split_ratios, data.seed)
    if len(parts) >= 3:
        train, validation, test = parts[0], parts[1], parts[2]
    else:
        train, test = parts
        train, validation = carve_validation(train, data.validation_fraction, data.seed)
    train = train.fit_normalization()
    if train.normalizer is None:
        raise ConfigError("training split is empty")
    return train, validation.with_normalizer(train.normalizer), test.with_normalizer(train.normalizer)


def reward_spec(config: ExperimentConfig, dataset: ProcessDataset) -> Dict[str, Any]:
    """Resolve the reward section against the data source into an explicit spec."""
    cfg = config.reward
    kind = cfg.kind
    if kind == "auto":
        if dataset.ground_truth is not None:
            truth = dataset.ground_truth
            return {"kind": "box", "lower": truth.box_lower.tolist(), "upper": truth.box_upper.tolist()}
        if dataset.schema.next_state_map is not None:
            kind = "ib"
        else:
            raise ConfigError("reward.kind: cannot infer a reward for this dataset; set 'box' or 'ib'")
    if kind == "ib":
        return {"kind": "ib", "consumption_index": cfg.consumption_index, "fatigue_index": cfg.fatigue_index}
    r = dataset.schema.dim("result")
    if len(cfg.lower) != r:
        raise ConfigError(f"reward: box needs {r} bounds, got {len(cfg.lower)}")
    return {"kind": "box", "lower": list(cfg.lower), "upper": list(cfg.upper)}


def build_reward(spec: Dict[str, Any]) -> RewardFunction:
    if spec["kind"] == "ib":
        return ib_reward(spec["consumption_index"], spec["fatigue_index"])
    return tolerance_box_reward(spec["lower"], spec["upper"])


def train_dynamics(
    train: ProcessDataset,
    validation: ProcessDataset,
    config: ExperimentConfig,
    seed: int,
    kind: Optional[str] = None,
) -> Tuple[DynamicsEnsemble, List[Dict]]:
    """Train the configured ensemble kind; GPNs also return their grid-search log."""
    ens = config.ensemble
    kind = kind or ens.kind
    if kind == "cgan":
        return train_ensemble(train, ens.members, ens.cgan, derive_seed(seed, 10), ens.workers), []
    if kind == "gpn":
        return train_gpn_ensemble(
            train, ens.members, ens.gpn, derive_seed(seed, 11), validation, ens.workers
        )
    raise ConfigError(f"ensemble.kind: unknown kind '{kind}'")


def save_trained(
    ensemble: DynamicsEnsemble,
    calib: PenaltyCalibration,
    reward: Dict[str, Any],
    directory: Path,
) -> Path:
    ensemble.save(directory)
    with open(directory / "calibration.json", "w", encoding="utf-8") as f:
        json.dump({"calibration": calib.to_dict(), "reward": reward}, f, indent=2)
    return directory


def load_trained(
    directory: Union[str, Path],
) -> Tuple[DynamicsEnsemble, PenaltyCalibration, Dict[str, Any]]:
    """Ensemble, its calibration and its reward spec from a train-dynamics output."""
    directory = Path(directory)
    path = directory / "calibration.json"
    if not path.exists():
        raise DataError(f"calibration not found: {path}")
    ensemble = DynamicsEnsemble.load(directory)
    with open(path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    return ensemble, PenaltyCalibration.from_dict(meta["calibration"]), meta["reward"]


def _load_for(ensemble: DynamicsEnsemble, path: Union[str, Path]) -> ProcessDataset:
    return load_dataset(path, ensemble.schema).with_normalizer(ensemble.normalizer)


def _discrete_policy(
    tag: str,
    ensemble: DynamicsEnsemble,
    reward: RewardFunction,
    calib: PenaltyCalibration,
    config: ExperimentConfig,
) -> DiscretePolicy:
    lower, upper = ensemble.schema.bounds("control")
    evaluator = make_evaluator(tag, ensemble, reward, calib)
    return DiscretePolicy(evaluator, lower, upper, config.bo, tag)


# -- single-stage commands -----------------------------------------------------------


def cmd_train_dynamics(config: ExperimentConfig, seed: Optional[int] = None) -> Path:
    """Train and calibrate the configured ensemble; returns its checkpoint folder."""
    seed = config.seeds[0] if seed is None else seed
    run = RunContext(config, "train-dynamics")
    with run.stage("data"):
        dataset = load_data(config)
        train, validation, _ = prepare_splits(dataset, config)
        reward = reward_spec(config, dataset)
    with run.stage("train"):
        ensemble, search_log = train_dynamics(train, validation, config, seed)
    with run.stage("calibrate"):
        calib = calibrate(
            ensemble, validation, config.penalty, config.ensemble.samples, derive_seed(seed, 12)
        )
    directory = save_trained(ensemble, calib, reward, run.path("ensemble", ensemble.kind))
    run.artifact("ensemble", directory)
    if search_log:
        run.write_table("gpn_grid_search", pd.DataFrame(search_log))
    run.manifest.metrics.update(calib.to_dict())
    run.finish()
    return directory


def cmd_eval_reward(
    config: ExperimentConfig, ensemble_dir: Union[str, Path], data_path: Union[str, Path], seed: Optional[int] = None
) -> pd.DataFrame:
    """r_p and its intermediates for every (x, u) row of a CSV file."""
    seed = config.seeds[0] if seed is None else seed
    run = RunContext(config, "eval-reward")
    ensemble, calib, reward = load_trained(ensemble_dir)
    dataset = _load_for(ensemble, data_path)
    evaluator = make_evaluator(config.evaluator, ensemble, build_reward(reward), calib)
    rows, reports = [], []
    with run.stage("evaluate"):
        for k in range(len(dataset)):
            value, report = evaluator.evaluate(dataset.X[k], dataset.U[k], derive_seed(seed, k))
            rows.append({"value": value, **{key: v for key, v in report.to_dict().items() if key != "per_member_moments"}})
            reports.append(report.to_dict())
    frame = pd.DataFrame(rows)
    run.write_table("eval_reward", frame)
    run.write_json("eval_reward_reports", reports)
    run.manifest.metrics["mean_value"] = float(frame["value"].mean()) if len(frame) else None
    run.finish()
    return frame


def cmd_optimize(
    config: ExperimentConfig,
    ensemble_dir: Union[str, Path],
    data_path: Optional[Union[str, Path]] = None,
    x: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
) -> List[Dict]:
    """Per-query Bayesian optimization of u for the given conditional vector(s)."""
    seed = config.seeds[0] if seed is None else seed
    run = RunContext(config, "optimize")
    ensemble, calib, reward = load_trained(ensemble_dir)
    if x is not None:
        queries = np.atleast_2d(np.asarray(x, dtype=np.float64))
    elif data_path is not None:
        queries = _load_for(ensemble, data_path).X
    else:
        raise ConfigError("optimize: give a conditional vector or a data file")
    if queries.shape[1] != ensemble.schema.dim("conditional"):
        raise ConfigError(
            f"optimize: x needs {ensemble.schema.dim('conditional')} components, got {queries.shape[1]}"
        )
    policy = _discrete_policy(config.evaluator, ensemble, build_reward(reward), calib, config)
    results = []
    with run.stage("optimize"):
        for k, query in enumerate(queries):
            u, trace = policy.optimize_controls(query, derive_seed(seed, k))
            results.append({"x": query.tolist(), "u": u.tolist(), "value": trace.values[trace.best_index], "trace": trace.to_dict()})
    run.write_json("optimize", results)
    run.finish()
    return results


def cmd_simulate(
    config: ExperimentConfig, behavior: str, out_dir: Union[str, Path], seed: Optional[int] = None
) -> ProcessDataset:
    """Roll out a behavior policy on the surrogate environment; writes CSV and trajectory JSON."""
    seed = config.data.seed if seed is None else seed
    run = RunContext(config, "simulate")
    with run.stage("simulate"):
        dataset, trajectories = rollout_dataset(
            behavior, config.continuous.n_traj, config.continuous.length, seed
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out_dir / f"{behavior}.csv")
    run.artifact("dataset", out_dir / f"{behavior}.csv")
    with open(out_dir / f"{behavior}_trajectories.json", "w", encoding="utf-8") as f:
        json.dump([t.to_dict() for t in trajectories], f)
    run.artifact("trajectories", out_dir / f"{behavior}_trajectories.json")
    run.manifest.metrics["coverage_outside"] = coverage_outside(dataset)
    run.finish()
    return dataset


def _is_surrogate(dataset: ProcessDataset) -> bool:
    return dataset.schema.schema_hash() == ib_schema().schema_hash()


def cmd_train_policy(
    config: ExperimentConfig,
    ensemble_dir: Union[str, Path],
    data_path: Union[str, Path],
) -> pd.DataFrame:
    """Offline DDPG for every configured seed; returns one row per seed."""
    run = RunContext(config, "train-policy")
    ensemble, calib, reward = load_trained(ensemble_dir)
    dataset = _load_for(ensemble, data_path)
    env = IbEnvironment() if _is_surrogate(dataset) else None
    rows = []
    for seed in config.seeds:
        with run.stage(f"ddpg-{config.evaluator}-{seed}"):
            result = train_offline_ddpg(
                ensemble, dataset, calib, config.ddpg, seed, build_reward(reward), config.evaluator
            )
        folder = result.agent.save(run.path("policy", config.evaluator, f"seed_{seed}"))
        run.artifact(f"agent_{config.evaluator}_{seed}", folder)
        returns = pd.DataFrame({"episode": range(len(result.episode_returns)), "return": result.episode_returns})
        run.write_table(f"returns_{config.evaluator}_{seed}", returns.set_index("episode"), area="policy")
        train_mean, train_std = result.agent.return_summary()
        row = {"seed": seed, "train_return_mean": train_mean, "train_return_std": train_std}
        if env is not None:
            row["eval_return_mean"], row["eval_return_std"] = evaluate_policy(
                result.agent, env, config.continuous.eval_episodes, config.ddpg.horizon, derive_seed(seed, 20)
            )
        rows.append(row)
    frame = pd.DataFrame(rows).set_index("seed")
    run.write_table(f"train_policy_{config.evaluator}", frame)
    run.manifest.metrics["policies"] = frame.reset_index().to_dict(orient="records")
    run.finish()
    return frame


def cmd_ope(
    config: ExperimentConfig,
    ensemble_dir: Union[str, Path],
    test_path: Optional[Union[str, Path]] = None,
    train_path: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
) -> Dict:
    """DM / IPS / WIS / DR for the ensemble-backed discrete policy on the test records."""
    seed = config.seeds[0] if seed is None else seed
    run = RunContext(config, "ope")
    ensemble, calib, reward_def = load_trained(ensemble_dir)
    if test_path is None or train_path is None:
        train, _, test = prepare_splits(load_data(config), config)
    if test_path is not None:
        test = _load_for(ensemble, test_path)
    if train_path is not None:
        train = _load_for(ensemble, train_path)
    reward = build_reward(reward_def)
    with run.stage("propensity"):
        logging_model = fit_logging_propensity(train, config.ensemble.gpn, derive_seed(seed, 30), config.ope.density_floor)
        predictor = RewardPredictor.fit(train, reward, config.ope, derive_seed(seed, 31))
    policy = _discrete_policy(config.evaluator, ensemble, reward, calib, config)
    with run.stage("estimate"):
        report = evaluate_ope(test, policy, reward, logging_model, predictor, config.ope, derive_seed(seed, 32))
    run.write_json(f"ope_{config.evaluator}", report.to_dict())
    run.manifest.metrics.update({k: getattr(report, k) for k in ("dm", "ips", "wis", "dr")})
    run.finish()
    return report.to_dict()


# -- out-of-distribution report ------------------------------------------------------


def _auroc(logged: np.ndarray, ood: np.ndarray) -> float:
    """AUROC of a score that should be larger on OoD inputs."""
    labels = np.concatenate([np.zeros(len(logged)), np.ones(len(ood))])
    return float(roc_auc_score(labels, np.concatenate([logged, ood])))


def cmd_report_ood(config: ExperimentConfig, seed: Optional[int] = None) -> Dict:
    """
    Uncertainty signals on logged versus randomized inputs.

    Emits mean +/- std curves of kappa and varkappa over the number of
    randomized input dimensions, histograms of kappa, varkappa and r_p on
    logged, fully randomized and control-only randomized inputs, and AUROC
    statistics for separating logged from randomized inputs.
    """
    seed = config.seeds[0] if seed is None else seed
    run = RunContext(config, "report-ood")
    with run.stage("data"):
        dataset = load_data(config)
        train, validation, test = prepare_splits(dataset, config)
        reward = build_reward(reward_spec(config, dataset))
    with run.stage("train"):
        ensemble, _ = train_dynamics(train, validation, config, seed)
        calib = calibrate(ensemble, validation, config.penalty, config.ensemble.samples, derive_seed(seed, 12))

    schema = ensemble.schema
    rng = np.random.default_rng(derive_seed(seed, 40))
    source = test if len(test) else train
    pick = rng.choice(len(source), size=min(config.report.n_inputs, len(source)), replace=False)
    X, U = source.X[np.sort(pick)], source.U[np.sort(pick)]
    N = config.ensemble.samples
    total_dims = schema.dim("conditional") + schema.dim("control")

    def signals(Xs, Us, key: int) -> Dict[str, np.ndarray]:
        measures = evaluate_inputs(ensemble, Xs, Us, reward, N, derive_seed(seed, 41, key), calib.jitter)
        reports = [report_from_measure(m, calib) for m in measures]
        return {
            "kappa": np.array([r.kappa for r in reports]),
            "varkappa": np.array([r.varkappa for r in reports]),
            "rp": np.array([r.penalized_reward for r in reports]),
            "cutoff": np.array([r.branch == "cutoff" for r in reports]),
        }

    curve = []
    with run.stage("sweep"):
        for n in range(total_dims + 1):
            Xn, Un = randomize_inputs(X, U, schema, n, np.random.default_rng(derive_seed(seed, 42, n)))
            s = signals(Xn, Un, n)
            curve.append(
                {
                    "n": n,
                    "kappa_mean": float(s["kappa"].mean()),
                    "kappa_std": float(s["kappa"].std()),
                    "varkappa_mean": float(s["varkappa"].mean()),
                    "varkappa_std": float(s["varkappa"].std()),
                }
            )
    curve_frame = pd.DataFrame(curve).set_index("n")

    with run.stage("ood-sets"):
        logged = signals(X, U, 1000)
        Xf, Uf = randomize_inputs(X, U, schema, total_dims, np.random.default_rng(derive_seed(seed, 43)))
        full = signals(Xf, Uf, 1001)
        Xc, Uc = randomize_inputs(
            X, U, schema, schema.dim("control"), np.random.default_rng(derive_seed(seed, 44)), controls_only=True
        )
        controls = signals(Xc, Uc, 1002)

    auroc = {}
    for name, ood in (("full", full), ("controls", controls)):
        auroc[name] = {
            "rp": _auroc(-logged["rp"], -ood["rp"]),
            "kappa": _auroc(logged["kappa"], ood["kappa"]),
            "varkappa": _auroc(logged["varkappa"], ood["varkappa"]),
        }
    ns = curve_frame.index.to_numpy()
    stats_out = {
        "spearman_varkappa": float(stats.spearmanr(ns, curve_frame["varkappa_mean"])[0]),
        "spearman_kappa": float(stats.spearmanr(ns, curve_frame["kappa_mean"])[0]),
        "kappa_peak_ratio": float(curve_frame["kappa_mean"].max() / max(curve_frame["kappa_mean"].iloc[0], 1e-300)),
        "auroc": auroc,
        "cutoff_fraction": {
            name: float(s["cutoff"].mean())
            for name, s in (("logged", logged), ("full", full), ("controls", controls))
        },
        "calibration": calib.to_dict(),
    }

    size = tuple(config.report.panel_size)
    curve_panels = [
        line_plot(
            {name: (ns, curve_frame[f"{name}_mean"].to_numpy())},
            title=f"{name} vs randomized dims",
            xlabel="n",
            ylabel=name,
            size=size,
            bands={name: curve_frame[f"{name}_std"].to_numpy()},
        )
        for name in ("kappa", "varkappa")
    ]
    hist_panels = [
        histogram_plot(
            {"logged": logged[key], "random": full[key], "controls": controls[key]},
            bins=config.report.bins,
            title=key,
            xlabel=key,
            size=size,
        )
        for key in ("kappa", "varkappa", "rp")
    ]
    run.artifact("ood_curves", save_panels(curve_panels, run.path("reports", "ood_curves.png"), columns=2))
    run.artifact("ood_histograms", save_panels(hist_panels, run.path("reports", "ood_histograms.png"), columns=3))
    run.write_table("ood_curve", curve_frame)
    run.write_json("ood_stats", stats_out)
    run.manifest.metrics.update(
        {"spearman_varkappa": stats_out["spearman_varkappa"], "auroc": auroc}
    )
    run.finish()
    return {"curve": curve_frame, **stats_out}


# -- case studies --------------------------------------------------------------------


def _summary_table(rows: List[Dict], index: Sequence[str], columns: Sequence[str]) -> pd.DataFrame:
    """Mean and std over seeds per ``index`` group."""
    frame = pd.DataFrame(rows)
    grouped = frame.groupby(list(index), sort=False)[list(columns)]
    table = grouped.mean()
    spread = grouped.std(ddof=0).add_suffix("_std")
    return table.join(spread)


def cmd_experiment_discrete(config: ExperimentConfig) -> pd.DataFrame:
    """
    The discrete case study.

    Per seed: train CGAN and GPN ensembles, calibrate them, build one BO
    policy per evaluator plus the GPN-backed r_p policy, and score each with
    DM / IPS / WIS / DR on the test split and, for synthetic data, with the
    true expected reward over fresh query conditionals.
    """
    run = RunContext(config, "experiment-discrete")
    with run.stage("data"):
        dataset = load_data(config)
        train, validation, test = prepare_splits(dataset, config)
        reward_def = reward_spec(config, dataset)
        reward = build_reward(reward_def)
    truth = dataset.ground_truth
    rows: List[Dict] = []
    true_values: Dict[str, List[np.ndarray]] = {}
    for seed in config.seeds:
        with run.stage("dynamics"):
            cgan, _ = train_dynamics(train, validation, config, seed, "cgan")
            gpn, search_log = train_dynamics(train, validation, config, seed, "gpn")
            N = config.ensemble.samples
            cgan_calib = calibrate(cgan, validation, config.penalty, N, derive_seed(seed, 12))
            gpn_calib = calibrate(gpn, validation, config.penalty, N, derive_seed(seed, 13))
        save_trained(cgan, cgan_calib, reward_def, run.path("ensemble", f"cgan_seed_{seed}"))
        run.artifact(f"cgan_{seed}", run.path("ensemble", f"cgan_seed_{seed}"))
        if search_log:
            run.write_table(f"gpn_grid_search_{seed}", pd.DataFrame(search_log))
        with run.stage("ope-models"):
            logging_model = fit_logging_propensity(
                train, config.ensemble.gpn, derive_seed(seed, 30), config.ope.density_floor
            )
            predictor = RewardPredictor.fit(train, reward, config.ope, derive_seed(seed, 31))

        methods = [(tag, cgan, cgan_calib) for tag in config.evaluators] + [(GPN_METHOD, gpn, gpn_calib)]
        for method, ensemble, calib in methods:
            tag = "rp" if method == GPN_METHOD else method
            policy = _discrete_policy(tag, ensemble, reward, calib, config)
            with run.stage(f"ope-{method}"):
                report = evaluate_ope(test, policy, reward, logging_model, predictor, config.ope, derive_seed(seed, 32))
            row = {"method": method, "seed": seed, "DM": report.dm, "IPS": report.ips, "WIS": report.wis, "DR": report.dr}
            if truth is not None:
                with run.stage(f"truth-{method}"):
                    _, _, values = policy_true_values(policy, truth, config.ope.true_queries, derive_seed(seed, 50))
                row["TRUE"] = float(values.mean())
                true_values.setdefault(method, []).append(values)
            rows.append(row)
        if truth is not None:
            rows.append(
                {"method": "logging", "seed": seed, "TRUE": truth.logging_value(config.ope.true_queries, derive_seed(seed, 50))}
            )

    columns = list(ESTIMATORS) + (["TRUE"] if truth is not None else [])
    table = _summary_table(rows, ["method"], columns)
    run.write_table("discrete_table", table)
    run.write_table("discrete_runs", pd.DataFrame(rows).set_index(["method", "seed"]))
    run.manifest.metrics["table"] = table.reset_index().to_dict(orient="records")
    if "rp" in true_values and "f1" in true_values:
        rp_values = np.concatenate(true_values["rp"])
        f1_values = np.concatenate(true_values["f1"])
        test_result = stats.ttest_rel(rp_values, f1_values)
        run.manifest.metrics["rp_vs_f1"] = {
            "mean_difference": float(np.mean(rp_values - f1_values)),
            "p_value": float(test_result.pvalue),
        }
    run.finish()
    logger.info(f"Discrete experiment table:\n{table.to_string()}")
    return table


def cmd_experiment_continuous(config: ExperimentConfig) -> pd.DataFrame:
    """
    The continuous case study on the surrogate environment.

    Per behavior policy: simulate a dataset, train and calibrate CGAN and GPN
    ensembles, train one DDPG agent per evaluator and seed plus the GPN-backed
    r_p agent, and evaluate all of them and the behavior policy on the
    environment.
    """
    run = RunContext(config, "experiment-continuous")
    cont, ddpg = config.continuous, config.ddpg
    env = IbEnvironment()
    penalty: PenaltyConfig = cont.penalty
    rows: List[Dict] = []
    for behavior in cont.behaviors:
        with run.stage(f"simulate-{behavior}"):
            dataset, _ = rollout_dataset(behavior, cont.n_traj, cont.length, config.data.seed)
            train, validation = carve_validation(dataset, config.data.validation_fraction, config.data.seed)
            train = train.fit_normalization()
            validation = validation.with_normalizer(train.normalizer)
        save_dataset(dataset, run.path("reports", f"dataset_{behavior}.csv"))
        run.artifact(f"dataset_{behavior}", run.path("reports", f"dataset_{behavior}.csv"))
        reward = ib_reward(config.reward.consumption_index, config.reward.fatigue_index)

        for seed in config.seeds:
            behavior_mean, _ = evaluate_behavior_policy(
                behavior, env, cont.eval_episodes, ddpg.horizon, derive_seed(seed, 20)
            )
            rows.append({"data": behavior, "method": "behavior", "seed": seed, "return": behavior_mean})
            with run.stage(f"dynamics-{behavior}"):
                cgan, _ = train_dynamics(train, validation, config, seed, "cgan")
                gpn, _ = train_dynamics(train, validation, config, seed, "gpn")
                N = config.ensemble.samples
                cgan_calib = calibrate(cgan, validation, penalty, N, derive_seed(seed, 12))
                gpn_calib = calibrate(gpn, validation, penalty, N, derive_seed(seed, 13))
            methods = [(tag, cgan, cgan_calib) for tag in config.evaluators] + [(GPN_METHOD, gpn, gpn_calib)]
            for method, ensemble, calib in methods:
                tag = "rp" if method == GPN_METHOD else method
                with run.stage(f"ddpg-{behavior}-{method}"):
                    result = train_offline_ddpg(ensemble, train, calib, ddpg, seed, reward, tag)
                folder = result.agent.save(run.path("policy", behavior, method, f"seed_{seed}"))
                run.artifact(f"agent_{behavior}_{method}_{seed}", folder)
                mean, _ = evaluate_policy(result.agent, env, cont.eval_episodes, ddpg.horizon, derive_seed(seed, 20))
                train_mean, _ = result.agent.return_summary()
                rows.append(
                    {"data": behavior, "method": method, "seed": seed, "return": mean, "train_return": train_mean}
                )

    table = _summary_table(rows, ["data", "method"], ["return"])
    run.write_table("continuous_table", table)
    run.write_table("continuous_runs", pd.DataFrame(rows).set_index(["data", "method", "seed"]))
    run.manifest.metrics["table"] = table.reset_index().to_dict(orient="records")
    run.finish()
    logger.info(f"Continuous experiment table:\n{table.to_string()}")
    return table
