"""Process dataset model: variable spaces, CSV persistence, splitting and OoD resampling."""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import validate_split_ratios
from .errors import ConfigError, DataError, ParseError, ValidationError
from .logging_config import get_logger


logger = get_logger("data")

KINDS = ("conditional", "control", "result")
_KIND_PREFIX = {"conditional": "x", "control": "u", "result": "y"}
_TIME_COLUMN = "t"
_LINE_PATTERN = re.compile(r"line (\d+)")


@dataclass(frozen=True)
class VariableSpace:
    """Declared box for one process variable."""

    name: str
    kind: str  # conditional, control or result
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(
                f"variable '{self.name}': kind must be one of {', '.join(KINDS)}, got '{self.kind}'"
            )
        if not self.lower < self.upper:
            raise ConfigError(
                f"variable '{self.name}': lower ({self.lower}) must be < upper ({self.upper})"
            )

    @classmethod
    def from_dict(cls, data: Dict) -> VariableSpace:
        try:
            return cls(
                name=str(data["name"]),
                kind=str(data["kind"]),
                lower=float(data["lower"]),
                upper=float(data["upper"]),
            )
        except KeyError as e:
            raise ConfigError(f"variable space is missing {e}")

    def to_dict(self) -> Dict:
        return {"name": self.name, "kind": self.kind, "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class DatasetSchema:
    """
    Ordered variable spaces of a dataset: conditional, then control, then result.

    ``next_state_map`` is only set for continuous-control data: entry ``i`` is the
    index of the result component that becomes conditional component ``i`` at the
    next time step.
    """

    variables: Tuple[VariableSpace, ...]
    next_state_map: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        names = [v.name for v in self.variables]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ConfigError(f"schema: duplicate variable name(s): {', '.join(duplicates)}")
        order = [KINDS.index(v.kind) for v in self.variables]
        if order != sorted(order):
            raise ConfigError("schema: variables must be ordered conditional, control, result")
        for kind in KINDS:
            if not any(v.kind == kind for v in self.variables):
                raise ConfigError(f"schema: at least one '{kind}' variable is required")
        if self.next_state_map is not None:
            if len(self.next_state_map) != self.dim("conditional"):
                raise ConfigError(
                    "schema.next_state_map: needs one result index per conditional variable"
                )
            r = self.dim("result")
            if any(not 0 <= i < r for i in self.next_state_map):
                raise ConfigError("schema.next_state_map: result index out of range")

    @classmethod
    def build(
        cls,
        conditional: Sequence[Tuple[float, float]],
        control: Sequence[Tuple[float, float]],
        result: Sequence[Tuple[float, float]],
        names: Optional[Dict[str, Sequence[str]]] = None,
        next_state_map: Optional[Sequence[int]] = None,
    ) -> DatasetSchema:
        """Build a schema from per-kind bound lists, naming columns x0.., u0.., y0.."""
        names = names or {}
        variables = []
        for kind, bounds in zip(KINDS, (conditional, control, result)):
            kind_names = names.get(kind) or [
                f"{_KIND_PREFIX[kind]}{i}" for i in range(len(bounds))
            ]
            for name, (lo, hi) in zip(kind_names, bounds):
                variables.append(VariableSpace(name, kind, float(lo), float(hi)))
        nsm = tuple(int(i) for i in next_state_map) if next_state_map is not None else None
        return cls(tuple(variables), nsm)

    @classmethod
    def from_dict(cls, data: Union[Dict, List]) -> DatasetSchema:
        if isinstance(data, list):
            return cls(tuple(VariableSpace.from_dict(v) for v in data))
        if "variables" not in data:
            raise ConfigError("schema: missing 'variables'")
        nsm = data.get("next_state_map")
        return cls(
            tuple(VariableSpace.from_dict(v) for v in data["variables"]),
            tuple(int(i) for i in nsm) if nsm is not None else None,
        )

    def to_dict(self) -> Dict:
        data: Dict = {"variables": [v.to_dict() for v in self.variables]}
        if self.next_state_map is not None:
            data["next_state_map"] = list(self.next_state_map)
        return data

    def spaces(self, kind: str) -> List[VariableSpace]:
        return [v for v in self.variables if v.kind == kind]

    def dim(self, kind: str) -> int:
        return len(self.spaces(kind))

    def names(self, kind: Optional[str] = None) -> List[str]:
        return [v.name for v in self.variables if kind is None or v.kind == kind]

    def bounds(self, kind: str) -> Tuple[np.ndarray, np.ndarray]:
        spaces = self.spaces(kind)
        return (
            np.array([v.lower for v in spaces], dtype=np.float64),
            np.array([v.upper for v in spaces], dtype=np.float64),
        )

    def schema_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ProcessRecord:
    """One logged (x, u, y) tuple."""

    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    t: Optional[int] = None


@dataclass(frozen=True)
class Normalizer:
    """Per-variable affine map v -> (v - shift) / scale into [0, 1]."""

    shift: Dict[str, np.ndarray]
    scale: Dict[str, np.ndarray]

    @classmethod
    def fit(
        cls, schema: DatasetSchema, arrays: Dict[str, np.ndarray]
    ) -> Normalizer:
        """Fit from data min/max; constant columns fall back to their declared bounds."""
        shift, scale = {}, {}
        for kind in KINDS:
            lower, upper = schema.bounds(kind)
            values = arrays[kind]
            lo = values.min(axis=0) if len(values) else lower
            hi = values.max(axis=0) if len(values) else upper
            degenerate = ~(hi > lo)
            lo = np.where(degenerate, lower, lo)
            hi = np.where(degenerate, upper, hi)
            shift[kind] = lo.astype(np.float64)
            scale[kind] = (hi - lo).astype(np.float64)
        return cls(shift, scale)

    @classmethod
    def from_bounds(cls, schema: DatasetSchema) -> Normalizer:
        shift, scale = {}, {}
        for kind in KINDS:
            lower, upper = schema.bounds(kind)
            shift[kind] = lower
            scale[kind] = upper - lower
        return cls(shift, scale)

    def normalize(self, kind: str, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.shift[kind]) / self.scale[kind]

    def denormalize(self, kind: str, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.scale[kind] + self.shift[kind]

    def to_dict(self) -> Dict:
        return {
            "shift": {k: v.tolist() for k, v in self.shift.items()},
            "scale": {k: v.tolist() for k, v in self.scale.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict) -> Normalizer:
        return cls(
            {k: np.asarray(v, dtype=np.float64) for k, v in data["shift"].items()},
            {k: np.asarray(v, dtype=np.float64) for k, v in data["scale"].items()},
        )


def _frozen(array: np.ndarray, width: int) -> np.ndarray:
    out = np.array(array, dtype=np.float64).reshape(-1, width)
    out.setflags(write=False)
    return out


class ProcessDataset:
    """
    Immutable collection of process records with their schema.

    Records are stored column-wise as ``X`` (n, p), ``U`` (n, q) and ``Y`` (n, r).
    """

    def __init__(
        self,
        schema: DatasetSchema,
        X: np.ndarray,
        U: np.ndarray,
        Y: np.ndarray,
        T: Optional[np.ndarray] = None,
        normalizer: Optional[Normalizer] = None,
        ground_truth: Optional[Any] = None,
    ):
        self.schema = schema
        self.X = _frozen(X, schema.dim("conditional"))
        self.U = _frozen(U, schema.dim("control"))
        self.Y = _frozen(Y, schema.dim("result"))
        if not len(self.X) == len(self.U) == len(self.Y):
            raise ValueError(
                f"row count mismatch: X={len(self.X)}, U={len(self.U)}, Y={len(self.Y)}"
            )
        self.T = None
        if T is not None:
            self.T = np.asarray(T, dtype=np.int64).reshape(-1)
            self.T.setflags(write=False)
        self.normalizer = normalizer
        # synthetic datasets keep their generating process for oracle checks
        self.ground_truth = ground_truth

    def __len__(self) -> int:
        return len(self.X)

    def __repr__(self) -> str:
        return (
            f"ProcessDataset(n={len(self)}, dims=({self.schema.dim('conditional')}, "
            f"{self.schema.dim('control')}, {self.schema.dim('result')}))"
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"conditional": self.X, "control": self.U, "result": self.Y}

    def record(self, index: int) -> ProcessRecord:
        t = int(self.T[index]) if self.T is not None else None
        return ProcessRecord(self.X[index].copy(), self.U[index].copy(), self.Y[index].copy(), t)

    @property
    def records(self) -> List[ProcessRecord]:
        return [self.record(i) for i in range(len(self))]

    def subset(self, indices: Sequence[int]) -> ProcessDataset:
        idx = np.asarray(indices, dtype=np.int64)
        return ProcessDataset(
            self.schema,
            self.X[idx],
            self.U[idx],
            self.Y[idx],
            self.T[idx] if self.T is not None else None,
            self.normalizer,
            self.ground_truth,
        )

    def fit_normalization(self) -> ProcessDataset:
        """Return a copy whose normalizer is fitted on this dataset's min/max."""
        if len(self) == 0:
            return self.with_normalizer(None)
        return self.with_normalizer(Normalizer.fit(self.schema, self.arrays()))

    def with_normalizer(self, normalizer: Optional[Normalizer]) -> ProcessDataset:
        return ProcessDataset(
            self.schema, self.X, self.U, self.Y, self.T, normalizer, self.ground_truth
        )

    def normalized(self, kind: str) -> np.ndarray:
        if self.normalizer is None:
            raise DataError("dataset has no fitted normalization")
        return self.normalizer.normalize(kind, self.arrays()[kind])

    def validate(self) -> None:
        """Check every component against its declared space."""
        for kind, values in self.arrays().items():
            for j, space in enumerate(self.schema.spaces(kind)):
                column = values[:, j]
                if not np.all(np.isfinite(column)):
                    row = int(np.flatnonzero(~np.isfinite(column))[0])
                    raise ValidationError(f"non-finite value at row {row}", space.name)
                bad = np.flatnonzero((column < space.lower) | (column > space.upper))
                if bad.size:
                    row = int(bad[0])
                    raise ValidationError(
                        f"value {column[row]!r} at row {row} outside "
                        f"[{space.lower}, {space.upper}]",
                        space.name,
                    )


@dataclass
class TrajectoryStep:
    x: np.ndarray
    u: np.ndarray
    reward: float
    x_next: np.ndarray


@dataclass
class Trajectory:
    """Ordered transitions of one continuous-control rollout."""

    steps: List[TrajectoryStep] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.steps)

    def append(self, x: np.ndarray, u: np.ndarray, reward: float, x_next: np.ndarray) -> None:
        if self.steps and not np.array_equal(self.steps[-1].x_next, x):
            raise ValueError("trajectory is not chained: x differs from previous x_next")
        self.steps.append(TrajectoryStep(np.array(x), np.array(u), float(reward), np.array(x_next)))

    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def to_dict(self) -> Dict:
        return {
            "length": self.length,
            "steps": [
                {
                    "x": s.x.tolist(),
                    "u": s.u.tolist(),
                    "reward": s.reward,
                    "x_next": s.x_next.tolist(),
                }
                for s in self.steps
            ],
        }


def schema_sidecar_path(csv_path: Union[str, Path]) -> Path:
    path = Path(csv_path)
    return path.with_name(path.stem + ".schema.json")


def load_schema(path: Union[str, Path]) -> DatasetSchema:
    if not os.path.exists(path):
        raise DataError(f"schema file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return DatasetSchema.from_dict(json.load(f))
    except json.JSONDecodeError as e:
        raise DataError(f"invalid schema JSON in {path}: {e}")


def save_schema(schema: DatasetSchema, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema.to_dict(), f, indent=2)


def _parse_column(raw: pd.Series, name: str) -> np.ndarray:
    try:
        return raw.to_numpy(dtype=object).astype(np.float64)
    except (TypeError, ValueError):
        for row, cell in enumerate(raw):
            try:
                float(cell)
            except (TypeError, ValueError):
                raise ParseError(f"column '{name}': cannot parse {cell!r} as a number", row)
        raise


def load_dataset(
    path: Union[str, Path],
    schema: Optional[Union[DatasetSchema, str, Path]] = None,
) -> ProcessDataset:
    """
    Load a dataset from CSV and validate it against its schema.

    Args:
        path: CSV file with header ``x.., u.., y..`` (optional leading ``t``).
        schema: A DatasetSchema, a path to a schema JSON, or None to read the
            ``<name>.schema.json`` sidecar.

    Returns:
        Dataset with normalization fitted from the data (none if empty).

    Raises:
        DataError: missing file or header mismatch.
        ParseError: a malformed row, naming the row index.
        ValidationError: a value outside its declared space, naming the variable.
    """
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    if schema is None:
        schema = load_schema(schema_sidecar_path(path))
    elif not isinstance(schema, DatasetSchema):
        schema = load_schema(schema)

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        match = _LINE_PATTERN.search(str(e))
        row = int(match.group(1)) - 2 if match else -1
        raise ParseError(f"malformed row: {e}", row)
    except pd.errors.EmptyDataError:
        raise DataError(f"dataset file has no header: {path}")

    expected = schema.names()
    columns = list(frame.columns)
    has_time = bool(columns) and columns[0] == _TIME_COLUMN
    if (columns[1:] if has_time else columns) != expected:
        raise DataError(
            f"header mismatch in {path}: expected {','.join(expected)}, got {','.join(columns)}"
        )

    values = {name: _parse_column(frame[name], name) for name in expected}
    blocks = {
        kind: np.column_stack([values[n] for n in schema.names(kind)])
        if len(frame)
        else np.zeros((0, schema.dim(kind)))
        for kind in KINDS
    }
    T = _parse_column(frame[_TIME_COLUMN], _TIME_COLUMN).astype(np.int64) if has_time else None

    dataset = ProcessDataset(
        schema, blocks["conditional"], blocks["control"], blocks["result"], T
    )
    dataset.validate()
    if len(dataset) == 0:
        logger.warning(f"Dataset {path} is empty; no normalization fitted")
        return dataset

    dataset = dataset.fit_normalization()
    logger.info(f"Loaded {len(dataset)} records from {path}")
    return dataset


def save_dataset(dataset: ProcessDataset, path: Union[str, Path]) -> None:
    """Write the dataset as CSV (17 significant digits) plus the schema sidecar."""
    columns: Dict[str, np.ndarray] = {}
    if dataset.T is not None:
        columns[_TIME_COLUMN] = dataset.T
    for kind, values in dataset.arrays().items():
        for j, name in enumerate(dataset.schema.names(kind)):
            columns[name] = values[:, j]
    frame = pd.DataFrame(columns, columns=list(columns))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    save_schema(dataset.schema, schema_sidecar_path(path))
    logger.debug(f"Saved {len(dataset)} records to {path}")


def _partition_sizes(n: int, ratios: Sequence[float]) -> List[int]:
    raw = np.asarray(ratios, dtype=np.float64) * n
    sizes = np.floor(raw).astype(int)
    remainder = n - int(sizes.sum())
    # largest fractional parts first, earlier subsets win ties
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:remainder]:
        sizes[i] += 1
    return sizes.tolist()


def split(
    dataset: ProcessDataset, ratios: Sequence[float], seed: int
) -> Tuple[ProcessDataset, ...]:
    """
    Shuffle and partition a dataset into disjoint subsets.

    Deterministic given ``seed``; the subsets cover every record exactly once.
    """
    validate_split_ratios(ratios, path="split.ratios")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    parts = []
    start = 0
    for size in _partition_sizes(n, ratios):
        parts.append(dataset.subset(np.sort(perm[start : start + size])))
        start += size
    return tuple(parts)


def carve_validation(
    train: ProcessDataset, fraction: float, seed: int
) -> Tuple[ProcessDataset, ProcessDataset]:
    """Split a validation part (for epsilon calibration) off the training split."""
    fit, validation = split(train, (1.0 - fraction, fraction), seed)
    return fit, validation


def randomize_dims(
    record: ProcessRecord, schema: DatasetSchema, n_dims: int, seed: int
) -> ProcessRecord:
    """
    Resample ``n_dims`` uniformly chosen input dimensions over their spaces.

    Inputs are the conditional followed by the control components; ``y`` is
    left untouched.
    """
    p, q = schema.dim("conditional"), schema.dim("control")
    if not 0 <= n_dims <= p + q:
        raise ValueError(f"n_dims must be in [0, {p + q}], got {n_dims}")
    rng = np.random.default_rng(seed)
    inputs = np.concatenate([record.x, record.u]).astype(np.float64)
    lower = np.concatenate([schema.bounds("conditional")[0], schema.bounds("control")[0]])
    upper = np.concatenate([schema.bounds("conditional")[1], schema.bounds("control")[1]])
    chosen = rng.choice(p + q, size=n_dims, replace=False)
    inputs[chosen] = rng.uniform(lower[chosen], upper[chosen])
    return ProcessRecord(inputs[:p], inputs[p:], record.y.copy(), record.t)


def randomize_inputs(
    X: np.ndarray,
    U: np.ndarray,
    schema: DatasetSchema,
    n_dims: int,
    rng: np.random.Generator,
    controls_only: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batch version of :func:`randomize_dims` for OoD sweeps.

    With ``controls_only`` the ``n_dims`` dimensions are drawn from the control
    components only.
    """
    p, q = schema.dim("conditional"), schema.dim("control")
    candidates = np.arange(p, p + q) if controls_only else np.arange(p + q)
    if not 0 <= n_dims <= len(candidates):
        raise ValueError(f"n_dims must be in [0, {len(candidates)}], got {n_dims}")
    inputs = np.concatenate([X, U], axis=1).astype(np.float64)
    lower = np.concatenate([schema.bounds("conditional")[0], schema.bounds("control")[0]])
    upper = np.concatenate([schema.bounds("conditional")[1], schema.bounds("control")[1]])
    for row in range(len(inputs)):
        chosen = rng.choice(candidates, size=n_dims, replace=False)
        inputs[row, chosen] = rng.uniform(lower[chosen], upper[chosen])
    return inputs[:, :p], inputs[:, p:]
