"""Delimited dataset loading and YAML run configuration.

Data files are comma- or tab-separated text. The first row is a header;
the first column holds sample identifiers. Every other column is either
the property, the optional task column, or a primary feature. A header
cell may carry a unit annotation in parentheses, e.g. "energy (eV)" or
"force (kg*m*s^-2)"; a bare name is dimensionless. Primary names must be
identifiers (letters, digits, underscore, not starting with a digit) so
rendered expressions stay unambiguous.

Run configurations are YAML mappings restricted to known keys; unknown
keys are rejected rather than ignored so typos cannot silently change a
run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .errors import ConfigError, DescsearchError
from .expressions import OPERATORS
from .units import Unit, parse_unit

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_HEADER_RE = re.compile(r"^(?P<name>[^()]+?)\s*\((?P<unit>[^()]*)\)$")


class ParseError(DescsearchError):
    """Malformed data file; message carries row and column coordinates."""


class MissingColumn(DescsearchError):
    """The requested property or task column is absent from the header."""


class NonFiniteData(DescsearchError):
    """A sample value parsed to NaN or infinity."""


@dataclass
class Dataset:
    sample_ids: list[str]
    primary_names: list[str]
    primary_units: list[Unit]
    primary_values: np.ndarray
    property_name: str
    property_unit: Unit
    property_values: np.ndarray
    task_labels: list[str] | None

    @property
    def n_samples(self) -> int:
        return self.primary_values.shape[0]

    @property
    def n_primary(self) -> int:
        return self.primary_values.shape[1]

    def task_partition(self):
        """(ordered unique labels, index arrays) or a single covering task."""
        if self.task_labels is None:
            return ["all"], [np.arange(self.n_samples)]
        order = []
        groups: dict[str, list[int]] = {}
        for i, lab in enumerate(self.task_labels):
            if lab not in groups:
                groups[lab] = []
                order.append(lab)
            groups[lab].append(i)
        return order, [np.array(groups[lab], dtype=np.intp) for lab in order]


def _split_header_cell(cell: str) -> tuple[str, Unit]:
    cell = cell.strip()
    m = _HEADER_RE.match(cell)
    if m:
        return m.group("name").strip(), parse_unit(m.group("unit"))
    return cell, Unit()


def _detect_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def load_dataset(path, property_key: str, task_key: str | None = None) -> Dataset:
    """Load a delimited dataset; see the module docstring for the layout.

    Raises MissingColumn when property_key or task_key is not a header
    name, ParseError on malformed rows or cells (with coordinates), and
    NonFiniteData when a numeric cell is NaN or infinite.
    """
    with open(path, "r", newline="") as fh:
        text = fh.read()
    first_line = text.splitlines()[0] if text.strip() else ""
    if not first_line:
        raise ParseError(f"{path}: empty file")
    delim = _detect_delimiter(first_line)
    rows = list(csv.reader(io.StringIO(text), delimiter=delim))
    header = [c.strip() for c in rows[0]]
    if len(header) < 3:
        raise ParseError(f"{path}: need at least an id column, the property, and one primary")
    parsed = [_split_header_cell(c) for c in header]
    names = [p[0] for p in parsed]

    def find(key: str) -> int:
        for i in range(1, len(names)):
            if names[i] == key:
                return i
        raise MissingColumn(f"{path}: no column named {key!r}; header has {names[1:]}")

    prop_col = find(property_key)
    task_col = find(task_key) if task_key is not None else None
    primary_cols = [
        i for i in range(1, len(names)) if i != prop_col and i != task_col
    ]
    if not primary_cols:
        raise ParseError(f"{path}: no primary feature columns remain")
    for i in primary_cols:
        if not _NAME_RE.match(names[i]):
            raise ParseError(
                f"{path}: primary name {names[i]!r} (column {i + 1}) is not an identifier"
            )

    data_rows = [r for r in rows[1:] if any(c.strip() for c in r)]
    if len(data_rows) < 2:
        raise ParseError(f"{path}: need at least two data rows")
    n = len(data_rows)
    x = np.empty((n, len(primary_cols)), dtype=np.float64)
    y = np.empty(n, dtype=np.float64)
    ids = []
    tasks: list[str] | None = [] if task_col is not None else None
    for r, row in enumerate(data_rows):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {r + 2} has {len(row)} cells, header has {len(header)}"
            )
        ids.append(row[0].strip())

        def cell(i: int) -> float:
            raw = row[i].strip()
            try:
                v = float(raw)
            except ValueError:
                raise ParseError(
                    f"{path}: row {r + 2}, column {names[i]!r}: cannot parse {raw!r}"
                ) from None
            if not np.isfinite(v):
                raise NonFiniteData(
                    f"{path}: row {r + 2}, column {names[i]!r}: non-finite value {raw!r}"
                )
            return v

        for k, i in enumerate(primary_cols):
            x[r, k] = cell(i)
        y[r] = cell(prop_col)
        if tasks is not None:
            tasks.append(row[task_col].strip())
    return Dataset(
        sample_ids=ids,
        primary_names=[names[i] for i in primary_cols],
        primary_units=[parsed[i][1] for i in primary_cols],
        primary_values=x,
        property_name=names[prop_col],
        property_unit=parsed[prop_col][1],
        property_values=y,
        task_labels=tasks,
    )


def peek_primary_count(path, property_key: str, task_key: str | None = None) -> int:
    """Count primary columns from the header alone."""
    with open(path, "r") as fh:
        first = fh.readline()
    if not first.strip():
        raise ParseError(f"{path}: empty file")
    delim = _detect_delimiter(first)
    header = next(csv.reader(io.StringIO(first), delimiter=delim))
    names = [_split_header_cell(c)[0] for c in header]
    reserved = {property_key}
    if task_key is not None:
        reserved.add(task_key)
    found = [nm for nm in names[1:] if nm in reserved]
    missing = reserved - set(found)
    if missing:
        raise MissingColumn(f"{path}: header lacks {sorted(missing)}")
    return len(names) - 1 - len(reserved)


@dataclass
class RunConfig:
    """Complete description of one search run."""

    property_key: str
    operators: list[str]
    max_rung: int
    dimension: int
    n_sis_select: int
    data_file: str | None = None
    task_key: str | None = None
    subspace_accounting: str = "per_iteration"
    n_residual: int = 10
    min_abs_value: float = 1e-5
    max_abs_value: float = 1e8
    materialize_last_rung: bool = True
    value_batch_size: int = 1_000_000
    l0_batch_size: int = 131072
    precision: str = "fp64"
    n_models_store: int = 10
    autotune: bool = True
    workers: int = 1
    dedup_tolerance: float = 1e-12
    chunk_candidates: list[int] = field(default_factory=lambda: [4096, 16384, 65536])
    max_materialized_features: int | None = None
    output_dir: str = "."
    plots: bool = True


_REQUIRED_KEYS = ("property_key", "operators", "max_rung", "dimension", "n_sis_select")


def _fail(key, message):
    raise ConfigError(f"{key}: {message}")


def validate_config(cfg: RunConfig) -> RunConfig:
    """Check every invariant the pipeline relies on; returns cfg."""
    for kind in cfg.operators:
        if kind not in OPERATORS:
            _fail("operators", f"unknown operator {kind!r}; valid kinds: {', '.join(sorted(OPERATORS))}")
    if len(set(cfg.operators)) != len(cfg.operators):
        _fail("operators", "operator list contains duplicates")
    if not cfg.operators:
        _fail("operators", "at least one operator is required")
    if cfg.max_rung < 0:
        _fail("max_rung", "must be non-negative")
    if cfg.dimension < 1:
        _fail("dimension", "must be at least 1")
    if cfg.n_sis_select < 1:
        _fail("n_sis_select", "must be at least 1")
    if cfg.subspace_accounting not in ("per_iteration", "total"):
        _fail("subspace_accounting", "must be per_iteration or total")
    if cfg.n_residual < 1:
        _fail("n_residual", "must be at least 1")
    if cfg.n_models_store < cfg.n_residual:
        _fail("n_models_store", "must be at least n_residual, the next iteration needs those models")
    if not (0 < cfg.min_abs_value < cfg.max_abs_value):
        _fail("min_abs_value", "need 0 < min_abs_value < max_abs_value")
    if cfg.value_batch_size < 1:
        _fail("value_batch_size", "must be positive")
    if cfg.l0_batch_size < 1:
        _fail("l0_batch_size", "must be positive")
    if cfg.precision not in ("fp32", "fp64"):
        _fail("precision", "must be fp32 or fp64")
    if cfg.workers < 1:
        _fail("workers", "must be at least 1")
    if cfg.dedup_tolerance < 0:
        _fail("dedup_tolerance", "must be non-negative")
    if not cfg.chunk_candidates or any(c < 1 for c in cfg.chunk_candidates):
        _fail("chunk_candidates", "must be a non-empty list of positive sizes")
    if cfg.max_materialized_features is not None and cfg.max_materialized_features < 1:
        _fail("max_materialized_features", "must be positive when set")
    return cfg


def config_from_mapping(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    try:
        cfg = RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if f.name in ("max_rung", "dimension", "n_sis_select", "n_residual", "value_batch_size",
                      "l0_batch_size", "n_models_store", "workers"):
            if not isinstance(val, int) or isinstance(val, bool):
                _fail(f.name, f"must be an integer, got {val!r}")
        if f.name in ("min_abs_value", "max_abs_value", "dedup_tolerance"):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                _fail(f.name, f"must be a number, got {val!r}")
            setattr(cfg, f.name, float(val))
    if not isinstance(cfg.operators, list) or not all(isinstance(o, str) for o in cfg.operators):
        _fail("operators", "must be a list of operator names")
    if not isinstance(cfg.chunk_candidates, list):
        _fail("chunk_candidates", "must be a list of sizes")
    return validate_config(cfg)


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if raw is None:
        raise ConfigError(f"{path}: empty configuration")
    return config_from_mapping(raw)


def serialize_config(cfg: RunConfig) -> dict:
    """Plain mapping with every effective value, YAML- and JSON-dumpable."""
    return {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}


# Keys that determine the search result. Execution knobs (workers, batch
# sizes, autotune, plotting, paths) are excluded on purpose: two runs that
# differ only in those produce identical models and must share a digest.
_SEMANTIC_KEYS = (
    "property_key",
    "task_key",
    "operators",
    "max_rung",
    "dimension",
    "n_sis_select",
    "subspace_accounting",
    "n_residual",
    "min_abs_value",
    "max_abs_value",
    "precision",
    "n_models_store",
    "dedup_tolerance",
)


def config_digest(cfg: RunConfig) -> str:
    """Short digest of the result-determining part of the configuration."""
    blob = json.dumps({k: getattr(cfg, k) for k in _SEMANTIC_KEYS}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_synthetic_dataset(
    n_primary: int = 12,
    n_samples: int = 100,
    n_tasks: int = 1,
    seed: int = 0,
) -> Dataset:
    """Deterministic synthetic dataset for benchmarks.

    Primaries are positive and dimensionless so every operator stays
    applicable; the property mixes a product, a square root, and noise.
    """
    if n_primary < 3:
        raise ValueError("need at least three primaries")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 2.0, size=(n_samples, n_primary))
    y = 2.0 * x[:, 0] * x[:, 1] - 0.5 * np.sqrt(x[:, 2]) + 0.01 * rng.standard_normal(n_samples)
    names = [f"x{i}" for i in range(n_primary)]
    tasks = None
    if n_tasks > 1:
        tasks = [f"t{i % n_tasks}" for i in range(n_samples)]
    return Dataset(
        sample_ids=[f"s{i}" for i in range(n_samples)],
        primary_names=names,
        primary_units=[Unit() for _ in names],
        primary_values=x,
        property_name="target",
        property_unit=Unit(),
        property_values=y,
        task_labels=tasks,
    )


def write_dataset(path, dataset: Dataset, delimiter: str = ",") -> None:
    """Write a Dataset back to delimited text (used by bench and tests)."""
    from .units import format_unit

    def head(name, unit):
        u = format_unit(unit)
        return f"{name} ({u})" if u else name

    cols = [head(dataset.property_name, dataset.property_unit)]
    if dataset.task_labels is not None:
        cols.append("task")
    cols += [head(n, u) for n, u in zip(dataset.primary_names, dataset.primary_units)]
    lines = [delimiter.join(["sample"] + cols)]
    for r in range(dataset.n_samples):
        row = [dataset.sample_ids[r], repr(float(dataset.property_values[r]))]
        if dataset.task_labels is not None:
            row.append(dataset.task_labels[r])
        row += [repr(float(v)) for v in dataset.primary_values[r]]
        lines.append(delimiter.join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
