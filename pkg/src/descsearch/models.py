"""Fitted descriptor models: evaluation, residuals, and the text format.

A model is a fixed tuple of analytical features with per-task linear
coefficients and an intercept. Files written here round-trip exactly:
floats are printed with 17 significant digits, expressions with the
render grammar that parse_expression inverts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DescsearchError
from .expressions import Expression, evaluate, parse_expression, render


class ModelFormatError(DescsearchError):
    """A model record did not match the expected text layout."""


@dataclass
class Model:
    """One fitted descriptor.

    indices are positions inside the subspace that was searched;
    coefficients has shape (ntasks, n_features + 1) with the intercept
    last; score is the mean squared error pooled over every sample.
    """

    indices: tuple[int, ...]
    expressions: tuple[Expression, ...] | None
    coefficients: np.ndarray
    score: float
    rmse_per_task: np.ndarray
    task_labels: tuple[str, ...]

    @property
    def dimension(self) -> int:
        return len(self.indices)


def predict(model: Model, primary_values: np.ndarray, task_slices=None) -> np.ndarray:
    """Model prediction for every sample, computed in float64.

    primary_values is the (samples, primaries) matrix; task_slices must
    match the partition the model was fitted with (None for one task).
    """
    if model.expressions is None:
        raise ValueError("model carries no expressions to evaluate")
    x = np.asarray(primary_values, dtype=np.float64)
    n = x.shape[0]
    if task_slices is None:
        task_slices = [np.arange(n)]
    if len(task_slices) != model.coefficients.shape[0]:
        raise ValueError("task partition does not match fitted coefficients")
    cols = [evaluate(e, x, "fp64") for e in model.expressions]
    out = np.empty(n, dtype=np.float64)
    for t, sl in enumerate(task_slices):
        c = model.coefficients[t]
        acc = np.full(len(sl), c[-1], dtype=np.float64)
        for k, col in enumerate(cols):
            acc += c[k] * col[sl]
        out[sl] = acc
    return out


def residuals(
    models: list[Model],
    property_values: np.ndarray,
    primary_values: np.ndarray,
    task_slices=None,
    n_residual: int | None = None,
) -> list[np.ndarray]:
    """Residual vectors (property minus prediction) of the best models.

    Takes the first n_residual models of the list (all when None); always
    float64 regardless of the search precision.
    """
    y = np.asarray(property_values, dtype=np.float64)
    chosen = models if n_residual is None else models[:n_residual]
    return [y - predict(m, primary_values, task_slices) for m in chosen]


def _fmt(x: float) -> str:
    return "%.17e" % float(x)


def serialize_model(model: Model, number: int) -> str:
    """One text record; parse_model_record inverts it bit-exactly."""
    if model.expressions is None:
        raise ValueError("model carries no expressions to serialize")
    lines = [f"model: {number}", f"score_mse: {_fmt(model.score)}"]
    for e in model.expressions:
        lines.append(f"term: {render(e)}")
    for t, label in enumerate(model.task_labels):
        lines.append(f"task: {label}")
        coefs = " ".join(_fmt(c) for c in model.coefficients[t])
        lines.append(f"coefficients: {coefs}")
        lines.append(f"rmse: {_fmt(model.rmse_per_task[t])}")
    return "\n".join(lines)


@dataclass
class ParsedModel:
    number: int
    score: float
    terms: list[str]
    task_labels: list[str]
    coefficients: np.ndarray
    rmse_per_task: np.ndarray

    def to_model(self, primaries: dict[str, Expression]) -> Model:
        exprs = tuple(parse_expression(t, primaries) for t in self.terms)
        return Model(
            indices=tuple(range(len(exprs))),
            expressions=exprs,
            coefficients=self.coefficients,
            score=self.score,
            rmse_per_task=self.rmse_per_task,
            task_labels=tuple(self.task_labels),
        )


def _take(lines, i, prefix):
    if i >= len(lines) or not lines[i].startswith(prefix):
        got = lines[i] if i < len(lines) else "<end>"
        raise ModelFormatError(f"expected line starting with {prefix!r}, got {got!r}")
    return lines[i][len(prefix):].strip(), i + 1


def parse_model_record(text: str) -> ParsedModel:
    lines = [ln for ln in text.strip().splitlines()]
    val, i = _take(lines, 0, "model:")
    number = int(val)
    val, i = _take(lines, i, "score_mse:")
    score = float(val)
    terms = []
    while i < len(lines) and lines[i].startswith("term:"):
        val, i = _take(lines, i, "term:")
        terms.append(val)
    if not terms:
        raise ModelFormatError("record has no term lines")
    labels, coefs, rmses = [], [], []
    while i < len(lines) and lines[i].startswith("task:"):
        label, i = _take(lines, i, "task:")
        cval, i = _take(lines, i, "coefficients:")
        row = np.array([float(c) for c in cval.split()], dtype=np.float64)
        if row.shape[0] != len(terms) + 1:
            raise ModelFormatError(
                f"task {label!r} has {row.shape[0]} coefficients, expected {len(terms) + 1}"
            )
        rval, i = _take(lines, i, "rmse:")
        labels.append(label)
        coefs.append(row)
        rmses.append(float(rval))
    if not labels:
        raise ModelFormatError("record has no task blocks")
    if i != len(lines):
        raise ModelFormatError(f"trailing content in record: {lines[i]!r}")
    return ParsedModel(
        number=number,
        score=score,
        terms=terms,
        task_labels=labels,
        coefficients=np.vstack(coefs),
        rmse_per_task=np.array(rmses, dtype=np.float64),
    )


def write_models_file(path, models: list[Model], dimension: int, precision: str, config_digest: str, property_key: str):
    """Write ranked models for one descriptor dimension."""
    header = [
        "# analytical descriptor models",
        f"# dimension: {dimension}",
        f"# precision: {precision}",
        f"# config: {config_digest}",
        f"# property: {property_key}",
        "# score is mean squared error pooled over tasks; coefficient order matches the term lines, intercept last",
    ]
    blocks = [serialize_model(m, i + 1) for i, m in enumerate(models)]
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n\n")
        fh.write("\n\n".join(blocks))
        if blocks:
            fh.write("\n")


def read_models_file(path) -> tuple[dict, list[ParsedModel]]:
    """Parse a models file back into header metadata and records."""
    with open(path) as fh:
        text = fh.read()
    meta = {}
    body = []
    for ln in text.splitlines():
        if ln.startswith("#"):
            stripped = ln[1:].strip()
            if ":" in stripped:
                k, v = stripped.split(":", 1)
                meta[k.strip()] = v.strip()
        else:
            body.append(ln)
    records = []
    for block in "\n".join(body).split("\n\n"):
        if block.strip():
            records.append(parse_model_record(block))
    return meta, records
