"""Sure-independence screening by correlation projection.

Features are ranked by the magnitude of their Pearson correlation with one
or more target vectors. With multiple tasks the correlation is computed
per task on that task's samples and averaged with sample-count weights;
with multiple targets (residuals of several models) a feature gets the
best of its per-target scores. Selection keeps the top n_sis_select
features not chosen in an earlier iteration.

Scores are always accumulated in float64, and the running top list is
ordered by (score descending, canonical key ascending), so the selection
is reproducible for any chunk size and worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DescsearchError
from .expressions import Expression
from .generation import FeatureSpace


class DegenerateInput(DescsearchError):
    """A correlation was requested against a constant or empty vector."""


class EmptySpace(DescsearchError):
    """Screening found no new valid candidate to select from."""


class ScreeningTarget:
    """Target vectors plus the task partition of the sample axis.

    targets: one or more float64 vectors of length n_samples.
    task_slices: index arrays partitioning range(n_samples); a single
    task covering everything when omitted.
    """

    def __init__(self, targets, task_slices=None, labels=None):
        self.targets = [np.ascontiguousarray(t, dtype=np.float64) for t in targets]
        if not self.targets:
            raise ValueError("at least one target vector is required")
        n = self.targets[0].shape[0]
        for t in self.targets:
            if t.ndim != 1 or t.shape[0] != n:
                raise ValueError("all target vectors must share one length")
        if task_slices is None:
            task_slices = [np.arange(n)]
        self.task_slices = [np.asarray(s, dtype=np.intp) for s in task_slices]
        joined = np.sort(np.concatenate(self.task_slices)) if self.task_slices else np.empty(0, np.intp)
        if joined.shape[0] != n or not np.array_equal(joined, np.arange(n)):
            raise ValueError("task_slices must partition the sample axis")
        self.n_samples = n
        self.labels = list(labels) if labels is not None else [str(i) for i in range(len(self.task_slices))]

    @staticmethod
    def from_property(property_values, task_slices=None, labels=None) -> "ScreeningTarget":
        return ScreeningTarget([property_values], task_slices, labels)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation coefficient of two vectors.

    Sums are accumulated in exact rational arithmetic, so inputs that are
    exactly affinely related return exactly +1.0 or -1.0; everything else
    is rounded once at the end and clamped into [-1, 1]. Raises
    DegenerateInput for vectors shorter than two samples or with zero
    spread, where the coefficient is undefined.
    """
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise ValueError("pearson expects two equal-length vectors")
    n = xv.shape[0]
    if n < 2:
        raise DegenerateInput("need at least two samples")
    fx = [Fraction(float(v)) for v in xv]
    fy = [Fraction(float(v)) for v in yv]
    mx = sum(fx) / n
    my = sum(fy) / n
    sxy = sxx = syy = Fraction(0)
    for a, b in zip(fx, fy):
        da = a - mx
        db = b - my
        sxy += da * db
        sxx += da * da
        syy += db * db
    if sxx == 0 or syy == 0:
        raise DegenerateInput("constant input vector")
    if sxy * sxy == sxx * syy:
        return 1.0 if sxy > 0 else -1.0
    r = float(sxy) / math.sqrt(float(sxx) * float(syy))
    return min(1.0, max(-1.0, r))


def _pairwise_rowsum(a: np.ndarray) -> np.ndarray:
    """Sum over the last axis with a fixed-shape pairwise tree.

    numpy's own reductions (and BLAS products) pick internal paths by
    array shape, so the same row can sum to values a ulp apart in chunks
    of different heights. Here the tree depends only on the axis length:
    pad with zeros to a power of two, then halve by adding neighbours.
    """
    n = a.shape[-1]
    lead = a.shape[:-1]
    if n == 0:
        return np.zeros(lead)
    width = 1
    while width < n:
        width *= 2
    if width != n:
        padded = np.zeros(lead + (width,))
        padded[..., :n] = a
        a = padded
    while a.shape[-1] > 1:
        a = a[..., 0::2] + a[..., 1::2]
    return a[..., 0]


def _chunk_scores(matrix: np.ndarray, target: ScreeningTarget) -> np.ndarray:
    """Projection scores for a (features, samples) chunk, in float64.

    Bitwise identical per feature for any chunk height, so selection
    cannot depend on how the candidate stream was batched.
    """
    F = np.asarray(matrix, dtype=np.float64)
    k = F.shape[0]
    total = float(target.n_samples)
    best = np.zeros(k)
    for tvec in target.targets:
        acc = np.zeros(k)
        for sl in target.task_slices:
            ns = sl.shape[0]
            w = ns / total
            y = tvec[sl]
            yc = y - _pairwise_rowsum(y) / ns
            sy = float(_pairwise_rowsum(yc * yc))
            if sy == 0.0:
                continue
            X = F[:, sl]
            Xc = X - (_pairwise_rowsum(X) / ns)[:, None]
            num = _pairwise_rowsum(Xc * yc)
            den = np.sqrt(_pairwise_rowsum(Xc * Xc) * sy)
            good = den > 0.0
            r = np.zeros(k)
            np.divide(np.abs(num), den, out=r, where=good)
            acc += w * r
        np.maximum(best, acc, out=best)
    return np.clip(best, 0.0, 1.0)


def projection_score(feature_values: np.ndarray, target: ScreeningTarget) -> float:
    """Score of one feature vector; degenerate task slices contribute zero."""
    v = np.asarray(feature_values, dtype=np.float64)
    return float(_chunk_scores(v[None, :], target)[0])


@dataclass(frozen=True)
class SubspaceEntry:
    expression: Expression
    score: float
    values: np.ndarray


class SelectedSubspace:
    """Accumulated union of screened features across descriptor iterations."""

    def __init__(self, entries=None):
        self.entries: list[SubspaceEntry] = list(entries) if entries else []

    def __len__(self):
        return len(self.entries)

    def keys(self) -> set[str]:
        return {e.expression.key for e in self.entries}

    @property
    def expressions(self) -> list[Expression]:
        return [e.expression for e in self.entries]

    @property
    def scores(self) -> list[float]:
        return [e.score for e in self.entries]

    def values_matrix(self, dtype=None) -> np.ndarray:
        if not self.entries:
            raise EmptySpace("subspace is empty")
        mat = np.stack([e.values for e in self.entries])
        return mat if dtype is None else mat.astype(dtype, copy=False)

    def extended(self, new_entries) -> "SelectedSubspace":
        return SelectedSubspace(self.entries + list(new_entries))


def sis_select(
    source,
    target: ScreeningTarget,
    n_sis_select: int,
    already_selected: SelectedSubspace | None = None,
    workers: int = 1,
    chunk_size: int = 65536,
) -> SelectedSubspace:
    """Screen a candidate stream and grow the selected subspace.

    source is either a FeatureSpace or an iterable of (expressions,
    value_matrix) chunks; chunks must not repeat canonical keys, which
    both the materialized pool and the streamed enumeration guarantee.
    Returns a new SelectedSubspace whose tail holds up to n_sis_select
    new entries ordered by (score descending, canonical key ascending).
    Raises EmptySpace when the stream offers no new candidate at all.
    """
    if n_sis_select < 1:
        raise ValueError("n_sis_select must be positive")
    prior = already_selected if already_selected is not None else SelectedSubspace()
    taken = prior.keys()
    chunks = source.iter_batches(chunk_size) if isinstance(source, FeatureSpace) else iter(source)

    buffer: list[tuple[float, str, Expression, np.ndarray]] = []
    n_new_seen = 0

    def fold(exprs, matrix, scores):
        nonlocal n_new_seen, buffer
        for i, expr in enumerate(exprs):
            if expr.key in taken:
                continue
            n_new_seen += 1
            buffer.append((float(scores[i]), expr.key, expr, np.array(matrix[i], copy=True)))
        if len(buffer) > n_sis_select:
            buffer.sort(key=lambda item: (-item[0], item[1]))
            del buffer[n_sis_select:]

    if workers <= 1:
        for exprs, matrix in chunks:
            fold(exprs, matrix, _chunk_scores(matrix, target))
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            pending = []
            for exprs, matrix in chunks:
                pending.append((exprs, matrix, ex.submit(_chunk_scores, matrix, target)))
                if len(pending) >= workers * 2:
                    e0, m0, f0 = pending.pop(0)
                    fold(e0, m0, f0.result())
            for e0, m0, f0 in pending:
                fold(e0, m0, f0.result())

    if n_new_seen == 0:
        raise EmptySpace("no unselected candidates in the screened space")
    buffer.sort(key=lambda item: (-item[0], item[1]))
    del buffer[n_sis_select:]
    new_entries = [SubspaceEntry(expr, score, vals) for score, _, expr, vals in buffer]
    return prior.extended(new_entries)
