"""Exhaustive best-subset descriptor search over a screened subspace.

Every n-combination of subspace features is scored by least squares
against the property, one task at a time, and the lowest pooled
mean-squared-error tuples win. Combinations are identified by their
lexicographic rank, enumerated in batches with a successor kernel, and
reduced through per-worker top lists merged by (score, rank); that order
is total, so results are identical for any batch size and worker count,
and a tie on the score goes to the lexicographically smallest tuple.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import CapacityError, DescsearchError
from .lsq import RANK_TOL_FACTOR, fill_combinations, fit_tuple_kernel, score_tuples
from .models import Model
from .screening import SelectedSubspace


class RankOutOfRange(DescsearchError):
    """A combination rank outside [0, C(m, n)) was requested."""


class RankDeficient(DescsearchError):
    """The requested tuple's least-squares system is numerically singular."""


@dataclass
class L0Config:
    dimension: int
    batch_size: int = 131072
    precision: str = "fp64"
    n_models_store: int = 10
    autotune: bool = True
    chunk_candidates: tuple[int, ...] = (4096, 16384, 65536)


@dataclass
class SearchStats:
    """Filled by l0_search when passed in: throughput bookkeeping."""

    n_tuples: int = 0
    seconds: float = 0.0
    chosen_chunk: int = 0
    batch_seconds: list[float] = field(default_factory=list)

    @property
    def tuples_per_second(self) -> float:
        return self.n_tuples / self.seconds if self.seconds > 0 else 0.0


def count_models(m: int, n: int) -> int:
    """Number of distinct n-feature descriptors over m features, C(m, n)."""
    if n < 1 or m < 0:
        raise ValueError("need m >= 0 and n >= 1")
    return comb(m, n)


def unrank_tuple(rank: int, m: int, n: int) -> tuple[int, ...]:
    """The rank-th strictly increasing n-tuple in lexicographic order."""
    total = count_models(m, n)
    if not 0 <= rank < total:
        raise RankOutOfRange(f"rank {rank} outside [0, {total})")
    out = []
    r = rank
    nxt = 0
    for k in range(n):
        remaining = n - k - 1
        e = nxt
        while True:
            c = comb(m - 1 - e, remaining)
            if r < c:
                break
            r -= c
            e += 1
        out.append(e)
        nxt = e + 1
    return tuple(out)


def rank_tuple(tup, m: int, n: int) -> int:
    """Inverse of unrank_tuple."""
    tup = tuple(tup)
    if len(tup) != n:
        raise ValueError(f"expected {n} indices, got {len(tup)}")
    prev = -1
    for e in tup:
        if not prev < e < m:
            raise RankOutOfRange(f"tuple {tup} is not strictly increasing within range")
        prev = e
    r = 0
    nxt = 0
    for k, e in enumerate(tup):
        for v in range(nxt, e):
            r += comb(m - 1 - v, n - k - 1)
        nxt = e + 1
    return r


def _as_matrix(subspace):
    if isinstance(subspace, SelectedSubspace):
        return subspace.values_matrix(), subspace.expressions
    return np.asarray(subspace), None


def _prepare(values, property_values, task_slices, precision):
    """Cast to working precision and permute samples task-contiguously."""
    dtype = np.float32 if precision == "fp32" else np.float64
    s = values.shape[1]
    if task_slices is None:
        task_slices = [np.arange(s)]
    perm = np.concatenate([np.asarray(sl, dtype=np.intp) for sl in task_slices])
    if perm.shape[0] != s or not np.array_equal(np.sort(perm), np.arange(s)):
        raise ValueError("task_slices must partition the sample axis")
    sizes = [len(sl) for sl in task_slices]
    bounds = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=bounds[1:])
    vals = np.ascontiguousarray(np.asarray(values)[:, perm], dtype=dtype)
    y = np.ascontiguousarray(np.asarray(property_values, dtype=np.float64)[perm], dtype=dtype)
    return vals, y, bounds, task_slices


def _labels_for(task_slices, task_labels):
    if task_labels is not None:
        return tuple(task_labels)
    return tuple(str(i) for i in range(len(task_slices)))


def fit_tuple(
    tup,
    subspace,
    property_values,
    task_slices=None,
    precision: str = "fp64",
    task_labels=None,
) -> Model:
    """Fit one feature tuple and return the full model record.

    Raises RankDeficient when any task's design matrix is singular at the
    working precision's tolerance.
    """
    values, expressions = _as_matrix(subspace)
    m = values.shape[0]
    n = len(tup)
    rank_tuple(tup, m, n)
    vals, y, bounds, slices = _prepare(values, property_values, task_slices, precision)
    ntasks = len(slices)
    coef = np.empty((ntasks, n + 1), dtype=vals.dtype)
    ssr = np.empty(ntasks, dtype=np.float64)
    ok = fit_tuple_kernel(
        vals, y, bounds, np.asarray(tup, dtype=np.int64), RANK_TOL_FACTOR[precision], coef, ssr
    )
    if not ok:
        raise RankDeficient(f"singular least-squares system for tuple {tuple(tup)}")
    sizes = np.diff(bounds).astype(np.float64)
    model = Model(
        indices=tuple(int(i) for i in tup),
        expressions=tuple(expressions[i] for i in tup) if expressions is not None else None,
        coefficients=coef.astype(np.float64),
        score=float(ssr.sum() / vals.shape[1]),
        rmse_per_task=np.sqrt(ssr / sizes),
        task_labels=_labels_for(slices, task_labels),
    )
    return model


def _scan_range(start, stop, inner, vals, y, bounds, m, n, tolf, keep):
    """Score ranks [start, stop); return the local top-keep (score, rank) list."""
    best: list[tuple[float, int]] = []
    cur = np.array(unrank_tuple(start, m, n), dtype=np.int64)
    buf = np.empty((min(inner, stop - start), n), dtype=np.int64)
    scores = np.empty(buf.shape[0], dtype=np.float64)
    pos = start
    while pos < stop:
        cnt = min(inner, stop - pos)
        fill_combinations(cur, m, buf, cnt)
        score_tuples(vals, y, bounds, buf[:cnt], tolf, scores[:cnt])
        sl = scores[:cnt]
        if cnt > keep:
            cand = np.argpartition(sl, keep - 1)[:keep]
            cand.sort()
        else:
            cand = np.arange(cnt)
        for i in cand:
            sc = sl[i]
            if np.isfinite(sc):
                best.append((float(sc), pos + int(i)))
        if len(best) > keep:
            best.sort(key=lambda t: (t[0], t[1]))
            del best[keep:]
        pos += cnt
    return best


def l0_search(
    subspace,
    property_values,
    task_slices=None,
    config: L0Config | None = None,
    workers: int = 1,
    task_labels=None,
    stats: SearchStats | None = None,
) -> list[Model]:
    """Score every n-combination and return the best models, ranked.

    subspace is a SelectedSubspace or a raw (features, samples) matrix.
    Returns up to n_models_store models ordered by (score, rank); tuples
    whose system is rank deficient score +inf and are never returned.
    """
    if config is None:
        raise ValueError("config is required")
    values, expressions = _as_matrix(subspace)
    m = values.shape[0]
    n = config.dimension
    if m < n:
        raise ValueError(f"subspace holds {m} features, need at least {n}")
    total = count_models(m, n)
    if total >= 2 ** 63:
        raise CapacityError(f"{total} candidate tuples exceed the enumerable range")
    vals, y, bounds, slices = _prepare(values, property_values, task_slices, precision=config.precision)
    tolf = RANK_TOL_FACTOR[config.precision]
    keep = max(1, config.n_models_store)
    batch = max(1, config.batch_size)
    t_begin = time.perf_counter()

    candidates = [c for c in config.chunk_candidates if c >= 1]
    if not candidates:
        candidates = [16384]
    inner = min(candidates[0], batch)
    first_stop = min(batch, total)
    merged: list[tuple[float, int]] = []
    if config.autotune and len(candidates) > 1 and first_stop > 0:
        timings = []
        first_result: list[tuple[float, int]] = []
        for c in candidates:
            t0 = time.perf_counter()
            first_result = _scan_range(0, first_stop, min(c, batch), vals, y, bounds, m, n, tolf, keep)
            timings.append((time.perf_counter() - t0, min(c, batch)))
        inner = min(timings)[1]
        merged.extend(first_result)
        if stats is not None:
            stats.batch_seconds.extend(t for t, _ in timings)
    elif first_stop > 0:
        t0 = time.perf_counter()
        merged.extend(_scan_range(0, first_stop, inner, vals, y, bounds, m, n, tolf, keep))
        if stats is not None:
            stats.batch_seconds.append(time.perf_counter() - t0)
    if stats is not None:
        stats.chosen_chunk = inner

    next_start = first_stop
    if next_start < total:
        lock = threading.Lock()
        cursor = [next_start]

        def worker():
            local: list[tuple[float, int]] = []
            while True:
                with lock:
                    start = cursor[0]
                    if start >= total:
                        return local
                    stop = min(start + batch, total)
                    cursor[0] = stop
                t0 = time.perf_counter()
                part = _scan_range(start, stop, inner, vals, y, bounds, m, n, tolf, keep)
                if stats is not None:
                    with lock:
                        stats.batch_seconds.append(time.perf_counter() - t0)
                local.extend(part)
                if len(local) > keep:
                    local.sort(key=lambda t: (t[0], t[1]))
                    del local[keep:]

        if workers <= 1:
            merged.extend(worker())
        else:
            threads = []
            results: list[list] = []
            out_lock = threading.Lock()

            def run():
                got = worker()
                with out_lock:
                    results.append(got)

            for _ in range(workers):
                th = threading.Thread(target=run)
                th.start()
                threads.append(th)
            for th in threads:
                th.join()
            for part in results:
                merged.extend(part)

    merged.sort(key=lambda t: (t[0], t[1]))
    del merged[keep:]
    elapsed = time.perf_counter() - t_begin
    if stats is not None:
        stats.n_tuples = total
        stats.seconds = elapsed

    out = []
    for score, rank in merged:
        tup = unrank_tuple(rank, m, n)
        model = fit_tuple(
            tup,
            subspace if expressions is not None else values,
            property_values,
            task_slices,
            config.precision,
            task_labels,
        )
        out.append(model)
    return out
