"""Rung-by-rung construction of the analytical feature space.

The pool starts with the primary features (rung 0). Each later rung r is
built by applying every configured operator to stored features so that the
deepest child has rung r-1, keeping only unit-consistent candidates whose
value vectors are finite, inside the magnitude window, and not duplicates
of anything generated before. Duplicate detection uses canonical keys
(algebraic identity up to commutative argument order) plus a fingerprint
of the value vector rounded to dedup_tolerance.

The final rung can either be materialized like the others or streamed in
chunks to a consumer without ever being stored, which keeps peak memory at
the size of the next-to-last pool. Both paths enumerate candidates in the
same deterministic order and share one dedup state, so they produce the
same surviving features.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .expressions import (
    Expression,
    Operator,
    apply,
    apply_operator_values,
    check_unit,
    primary,
)
from .units import Unit


@dataclass
class GenerationConfig:
    operators: list[Operator]
    max_rung: int
    min_abs_value: float = 1e-5
    max_abs_value: float = 1e8
    materialize_last_rung: bool = True
    value_batch_size: int = 1_000_000
    dedup_tolerance: float = 1e-12
    max_materialized_features: int | None = None


@dataclass
class RungStats:
    """Bookkeeping for one generated rung."""

    rung: int
    n_pairs: int = 0
    n_invalid: int = 0
    n_dup_key: int = 0
    n_dup_value: int = 0
    n_kept: int = 0


@dataclass
class CandidatePairList:
    """Child index pairs for one operator at one target rung.

    Unary operators use pairs of the form (i, None). The order is fixed:
    first index ascending, second index ascending within it.
    """

    operator: Operator
    pairs: list[tuple[int, int | None]] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)


def value_fingerprint(values: np.ndarray, tolerance: float) -> bytes:
    """Digest of the value vector rounded to the dedup tolerance.

    Vectors equal after rounding share a fingerprint regardless of storage
    precision. Negative zero is normalized so it cannot split a bucket.
    """
    v = np.ascontiguousarray(values, dtype=np.float64)
    if tolerance > 0.0:
        v = np.round(v / tolerance)
    v = v + 0.0
    return hashlib.blake2b(v.tobytes(), digest_size=16).digest()


def validate_values(values: np.ndarray, config: GenerationConfig) -> bool:
    """True when a candidate's value vector survives the validity rules.

    Rejects any non-finite entry, a largest magnitude outside
    [min_abs_value, max_abs_value], and effectively constant vectors whose
    spread does not exceed dedup_tolerance.
    """
    v = np.asarray(values)
    if not np.isfinite(v).all():
        return False
    mx = float(np.max(np.abs(v)))
    if mx > config.max_abs_value or mx < config.min_abs_value:
        return False
    return float(np.max(v) - np.min(v)) > config.dedup_tolerance


def _validity_mask(matrix: np.ndarray, config: GenerationConfig) -> np.ndarray:
    finite = np.isfinite(matrix).all(axis=1)
    with np.errstate(invalid="ignore", over="ignore"):
        absmax = np.abs(matrix).max(axis=1)
        spread = matrix.max(axis=1) - matrix.min(axis=1)
        ok = (
            finite
            & (absmax <= config.max_abs_value)
            & (absmax >= config.min_abs_value)
            & (spread > config.dedup_tolerance)
        )
    return ok


class FeatureSpace:
    """Materialized pool of features with their value vectors.

    Features are stored in generation order, grouped rung after rung, and
    the pool keeps the canonical-key set and value-fingerprint set used
    for deduplication.
    """

    def __init__(self, n_samples: int, dtype=np.float64, dedup_tolerance: float = 1e-12):
        self.n_samples = n_samples
        self.dtype = np.dtype(dtype)
        self.dedup_tolerance = dedup_tolerance
        self.features: list[Expression] = []
        self.values: list[np.ndarray] = []
        self._has_zero: list[bool] = []
        self._keys: set[str] = set()
        self._fingerprints: set[bytes] = set()
        self._rung_indices: list[list[int]] = []

    @staticmethod
    def from_primaries(
        names: list[str],
        units: list[Unit],
        primary_values: np.ndarray,
        precision: str = "fp64",
        dedup_tolerance: float = 1e-12,
    ) -> "FeatureSpace":
        """Seed a pool with rung-0 leaves. Primaries bypass validity rules."""
        x = np.asarray(primary_values, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(names):
            raise ValueError("primary_values must be (samples, primaries)")
        dtype = np.float32 if precision == "fp32" else np.float64
        pool = FeatureSpace(x.shape[0], dtype=dtype, dedup_tolerance=dedup_tolerance)
        for i, (name, unit) in enumerate(zip(names, units)):
            expr = primary(i, name, unit)
            pool._append(expr, np.ascontiguousarray(x[:, i], dtype=dtype))
        return pool

    def __len__(self):
        return len(self.features)

    def rung_of(self, i: int) -> int:
        return self.features[i].rung

    def rung_indices(self, rung: int) -> list[int]:
        if rung >= len(self._rung_indices):
            return []
        return self._rung_indices[rung]

    def max_rung(self) -> int:
        return len(self._rung_indices) - 1

    def contains_key(self, key: str) -> bool:
        return key in self._keys

    def contains_fingerprint(self, fp: bytes) -> bool:
        return fp in self._fingerprints

    def _append(self, expr: Expression, values: np.ndarray):
        idx = len(self.features)
        self.features.append(expr)
        self.values.append(values)
        self._has_zero.append(bool((values == 0).any()))
        self._keys.add(expr.key)
        self._fingerprints.add(value_fingerprint(values, self.dedup_tolerance))
        while len(self._rung_indices) <= expr.rung:
            self._rung_indices.append([])
        self._rung_indices[expr.rung].append(idx)

    def values_matrix(self, indices=None) -> np.ndarray:
        sel = range(len(self)) if indices is None else indices
        return np.stack([self.values[i] for i in sel]) if len(self) else np.empty((0, self.n_samples), self.dtype)

    def iter_batches(self, batch_size: int):
        """Yield (expressions, value matrix) slices in storage order."""
        for start in range(0, len(self), batch_size):
            stop = min(start + batch_size, len(self))
            yield self.features[start:stop], np.stack(self.values[start:stop])

    def dedup_state(self) -> tuple[set[str], set[bytes]]:
        """Copies of the key and fingerprint sets, for streamed enumeration."""
        return set(self._keys), set(self._fingerprints)


def generate_pairs(operator: Operator, pool: FeatureSpace, target_rung: int) -> CandidatePairList:
    """Enumerate child index pairs producing rung target_rung candidates.

    Binary operators pair any stored features whose deeper rung is exactly
    target_rung - 1; commutative ones emit each unordered pair once with
    i <= j. Pairs that would break unit rules are dropped here, and div
    never takes a second child whose values contain an exact zero.
    """
    prev = target_rung - 1
    if prev < 0:
        raise ValueError("target_rung must be at least 1")
    out = CandidatePairList(operator)
    feats = pool.features
    if operator.arity == 1:
        for i in pool.rung_indices(prev):
            if check_unit(operator, (feats[i].unit,)) is not None:
                out.pairs.append((i, None))
        return out

    eligible = [i for i in range(len(pool)) if feats[i].rung <= prev]
    units = [feats[i].unit for i in eligible]
    rungs = [feats[i].rung for i in eligible]
    is_div = operator.kind == "div"
    has_zero = pool._has_zero
    pairs = out.pairs
    for a, i in enumerate(eligible):
        ri = rungs[a]
        b_start = a if operator.commutative else 0
        for b in range(b_start, len(eligible)):
            if max(ri, rungs[b]) != prev:
                continue
            j = eligible[b]
            if is_div and has_zero[j]:
                continue
            if check_unit(operator, (units[a], units[b])) is None:
                continue
            pairs.append((i, j))
    return out


def _chunk_values(pool_values, kind: str, pairs_chunk):
    cols = []
    for i, j in pairs_chunk:
        if j is None:
            cols.append(apply_operator_values(kind, pool_values[i]))
        else:
            cols.append(apply_operator_values(kind, pool_values[i], pool_values[j]))
    return np.stack(cols)


def _iter_candidate_chunks(pool, pair_list, config, workers):
    """Yield (pairs_chunk, values, validity) in candidate order."""
    kind = pair_list.operator.kind
    pairs = pair_list.pairs
    batch = max(1, config.value_batch_size)
    values = pool.values
    if workers <= 1:
        for start in range(0, len(pairs), batch):
            chunk = pairs[start : start + batch]
            mat = _chunk_values(values, kind, chunk)
            yield chunk, mat, _validity_mask(mat, config)
        return
    with ThreadPoolExecutor(max_workers=workers) as ex:
        for start in range(0, len(pairs), batch):
            chunk = pairs[start : start + batch]
            step = max(1, (len(chunk) + workers - 1) // workers)
            parts = [chunk[k : k + step] for k in range(0, len(chunk), step)]
            mats = list(ex.map(lambda p: _chunk_values(values, kind, p), parts))
            mat = np.concatenate(mats) if len(mats) > 1 else mats[0]
            yield chunk, mat, _validity_mask(mat, config)


def _projected_pool_size(pool, config, target_rung) -> int:
    total = len(pool)
    for op in config.operators:
        total += len(generate_pairs(op, pool, target_rung))
    return total


def generate_rung(
    pool: FeatureSpace,
    target_rung: int,
    config: GenerationConfig,
    workers: int = 1,
) -> RungStats:
    """Extend the pool in place with all surviving rung target_rung features.

    Candidates are walked operator by operator in configuration order and
    evaluated in chunks of value_batch_size; survivors are appended in
    candidate order, so the result does not depend on workers or on the
    chunk size. Raises CapacityError when the projected pool size would
    exceed max_materialized_features.
    """
    stats = RungStats(rung=target_rung)
    if config.max_materialized_features is not None:
        projected = _projected_pool_size(pool, config, target_rung)
        if projected > config.max_materialized_features:
            raise CapacityError(
                f"rung {target_rung} may materialize {projected} features, "
                f"budget is {config.max_materialized_features}"
            )
    tol = config.dedup_tolerance
    for op in config.operators:
        pair_list = generate_pairs(op, pool, target_rung)
        stats.n_pairs += len(pair_list)
        for chunk, mat, ok in _iter_candidate_chunks(pool, pair_list, config, workers):
            for row, (i, j) in enumerate(chunk):
                if not ok[row]:
                    stats.n_invalid += 1
                    continue
                if j is None:
                    expr = apply(op, pool.features[i])
                else:
                    expr = apply(op, pool.features[i], pool.features[j])
                if pool.contains_key(expr.key):
                    stats.n_dup_key += 1
                    continue
                vals = np.ascontiguousarray(mat[row])
                if pool.contains_fingerprint(value_fingerprint(vals, tol)):
                    stats.n_dup_value += 1
                    continue
                pool._append(expr, vals)
                stats.n_kept += 1
    return stats


def iter_final_rung(
    pool: FeatureSpace,
    config: GenerationConfig,
    workers: int = 1,
    timer=None,
    stats: RungStats | None = None,
):
    """Generator over the surviving rung max_rung features, never stored.

    Yields (expressions, value_matrix) chunks in exactly the order
    generate_rung would have appended them. The dedup state starts from a
    copy of the pool's sets; only keys and fingerprints are retained while
    streaming, never the values. Time spent producing candidates is
    charged to timer (when given); whatever the consumer does between
    yields is not.
    """
    target_rung = config.max_rung
    if stats is None:
        stats = RungStats(rung=target_rung)
    keys, fingerprints = pool.dedup_state()
    tol = config.dedup_tolerance
    for op in config.operators:
        t0 = time.perf_counter()
        pair_list = generate_pairs(op, pool, target_rung)
        stats.n_pairs += len(pair_list)
        if timer is not None:
            timer.add(time.perf_counter() - t0)
        chunk_iter = _iter_candidate_chunks(pool, pair_list, config, workers)
        while True:
            t0 = time.perf_counter()
            item = next(chunk_iter, None)
            if item is None:
                if timer is not None:
                    timer.add(time.perf_counter() - t0)
                break
            chunk, mat, ok = item
            exprs = []
            rows = []
            for row, (i, j) in enumerate(chunk):
                if not ok[row]:
                    stats.n_invalid += 1
                    continue
                if j is None:
                    expr = apply(op, pool.features[i])
                else:
                    expr = apply(op, pool.features[i], pool.features[j])
                if expr.key in keys:
                    stats.n_dup_key += 1
                    continue
                fp = value_fingerprint(mat[row], tol)
                if fp in fingerprints:
                    stats.n_dup_value += 1
                    continue
                keys.add(expr.key)
                fingerprints.add(fp)
                exprs.append(expr)
                rows.append(row)
                stats.n_kept += 1
            out = np.ascontiguousarray(mat[rows]) if exprs else None
            if timer is not None:
                timer.add(time.perf_counter() - t0)
            if exprs:
                yield exprs, out


def stream_final_rung(
    pool: FeatureSpace,
    config: GenerationConfig,
    consumer,
    workers: int = 1,
    timer=None,
) -> RungStats:
    """Drive iter_final_rung through a consumer callback; returns stats."""
    stats = RungStats(rung=config.max_rung)
    for exprs, matrix in iter_final_rung(pool, config, workers, timer, stats):
        consumer(exprs, matrix)
    return stats


def count_upper_bound(n_primary: int, operator: Operator, rung: int) -> int:
    """Upper bound on new rung-r features from one commutative binary operator.

    Ignores validity and deduplication: with a pool of M features, one such
    operator can form M*(M+1)/2 unordered pairs, every one a potential new
    feature. The pool for the next rung is the old pool plus those. Exact
    integer arithmetic, so the result is valid at any magnitude.
    """
    if operator.arity != 2 or not operator.commutative:
        raise ValueError("count_upper_bound applies to commutative binary operators")
    if rung < 0:
        raise ValueError("rung must be non-negative")
    pool = n_primary
    new = n_primary
    for _ in range(1, rung + 1):
        new = pool * (pool + 1) // 2
        pool += new
    return new
