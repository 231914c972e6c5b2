"""End-to-end descriptor search over a dataset.

For each descriptor dimension d the pipeline screens the full candidate
feature space against the current targets (the property at d=1, then the
residuals of the best lower-dimensional models), grows the selected
subspace, and exhaustively searches all d-combinations of it. Wall time
is attributed to three phases: feature generation, screening, and
descriptor search. When the last rung is streamed rather than stored,
the enumeration work that happens inside the screening scan is still
charged to feature generation via an internal timer.
"""

from __future__ import annotations

import itertools
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset, RunConfig, config_digest
from .errors import ConfigError, DescsearchError
from .expressions import get_operator
from .generation import (
    FeatureSpace,
    GenerationConfig,
    RungStats,
    generate_rung,
    iter_final_rung,
)
from .models import Model, residuals, write_models_file
from .screening import ScreeningTarget, SelectedSubspace, sis_select
from .search import L0Config, SearchStats, l0_search

_SIS_CHUNK_CAP = 65536


class SearchFailed(DescsearchError):
    """No finite-scoring model exists at some dimension."""


class _Accumulator:
    def __init__(self):
        self.total = 0.0

    def add(self, dt: float):
        self.total += dt


@dataclass
class PhaseTimings:
    feature_generation: float = 0.0
    screening: float = 0.0
    descriptor_search: float = 0.0
    total: float = 0.0

    @property
    def other(self) -> float:
        rest = self.total - self.feature_generation - self.screening - self.descriptor_search
        return max(rest, 0.0)

    def rows(self):
        return [
            ("feature_generation", self.feature_generation),
            ("screening", self.screening),
            ("descriptor_search", self.descriptor_search),
            ("other", self.other),
            ("total", self.total),
        ]


@dataclass
class DimensionResult:
    dimension: int
    models: list[Model]
    subspace_size: int
    quota: int
    search_stats: SearchStats


@dataclass
class RunResult:
    dimensions: list[DimensionResult]
    subspace: SelectedSubspace
    timings: PhaseTimings
    rung_stats: list[RungStats]
    pool_size: int
    task_labels: list[str]

    @property
    def total_tuples(self) -> int:
        return sum(d.search_stats.n_tuples for d in self.dimensions)

    @property
    def tuples_per_second(self) -> float:
        secs = self.timings.descriptor_search
        return self.total_tuples / secs if secs > 0 else 0.0


def sis_quota(iteration: int, dimension: int, n_sis_select: int, accounting: str) -> int:
    """New features the screening may add at this iteration.

    per_iteration grants n_sis_select every time; total spreads
    n_sis_select across all iterations so the final union holds at most
    n_sis_select features.
    """
    if accounting == "per_iteration":
        return n_sis_select
    hi = (n_sis_select * iteration) // dimension
    lo = (n_sis_select * (iteration - 1)) // dimension
    return hi - lo


def check_run(dataset: Dataset, config: RunConfig) -> None:
    """Cross-checks between dataset and configuration."""
    labels, slices = dataset.task_partition()
    need = config.dimension + 2
    for lab, sl in zip(labels, slices):
        if len(sl) < need:
            raise ConfigError(
                f"task {lab!r} has {len(sl)} samples; dimension {config.dimension} "
                f"needs at least {need} per task"
            )
    if config.subspace_accounting == "total" and config.n_sis_select < config.dimension:
        raise ConfigError(
            "n_sis_select: total accounting needs at least one feature per iteration, "
            f"got {config.n_sis_select} for dimension {config.dimension}"
        )


def _generation_config(config: RunConfig) -> GenerationConfig:
    return GenerationConfig(
        operators=[get_operator(k) for k in config.operators],
        max_rung=config.max_rung,
        min_abs_value=config.min_abs_value,
        max_abs_value=config.max_abs_value,
        materialize_last_rung=config.materialize_last_rung,
        value_batch_size=config.value_batch_size,
        dedup_tolerance=config.dedup_tolerance,
        max_materialized_features=config.max_materialized_features,
    )


def run_pipeline(dataset: Dataset, config: RunConfig, progress=None) -> RunResult:
    """Run the full search and return every per-dimension result."""

    def say(msg):
        if progress is not None:
            progress(msg)

    check_run(dataset, config)
    t_begin = time.perf_counter()
    timings = PhaseTimings()
    gcfg = _generation_config(config)
    streamed = (not config.materialize_last_rung) and config.max_rung >= 1
    materialized_rungs = config.max_rung - 1 if streamed else config.max_rung

    pool = FeatureSpace.from_primaries(
        dataset.primary_names,
        dataset.primary_units,
        dataset.primary_values,
        precision=config.precision,
        dedup_tolerance=config.dedup_tolerance,
    )
    rung_stats: list[RungStats] = []
    t0 = time.perf_counter()
    for r in range(1, materialized_rungs + 1):
        st = generate_rung(pool, r, gcfg, workers=config.workers)
        rung_stats.append(st)
        say(f"rung {r}: kept {st.n_kept} of {st.n_pairs} candidates, pool {len(pool)}")
    timings.feature_generation += time.perf_counter() - t0

    labels, slices = dataset.task_partition()
    y = np.asarray(dataset.property_values, dtype=np.float64)
    sis_chunk = min(config.value_batch_size, _SIS_CHUNK_CAP)

    subspace = SelectedSubspace()
    dims: list[DimensionResult] = []
    targets = [y]
    for d in range(1, config.dimension + 1):
        quota = sis_quota(d, config.dimension, config.n_sis_select, config.subspace_accounting)
        target = ScreeningTarget(targets, slices, labels)
        t0 = time.perf_counter()
        if streamed:
            fc_timer = _Accumulator()
            stream_stats = RungStats(rung=config.max_rung)
            source = itertools.chain(
                pool.iter_batches(sis_chunk),
                iter_final_rung(pool, gcfg, config.workers, fc_timer, stream_stats),
            )
            subspace = sis_select(
                source, target, quota, subspace, workers=config.workers, chunk_size=sis_chunk
            )
            dt = time.perf_counter() - t0
            timings.feature_generation += fc_timer.total
            timings.screening += dt - fc_timer.total
            if d == 1:
                rung_stats.append(stream_stats)
        else:
            subspace = sis_select(
                pool, target, quota, subspace, workers=config.workers, chunk_size=sis_chunk
            )
            timings.screening += time.perf_counter() - t0
        say(f"dimension {d}: subspace holds {len(subspace)} features")

        if len(subspace) < d:
            raise SearchFailed(
                f"subspace holds {len(subspace)} features, cannot form {d}-tuples"
            )
        l0cfg = L0Config(
            dimension=d,
            batch_size=config.l0_batch_size,
            precision=config.precision,
            n_models_store=config.n_models_store,
            autotune=config.autotune,
            chunk_candidates=tuple(config.chunk_candidates),
        )
        stats = SearchStats()
        t0 = time.perf_counter()
        models = l0_search(
            subspace,
            y,
            slices,
            l0cfg,
            workers=config.workers,
            task_labels=labels,
            stats=stats,
        )
        timings.descriptor_search += time.perf_counter() - t0
        if not models:
            raise SearchFailed(f"every {d}-tuple was rank deficient")
        say(
            f"dimension {d}: best score {models[0].score:.6e} over {stats.n_tuples} tuples "
            f"({stats.tuples_per_second:.3g}/s)"
        )
        dims.append(DimensionResult(d, models, len(subspace), quota, stats))
        if d < config.dimension:
            res = residuals(models, y, dataset.primary_values, slices, config.n_residual)
            targets = res

    timings.total = time.perf_counter() - t_begin
    return RunResult(
        dimensions=dims,
        subspace=subspace,
        timings=timings,
        rung_stats=rung_stats,
        pool_size=len(pool),
        task_labels=labels,
    )


def write_outputs(result: RunResult, config: RunConfig, output_dir: str) -> list[str]:
    """Write models_dim<d>.txt for every dimension plus timings.txt."""
    os.makedirs(output_dir, exist_ok=True)
    digest = config_digest(config)
    paths = []
    for dim in result.dimensions:
        path = os.path.join(output_dir, f"models_dim{dim.dimension}.txt")
        write_models_file(
            path, dim.models, dim.dimension, config.precision, digest, config.property_key
        )
        paths.append(path)
    tpath = os.path.join(output_dir, "timings.txt")
    with open(tpath, "w") as fh:
        fh.write("phase,seconds\n")
        for name, secs in result.timings.rows():
            fh.write(f"{name},{secs:.6f}\n")
    paths.append(tpath)
    return paths
