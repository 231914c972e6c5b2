"""Command line interface.

Subcommands:
  run       execute the configured search, write models and timings
  count     print feature-space upper bounds and model counts, no search
  validate  check the configuration and dataset without running
  bench     run on a synthetic dataset and print throughput

Exit codes: 0 on success, 1 for configuration or data errors, 2 for
runtime failures.
"""

from __future__ import annotations

import argparse
import sys

from .dataio import (
    MissingColumn,
    NonFiniteData,
    ParseError,
    load_config,
    load_dataset,
    make_synthetic_dataset,
    peek_primary_count,
    validate_config,
)
from .errors import ConfigError, DescsearchError
from .expressions import OPERATORS, get_operator, render
from .generation import count_upper_bound
from .pipeline import check_run, run_pipeline, sis_quota, write_outputs
from .search import count_models
from .units import UnitParseError, format_unit

# Bad inputs exit 1; failures of a well-formed run exit 2.
_INPUT_ERRORS = (
    ConfigError,
    ParseError,
    MissingColumn,
    NonFiniteData,
    UnitParseError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)


def _load_inputs(args):
    config = load_config(args.config)
    _apply_overrides(config, args)
    if config.data_file is None:
        raise ConfigError("data_file: required for this command")
    dataset = load_dataset(config.data_file, config.property_key, config.task_key)
    return config, dataset


def _apply_overrides(config, args):
    if getattr(args, "workers", None) is not None:
        config.workers = args.workers
    if getattr(args, "l0_batch_size", None) is not None:
        config.l0_batch_size = args.l0_batch_size
    if getattr(args, "precision", None) is not None:
        config.precision = args.precision
    if getattr(args, "output_dir", None) is not None:
        config.output_dir = args.output_dir
    if getattr(args, "no_plots", False):
        config.plots = False
    validate_config(config)


def cmd_run(args) -> int:
    config, dataset = _load_inputs(args)
    progress = (lambda m: print(m, file=sys.stderr)) if not args.quiet else None
    result = run_pipeline(dataset, config, progress=progress)
    paths = write_outputs(result, config, config.output_dir)
    if config.plots:
        from .report import render_figures

        paths += render_figures(result, dataset, config.output_dir)
    best = result.dimensions[-1].models[0]
    print(f"best {best.dimension}-feature model, mse {best.score:.12e}")
    for e in best.expressions:
        print(f"  term: {render(e)}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_count(args) -> int:
    config = load_config(args.config)
    if config.data_file is None:
        raise ConfigError("data_file: required to size the primary set")
    n_primary = peek_primary_count(config.data_file, config.property_key, config.task_key)
    print(f"primaries: {n_primary}")
    print("upper-bound new features per rung (unit rules and dedup ignored):")
    comm = [k for k in config.operators if OPERATORS[k].arity == 2 and OPERATORS[k].commutative]
    header = "  rung " + " ".join(f"{k:>12}" for k in comm)
    print(header)
    for r in range(1, config.max_rung + 1):
        cells = " ".join(f"{count_upper_bound(n_primary, get_operator(k), r):>12}" for k in comm)
        print(f"  {r:>4} {cells}")
    print("descriptor search sizes:")
    size = 0
    for d in range(1, config.dimension + 1):
        size += sis_quota(d, config.dimension, config.n_sis_select, config.subspace_accounting)
        print(f"  dimension {d}: subspace {size} -> {count_models(size, d)} tuples")
    return 0


def cmd_validate(args) -> int:
    config, dataset = _load_inputs(args)
    check_run(dataset, config)
    labels, slices = dataset.task_partition()
    print(f"config ok: {args.config}")
    print(f"data ok: {config.data_file}")
    print(f"  samples: {dataset.n_samples}")
    print(f"  primaries: {dataset.n_primary}")
    for name, unit in zip(dataset.primary_names, dataset.primary_units):
        u = format_unit(unit) or "dimensionless"
        print(f"    {name}: {u}")
    pu = format_unit(dataset.property_unit) or "dimensionless"
    print(f"  property: {dataset.property_name} ({pu})")
    print(f"  tasks: {len(labels)} " + " ".join(f"{l}={len(s)}" for l, s in zip(labels, slices)))
    print(f"  operators: {' '.join(config.operators)}")
    return 0


def cmd_bench(args) -> int:
    if args.config:
        config = load_config(args.config)
    else:
        from .dataio import config_from_mapping

        config = config_from_mapping(
            {
                "property_key": "target",
                "operators": ["add", "sub", "mul", "div", "sqrt"],
                "max_rung": 2,
                "dimension": 2,
                "n_sis_select": 200,
            }
        )
    _apply_overrides(config, args)
    dataset = make_synthetic_dataset(
        n_primary=args.primaries, n_samples=args.samples, n_tasks=args.tasks, seed=args.seed
    )
    progress = (lambda m: print(m, file=sys.stderr)) if not args.quiet else None
    result = run_pipeline(dataset, config, progress=progress)
    print(f"pool: {result.pool_size} features")
    print(f"subspace: {len(result.subspace)} features")
    for name, secs in result.timings.rows():
        print(f"{name}: {secs:.3f} s")
    print(f"tuples: {result.total_tuples}")
    print(f"tuples_per_second: {result.tuples_per_second:.0f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="descsearch", description=__doc__.strip().splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("-c", "--config", required=config_required, help="YAML configuration file")
        p.add_argument("--workers", type=int, help="override worker count")
        p.add_argument("--l0-batch-size", type=int, dest="l0_batch_size", help="override search batch size")
        p.add_argument("--precision", choices=["fp32", "fp64"], help="override working precision")
        p.add_argument("--output-dir", dest="output_dir", help="override output directory")
        p.add_argument("--no-plots", action="store_true", dest="no_plots", help="skip figure rendering")
        p.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")

    p_run = sub.add_parser("run", help="run the configured search")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_count = sub.add_parser("count", help="print space sizes without searching")
    p_count.add_argument("-c", "--config", required=True)
    p_count.set_defaults(fn=cmd_count)

    p_val = sub.add_parser("validate", help="check config and data without running")
    common(p_val)
    p_val.set_defaults(fn=cmd_validate)

    p_bench = sub.add_parser("bench", help="run on synthetic data and print throughput")
    common(p_bench, config_required=False)
    p_bench.add_argument("--primaries", type=int, default=12)
    p_bench.add_argument("--samples", type=int, default=100)
    p_bench.add_argument("--tasks", type=int, default=1)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DescsearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2


if __name__ == "__main__":
    sys.exit(main())
