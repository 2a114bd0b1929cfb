"""Command-line entry point.

Subcommands mirror the pipeline stages and exit with 0 on success, 2 on a
configuration problem, and 1 on a runtime failure:

    aimsolve validate --config exp.toml
    aimsolve exact    --config exp.toml --out results
    aimsolve vqe      --config exp.toml --out results [--resume]
    aimsolve qcm      --config exp.toml --out results [--resume]
    aimsolve greens   --config exp.toml --out results [--resume]
    aimsolve run      --config exp.toml --out results [--resume]
    aimsolve report   --out results

``--seed N`` overrides the config's master_seed; ``AIMSOLVE_THREADS`` caps
the worker pool for the run queue.
"""

from __future__ import annotations

import argparse
import sys

from .experiment import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    config_schema,
    format_cost_table,
    load_config,
    report_costs,
    run_experiment,
    run_stage,
    with_master_seed,
    worker_count,
)

_STAGE_COMMANDS = ("exact", "vqe", "qcm", "greens")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aimsolve",
        description="Hybrid quantum-classical Anderson impurity solver (simulated).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, require_config: bool):
        p.add_argument(
            "--config",
            metavar="PATH",
            required=require_config,
            help="TOML experiment configuration"
            + ("" if require_config else " (defaults apply when omitted)"),
        )

    def add_bundle_flags(p):
        p.add_argument(
            "--out",
            metavar="DIR",
            default=None,
            help="bundle directory (default: the config's output.directory)",
        )
        p.add_argument("--seed", metavar="N", type=int, default=None, help="override master_seed")
        p.add_argument(
            "--resume",
            action="store_true",
            help="skip results already present in the bundle",
        )

    validate = sub.add_parser("validate", help="check a configuration file")
    add_config_flags(validate, require_config=True)

    for name, help_text in (
        ("exact", "exact-diagonalization references and DOS"),
        ("vqe", "variational ground-state ensemble"),
        ("qcm", "moment corrections for existing runs"),
        ("greens", "Green's-function ladders for existing runs"),
        ("run", "full pipeline: exact, vqe, qcm, greens, aggregate"),
    ):
        p = sub.add_parser(name, help=help_text)
        add_config_flags(p, require_config=False)
        add_bundle_flags(p)

    report = sub.add_parser("report", help="cost table for a completed bundle")
    report.add_argument("--out", metavar="DIR", required=True, help="bundle directory")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        config = with_master_seed(config, args.seed)
    return config


def _print_counts(command: str, counts: dict) -> None:
    if "computed" in counts:
        counts = {command: counts}
    for stage, stage_counts in counts.items():
        line = f"{stage}: {stage_counts['computed']} computed"
        if stage_counts["skipped"]:
            line += f", {stage_counts['skipped']} skipped"
        print(line)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            config = load_config(args.config)
            seeds, repeats = config.ensemble()
            print(f"ok: {args.config}")
            print(f"  hash {config_hash(config)}")
            print(
                f"  n_bath={config.model.n_bath}"
                f" u_values={[float(u) for u in config.model.u_values]}"
                f" {config.vqe.method}/{config.vqe.mode}"
                f" ensemble {seeds}x{repeats}"
            )
            return 0
        if args.command == "report":
            print(format_cost_table(report_costs(args.out)), end="")
            return 0

        config = _load(args)
        out = args.out or config.output.directory
        threads = worker_count()
        if args.command == "run":
            counts = run_experiment(config, out, resume=args.resume, threads=threads)
        else:
            counts = run_stage(args.command, config, out, resume=args.resume, threads=threads)
        _print_counts(args.command, counts)
        print(f"bundle: {out}")
        return 0
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        if args.command == "validate":
            print("\naccepted keys:\n" + config_schema(), file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - boundary for exit-code contract
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
