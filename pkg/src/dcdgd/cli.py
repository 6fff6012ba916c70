"""``dcdgd`` command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 divergence where
the config required convergence.
"""
from __future__ import annotations

import argparse
import sys

from . import graph, harness
from ._backend import BACKEND

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment config file (INI)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out-dir", help="output directory (overrides the config)")
    p.add_argument("--trials", type=int, help="trial count (overrides the config)")
    p.add_argument("--iterations", type=int, help="iterations per trial (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dcdgd", description="Compressed decentralized gradient descent experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s (kernels: {BACKEND})")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-matrix", help="validate a consensus matrix and print its thresholds")
    p.add_argument("matrix", help="matrix file: first line n, then n rows of n numbers")
    p.add_argument("--topology", help="topology file to check the sparsity pattern against")
    p.add_argument("--L", type=float, default=1.0, help="smoothness constant for the alpha_max table")

    _add_overrides(sub.add_parser("run", help="convergence sweep over compressors"))
    _add_overrides(sub.add_parser("compare-compressors", help="bias / SNR / cost comparison"))
    _add_overrides(sub.add_parser("real-data", help="logistic regression on a local dataset file"))
    return ap


def _overrides(args) -> dict:
    return {"seed": args.seed, "out_dir": args.out_dir, "trials": args.trials, "iterations": args.iterations}


def cmd_analyze_matrix(args) -> int:
    try:
        raw = graph.read_matrix_file(args.matrix)
        top = graph.read_topology_file(args.topology) if args.topology else None
        info = harness.analyze_matrix(raw, top, args.L)
    except graph.MatrixValidationError as exc:
        print(f"invalid consensus matrix {args.matrix}:", file=sys.stderr)
        for prop, msg in exc.violations:
            print(f"  {prop}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, graph.SpectralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(harness.format_analysis(info))
    return EXIT_OK


def _load(args, kind):
    cfg = harness.load_config(args.config, _overrides(args))
    if cfg.kind != kind:
        raise harness.ConfigError(f"{args.config}: [experiment] kind = {cfg.kind!r}, this command expects {kind!r}")
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args, "convergence")
    outcome = harness.run_convergence(cfg)
    print(harness.sweep_report(outcome))
    print(f"wrote {len(outcome.files)} files to {cfg.out_dir}")
    failed = outcome.failed_requirements()
    if failed:
        print(f"divergence in configs required to converge: {', '.join(failed)}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args, "compressor-compare")
    outcome = harness.run_compare(cfg)
    print(harness.compare_report(outcome))
    print(f"wrote {len(outcome.files)} files to {cfg.out_dir}")
    return EXIT_OK


def cmd_real_data(args) -> int:
    cfg = _load(args, "real-data")
    outcome = harness.run_real_data(cfg)
    for note in outcome.notes:
        print(note)
    print(harness.sweep_report(outcome))
    print(f"wrote {len(outcome.files)} files to {cfg.out_dir}")
    failed = outcome.failed_requirements()
    if failed:
        print(f"divergence in configs required to converge: {', '.join(failed)}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


COMMANDS = {
    "analyze-matrix": cmd_analyze_matrix,
    "run": cmd_run,
    "compare-compressors": cmd_compare,
    "real-data": cmd_real_data,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
