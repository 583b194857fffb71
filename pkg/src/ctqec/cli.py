"""Command line entry point: ``ctqec <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .codes import CodeError

# flag name -> RunConfig field
_FLAGS = {
    "code": str, "controller": str, "gamma": float, "kappa": float, "lambda_max": float,
    "dt": float, "t_final": float, "trajectories": int, "seed": int, "stride": int,
    "out": str, "workers": int, "scheme": str, "tie": int, "deadband": float,
    "positivity": str,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags given here override it")
    for name, kind in _FLAGS.items():
        flag = "--" + name.replace("_", "-")
        extra = {"controller": {"choices": harness.CONTROLLERS},
                 "positivity": {"choices": harness.POSITIVITY}}.get(name, {})
        common.add_argument(flag, dest=name, type=kind, default=None, **extra)
    common.add_argument("--allow-partial", action="store_true", default=None,
                        help="exit 0 even if some trajectories abort")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ctqec", description="Continuous-time error correction with feedback.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ensemble", parents=[common], help="run a trajectory ensemble and write CSV")
    sub.add_parser("compare", parents=[common], help="feedback vs discrete-correction codeword fidelity")
    b = sub.add_parser("bench", parents=[common], help="time full vs truncated controllers")
    b.add_argument("--kinds", default="full,truncated_136", help="comma-separated controller kinds")
    e = sub.add_parser("basis", parents=[common], help="export a coefficient basis as JSON")
    e.add_argument("--kind", default="truncated_136",
                   choices=("truncated_136", "untruncated_1024", "minimal_31"))
    sub.add_parser("wonham", parents=[common], help="Wonham filter against the full filter without feedback")
    return p


def build_config(args) -> harness.RunConfig:
    values = {}
    if args.config:
        values.update(harness.parse_config_file(args.config))
    for name in (*_FLAGS, "allow_partial"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return harness.RunConfig(**values)


def _print_table(table: dict, every: int = 25):
    names = list(table)
    print(",".join(names))
    n = len(next(iter(table.values())))
    for i in list(range(0, n, every)) + ([n - 1] if (n - 1) % every else []):
        print(",".join(f"{table[k][i]:.6g}" for k in names))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = build_config(args)
    except (ValueError, CodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    try:
        if args.command == "ensemble":
            s = harness.run_ensemble(config)
            _print_table({"time": s.times, "mean_codespace_fidelity": s.mean_codespace,
                          "sem_codespace_fidelity": s.sem_codespace,
                          "mean_codeword_fidelity": s.mean_codeword,
                          "sem_codeword_fidelity": s.sem_codeword})
            print(f"# {s.n} trajectories, mean wall time {s.wall_times.mean():.2f} s", file=sys.stderr)
            return _exit_for(s, config)
        if args.command == "compare":
            s = harness.run_ensemble(config)
            _print_table(harness.run_comparison(config, s))
            return _exit_for(s, config)
        if args.command == "bench":
            kinds = tuple(k.strip() for k in args.kinds.split(","))
            report = harness.benchmark_filters(config, kinds)
            print(json.dumps(report, indent=2))
            return 0
        if args.command == "basis":
            basis = harness._basis(config.code, args.kind)
            data = basis.to_dict()
            if config.out:
                path = Path(config.out)
                if path.suffix != ".json":
                    path.mkdir(parents=True, exist_ok=True)
                    path = path / f"basis_{args.kind}.json"
                path.write_text(json.dumps(data) + "\n")
                print(f"wrote {len(basis)} coordinates to {path}", file=sys.stderr)
            else:
                print(json.dumps(data))
            return 0
        if args.command == "wonham":
            res = harness.wonham_comparison(config)
            print(f"max per-step |p - Tr[Pi rho]|: {res['max_deviation_per_step'].max():.3e}")
            _print_table({k: res[k] for k in ("time", "wonham_codespace", "full_codespace")})
            return 0
    except harness.EnsembleError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, CodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 1


def _exit_for(summary, config) -> int:
    if summary.failures:
        seeds = " ".join(str(f["seed"]) for f in summary.failures)
        print(f"aborted trajectories (seeds): {seeds}", file=sys.stderr)
        return 0 if config.allow_partial else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
