"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import __version__
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, as_dict, load, serialize
from .experiments import RUNNERS, NumericalFailure
from .io import write_csv, write_sidecar

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbvilab", description="Gradient-variance and convergence experiments for Gaussian BBVI.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="flat key = value config file (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="CSV path (default: <experiment>.csv); the sidecar is <out>.json")
    p.add_argument("--deterministic", action="store_true", help="omit the timestamp so reruns are byte-identical")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on this)")
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load(args.config, experiment=args.experiment)
        if cfg.experiment != args.experiment:
            raise ConfigError(f"config experiment {cfg.experiment!r} does not match subcommand {args.experiment!r}")
    else:
        cfg = ExperimentConfig(experiment=args.experiment)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def run(cfg: ExperimentConfig, out: str, threads: int = 1, deterministic: bool = False):
    runner = RUNNERS[cfg.experiment]
    with np.errstate(all="ignore"):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                table = runner(cfg, ex, workers=threads) if cfg.experiment == "converge" else runner(cfg, ex)
        else:
            table = runner(cfg, None)
    write_csv(out, table.columns, table.rows)
    payload = dict(version=__version__, config=as_dict(cfg), config_text=serialize(cfg), rows=len(table.rows), **table.meta)
    if not deterministic:
        payload["threads"] = threads
    write_sidecar(out, payload, deterministic)
    return table


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = args.out or f"{cfg.experiment}.csv"
        table = run(cfg, out, args.threads, args.deterministic)
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {len(table.rows)} rows to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
