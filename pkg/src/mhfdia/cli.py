"""``mhfdia run`` and ``mhfdia sweep``.

Exit codes: 0 ran, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, NumericalError
from .harness import ATTACKS, SCENARIOS, SWEEP_PARAMS, SweepSpec, load_config, run, sweep
from .trace import export

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhfdia", description="Moving-horizon FDI attack simulations")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run file")
    common.add_argument("--scenario", choices=SCENARIOS)
    common.add_argument("--attack", choices=ATTACKS)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--gzip", action="store_true", default=None)
    common.add_argument("--duration", type=float)
    common.add_argument("--attack-start", type=float, dest="attack_start")
    common.add_argument("--support", help="comma-separated 1-based channels")
    common.add_argument("--lambda0", type=float)
    common.add_argument("-M", "--M", type=int, dest="M")
    common.add_argument("--T", type=int, dest="T")
    common.add_argument("--path", help="vehicle reference path")

    r = sub.add_parser("run", parents=[common], help="simulate one scenario and write its trace")
    r.add_argument("--dump", action="store_true", default=None, help="also write per-window generator records")

    s = sub.add_parser("sweep", parents=[common], help="repeat runs over a parameter grid")
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--reps", type=int, default=20)
    s.add_argument("--support-size", type=int, dest="support_size")
    s.add_argument("--workers", type=int, help="defaults to MHFDIA_THREADS (1 if unset)")
    return p


_OVERRIDES = ("scenario", "attack", "seed", "out", "format", "gzip", "duration", "attack_start", "support",
              "lambda0", "M", "T", "path", "dump")


def _values(raw: str, param: str) -> tuple:
    cast = float if param == "lambda0" else int
    try:
        return tuple(cast(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad --values {raw!r}") from None


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "run":
            trace = run(cfg, write=True)
            print(f"wrote {len(trace)} rows to {cfg.out}" + (" (truncated)" if trace.truncated else ""))
            return EXIT_NUMERICAL if trace.truncated else EXIT_OK
        spec = SweepSpec(args.param, _values(args.values, args.param), args.reps, args.support_size)
        table, _ = sweep(spec, cfg, workers=args.workers)
        path = export(table, Path(cfg.out) / f"sweep_{spec.param}.{cfg.format}", cfg.format, cfg.gzip)
        print(f"wrote {path}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
