"""Command line entry point: run experiment configs, list checks, dump cumulant curves."""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

import numpy as np

from .cumulant import cumulant_path
from .experiments import CATALOG, ConfigError, load_config, run

SEED_ENV = "SKEWCONV_SEED"
OUT_ENV = "SKEWCONV_OUT"


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    out = args.out or os.environ.get(OUT_ENV) or "results"
    report = run(cfg, seed=seed, parallel=args.parallel, out_dir=out)
    for r in report.results:
        z = "" if r.z is None else f" z={r.z:+.3f}"
        est = "" if r.estimate is None else f" estimate={r.estimate:.6g}"
        print(f"{r.status.upper():5s} {r.check}{est}{z}")
    print(f"report written to {out}")
    return report.exit_code


def _cmd_list(args) -> int:
    if args.json:
        print(json.dumps([{"name": k, "anchor": v} for k, v in CATALOG.items()], indent=2))
    else:
        for k, v in CATALOG.items():
            print(f"{k:22s} {v}")
    return 0


def _cmd_solve(args) -> int:
    cfg = load_config(args.config)
    if not cfg.targets:
        raise ConfigError(["solve-cumulant needs at least one target"])
    tg = cfg.targets[args.target]
    horizon = args.horizon or tg.t
    g = tg.g if np.any(tg.g) else None
    sol = cumulant_path(cfg.mech, cfg.motion, tg.f, horizon, cfg.step, g=g)
    text = sol.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skewconv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every check of an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (env {OUT_ENV}, default ./results)")
    r.add_argument("--seed", type=int, help=f"master seed (env {SEED_ENV}, default from config)")
    r.add_argument("--parallel", action="store_true", help="run replicates on worker threads")
    r.set_defaults(func=_cmd_run)
    ls = sub.add_parser("list-checks", help="list the check catalog")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=_cmd_list)
    s = sub.add_parser("solve-cumulant", help="write the cumulant curve of a target as CSV")
    s.add_argument("config")
    s.add_argument("--target", type=int, default=0)
    s.add_argument("--horizon", type=float)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_solve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001 - any crash is an execution error
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
