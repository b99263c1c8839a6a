"""Run every bundled config and print one line per check.

    python scripts/run_bundled.py [--out results] [--parallel]
"""

import argparse
from pathlib import Path

from skewconv.experiments import run

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--parallel", action="store_true")
    args = ap.parse_args()
    worst = 0
    for path in sorted((ROOT / "configs").glob("*.json")):
        report = run(path, parallel=args.parallel, out_dir=Path(args.out) / path.stem)
        worst = max(worst, report.exit_code)
        for r in report.results:
            z = "" if r.z is None else f"z={r.z:+.2f}"
            print(f"{path.stem:24s} {r.check:22s} {r.status:5s} {z:9s} {report.metadata['wall_time']:.1f}s")
    raise SystemExit(worst)


if __name__ == "__main__":
    main()
