"""Run the full deferral benchmark and print a per-method summary table.

Thin driver over the package CLI: trains every configured method across all
replication seeds, evaluates on the clean and corrupted test sets, writes
results.csv / classification.csv / SVG reports, then prints zero-deferral
balanced accuracy per method for the clean condition and for Gaussian noise
level 3.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from deferbench import cli, sweep


def summarize(out_dir: Path) -> None:
    rows = sweep.read_classification_csv(out_dir / "classification.csv")
    methods = list(dict.fromkeys(r.method for r in rows))

    def mean_bacc(method, condition, level):
        vals = [
            r.bacc
            for r in rows
            if r.method == method
            and r.condition == condition
            and r.level == level
            and r.bacc is not None
        ]
        return float(np.mean(vals)) if vals else float("nan")

    print()
    print(f"{'method':<12} {'bAcc (clean)':>12} {'bAcc (noise3)':>13} {'drop':>8}")
    for method in methods:
        clean = mean_bacc(method, "id", 0)
        shifted = mean_bacc(method, "noise", 3)
        print(f"{method:<12} {clean:>12.4f} {shifted:>13.4f} {clean - shifted:>+8.4f}")
    print(f"\nfull tables and SVG curves under {out_dir}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/default", metavar="DIR")
    parser.add_argument("--config", metavar="PATH", help="INI configuration file")
    parser.add_argument("--seed", type=int, metavar="N", help="root seed override")
    parser.add_argument("--jobs", type=int, metavar="N", help="parallel worker processes")
    args = parser.parse_args()

    argv = ["run", "--out", args.out]
    if args.config:
        argv += ["--config", args.config]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    if args.jobs is not None:
        argv += ["--jobs", str(args.jobs)]

    rc = cli.main(argv)
    if rc == 0:
        summarize(Path(args.out))
    return rc


if __name__ == "__main__":
    sys.exit(main())
