"""Command line entry points.

Subcommands: generate a dataset, run the full benchmark, re-render SVG
reports from a results table, corrupt a dataset file, and inspect any of the
produced artifacts. Exit code 0 on success, 1 when the experiment itself
fails, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from deferbench import data as data_mod
from deferbench import report, sweep
from deferbench.config import RunConfig, emit_config, load_config
from deferbench.errors import ConfigError, DeferBenchError, FormatError, UsageError
from deferbench.nnet import read_checkpoint
from deferbench.rng import child_seed


def _load_run_config(args) -> RunConfig:
    if args.config and not Path(args.config).is_file():
        raise UsageError(f"{args.config}: no such configuration file")
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "jobs", None) is not None:
        cfg = replace(cfg, jobs=args.jobs)
    return cfg


def cmd_generate(args) -> int:
    cfg = _load_run_config(args)
    ds = sweep.prepare_dataset(cfg)
    out = Path(args.out)
    if not out.parent.is_dir():
        raise UsageError(f"{out.parent}: output directory does not exist")
    data_mod.write_dataset(out, ds)
    pos = int(ds.labels.sum())
    prevalence = 100.0 * pos / ds.n_samples
    print(f"wrote {out}: {ds.n_samples} samples, {ds.n_features} features")
    print(f"positives={pos} negatives={ds.n_samples - pos} prevalence={prevalence:.2f}%")
    tagged = data_mod.split(ds, child_seed(cfg.seed, "split"))
    sizes = {name: int(tagged.split_mask(which).sum())
             for which, name in sorted(data_mod.SPLIT_NAMES.items())}
    print(f"split sizes (seed {cfg.seed}): " + " ".join(f"{k}={v}" for k, v in sizes.items()))
    return 0


def cmd_run(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.ini", "w") as fh:
        fh.write(emit_config(cfg))

    data_path = args.data
    if data_path is not None and not Path(data_path).is_file():
        raise UsageError(f"{data_path}: no such dataset file")
    if data_path is None:
        ds = sweep.prepare_dataset(cfg)
        data_mod.write_dataset(out / "dataset.dfd1", ds)
        data = sweep.split_eval_data(cfg, ds)
    else:
        data = sweep.build_eval_data(cfg, data_path)

    result = sweep.run_plan(cfg, out_dir=out, data=data, data_path=data_path)
    sweep.write_results_csv(out / sweep.RESULTS_NAME, result.points)
    sweep.write_classification_csv(out / sweep.CLASSIFICATION_NAME, result.classification)
    try:
        report.write_report(out, result.points)
    except FormatError as exc:
        # only a fully failed plan leaves nothing to plot; keep the results
        # table and the failure listing
        if not result.failures:
            raise
        print(f"report skipped: {exc}", file=sys.stderr)

    print(f"wrote {out / sweep.RESULTS_NAME}: {len(result.points)} rows")
    print(f"wrote {out / sweep.CLASSIFICATION_NAME}: {len(result.classification)} rows")
    for failure in result.failures:
        print(f"FAILED {failure}", file=sys.stderr)
    return 1 if result.failures else 0


def cmd_report(args) -> int:
    out = Path(args.out)
    results_path = Path(args.results) if args.results else out / sweep.RESULTS_NAME
    if not results_path.is_file():
        raise UsageError(f"{results_path}: no such results file")
    points = sweep.read_results_csv(results_path)
    written = report.write_report(out, points)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_corrupt(args) -> int:
    cfg = _load_run_config(args)
    if not Path(args.data).is_file():
        raise UsageError(f"{args.data}: no such dataset file")
    ds = data_mod.read_dataset(args.data)
    spec = data_mod.CorruptionSpec(
        kind=args.kind,
        level=args.level,
        noise_sigmas=cfg.corruption.noise_sigmas,
        blur_sigmas=cfg.corruption.blur_sigmas,
    )
    corrupted = data_mod.corrupt(ds, spec, cfg.seed)
    out = Path(args.out)
    if not out.parent.is_dir():
        raise UsageError(f"{out.parent}: output directory does not exist")
    data_mod.write_dataset(out, corrupted)
    print(f"wrote {out}: {spec.kind} level {spec.level} (parameter {spec.parameter})")
    return 0


def _inspect_dataset(path: Path) -> None:
    ds = data_mod.read_dataset(path)
    print("kind=dataset")
    print(f"samples={ds.n_samples}")
    print(f"features={ds.n_features}")
    shape = "none" if ds.spatial_shape is None else ",".join(map(str, ds.spatial_shape))
    print(f"spatial_shape={shape}")
    print(f"positives={int(ds.labels.sum())}")
    print(f"negatives={int((1 - ds.labels).sum())}")
    print(f"feature_min={float(ds.features.min())!r}")
    print(f"feature_max={float(ds.features.max())!r}")


def _inspect_checkpoint(path: Path) -> None:
    config, params, sections = read_checkpoint(path)
    print("kind=weights")
    print(f"param_count={params.shape[0]}")
    for line in config.to_text().splitlines():
        print(f"config.{line}")
    for name in sorted(sections):
        print(f"section.{name}={sections[name].shape[0]}")


def _inspect_results(path: Path) -> None:
    points = sweep.read_results_csv(path)
    methods = sorted({p.method for p in points})
    conditions = sorted({report.condition_label(p.condition, p.level) for p in points})
    seeds = sorted({p.seed for p in points})
    print("kind=results")
    print(f"rows={len(points)}")
    print(f"methods={','.join(methods)}")
    print(f"conditions={','.join(conditions)}")
    print(f"seeds={','.join(map(str, seeds))}")
    failed = sum(1 for p in points if p.status.startswith("failed"))
    print(f"failed_rows={failed}")


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        manifest = path / "manifest.txt"
        if not manifest.exists():
            raise UsageError(f"{path}: directory has no manifest.txt")
        print("kind=bundle")
        with open(manifest) as fh:
            for line in fh:
                print(line.rstrip("\n"))
        return 0
    if not path.exists():
        raise UsageError(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"DFD1":
        _inspect_dataset(path)
    elif magic == b"DFB1":
        _inspect_checkpoint(path)
    else:
        _inspect_results(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deferbench",
        description="Benchmark learned and uncertainty-thresholded deferral strategies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, jobs=False):
        p.add_argument("--config", metavar="PATH", help="INI configuration file")
        p.add_argument("--seed", type=int, metavar="N", help="root seed override")
        if jobs:
            p.add_argument("--jobs", type=int, metavar="N", help="parallel worker processes")

    p = sub.add_parser("generate", help="write a synthetic dataset file")
    add_common(p)
    p.add_argument("--out", required=True, metavar="FILE", help="dataset file to write")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run the full benchmark")
    add_common(p, jobs=True)
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--data", metavar="FILE", help="existing dataset file (default: generate)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render SVG reports from a results table")
    p.add_argument("--out", required=True, metavar="DIR", help="directory for report/")
    p.add_argument("--results", metavar="FILE", help="results table (default: OUT/results.csv)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("corrupt", help="corrupt a dataset file")
    add_common(p)
    p.add_argument("--data", required=True, metavar="FILE", help="dataset file to corrupt")
    p.add_argument("--out", required=True, metavar="FILE", help="corrupted dataset to write")
    p.add_argument("--kind", required=True, choices=("noise", "blur"))
    p.add_argument("--level", required=True, type=int, metavar="N")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("inspect", help="describe a dataset, weights, results, or bundle")
    p.add_argument("path", metavar="PATH")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DeferBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
