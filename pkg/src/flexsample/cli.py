"""Command line entry point: ``flexsample run | gen-data | report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import METHODS, load_config
from .data import benchmark_config, export_embeddings, generate_dataset
from .errors import FlexSampleError, StageError
from .harness import aggregate_trials, run_experiment, trial_seeds
from .report import emit_report, format_table, summary_rows, write_summary_csv

log = logging.getLogger("flexsample")


def _run(args) -> int:
    overrides = {
        "method": args.method, "ratio": args.ratio, "trials": args.trials, "seed": args.seed,
        "pretrain": args.pretrain, "selection": args.selection, "querying": args.querying,
        "data_path": args.data,
    }
    cfg = load_config(args.config, overrides)
    out = Path(args.out or f"runs/{cfg.method}-r{cfg.ratio:g}-s{cfg.seed}")
    records = []
    for s in trial_seeds(cfg):
        try:
            rec = run_experiment(cfg.replace(seed=s))
        except StageError as exc:
            records.append(exc.record)
            emit_report(None, records, out)
            log.error("trial seed=%d failed: %s (partial manifest in %s)", s, exc, out)
            return 2
        records.append(rec)
        log.info("seed=%d top1=%.4f epochs=%d queries=%d (%.1fs)", s, rec.metrics["top1"],
                 rec.epochs_run, rec.queries, rec.wall_clock_s)
    report = aggregate_trials(records)
    paths = emit_report(report, records, out)
    rows = [{"run": cfg.method, "ratio": cfg.ratio, "trials": len(records), "source": str(out),
             **{k: report.mean[k] for k in ("top1", "head", "medium", "tail", "all")},
             **{k + "_std": report.std[k] for k in ("top1", "head", "medium", "tail", "all")}}]
    print(format_table(rows))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def _gen_data(args) -> int:
    cfg = load_config(args.config, {"ratio": args.ratio, "seed": args.seed, "k": args.k,
                                    "N0": args.N0, "d": args.d})
    dcfg = benchmark_config(
        r=cfg.ratio, seed=cfg.seed, k=cfg.k, d=cfg.d, N0=cfg.N0,
        val_reserve=cfg.val_per_class, test_reserve=cfg.test_per_class,
        separation=cfg.separation, head_modes=cfg.head_modes, head_std=cfg.head_std,
        medium_std=cfg.medium_std, tail_std=cfg.tail_std,
    )
    ds = generate_dataset(dcfg)
    export_embeddings(ds, args.out)
    print(f"wrote {len(ds)} samples ({ds.k} classes, d={ds.d}) to {args.out}")
    return 0


def _report(args) -> int:
    manifests = []
    for p in map(Path, args.paths):
        if p.is_dir():
            manifests.extend(sorted(p.rglob("manifest.yaml")))
        else:
            manifests.append(p)
    if not manifests:
        print("no manifests found", file=sys.stderr)
        return 1
    rows = summary_rows(manifests)
    print(format_table(rows))
    if args.out:
        write_summary_csv(rows, args.out)
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flexsample", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment (all trials) and write reports")
    run.add_argument("--config", help="YAML config file; flags override its values")
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--ratio", type=float)
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--data", help="CSV of precomputed embeddings instead of synthetic data")
    run.add_argument("--pretrain", choices=("ce", "ssl"))
    run.add_argument("--selection", choices=("anchor", "edge", "random"))
    run.add_argument("--querying", choices=("random", "mi"))
    run.set_defaults(func=_run)

    gen = sub.add_parser("gen-data", help="write a synthetic long-tailed dataset as CSV")
    gen.add_argument("--config")
    gen.add_argument("--ratio", type=float)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--k", type=int)
    gen.add_argument("--N0", type=int)
    gen.add_argument("--d", type=int)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_gen_data)

    rep = sub.add_parser("report", help="aggregate run manifests into one table")
    rep.add_argument("paths", nargs="+", help="manifest files or directories to search")
    rep.add_argument("--out", help="write the table as CSV here")
    rep.set_defaults(func=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FlexSampleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
