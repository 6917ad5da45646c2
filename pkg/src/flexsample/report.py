"""Writing and reading run artifacts: metrics CSV, YAML manifest, per-epoch plot data."""
from __future__ import annotations

import csv
import datetime as _dt
from pathlib import Path

import numpy as np
import yaml

from .harness import MetricsReport, RunRecord

METRICS_COLUMNS = ["method", "ratio", "trial_seed", "top1", "head", "medium", "tail", "all",
                   "epochs_run", "queries"]
TIMESTAMP_KEYS = ("created_at", "wall_clock_s")
NA = "NA"


def plain(obj):
    """Recursively convert numpy scalars/arrays and tuples into YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _fmt(v):
    if v is None:
        return NA
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(report: MetricsReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for row in report.per_trial:
            w.writerow([_fmt(report.method), _fmt(report.ratio)]
                       + [_fmt(row.get(c)) for c in METRICS_COLUMNS[2:]])
    return path


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for raw in reader:
            row = {"method": raw["method"], "ratio": float(raw["ratio"]),
                   "trial_seed": int(raw["trial_seed"])}
            for c in ("top1", "head", "medium", "tail", "all"):
                row[c] = None if raw[c] == NA else float(raw[c])
            row["epochs_run"] = int(raw["epochs_run"])
            row["queries"] = int(raw["queries"])
            rows.append(row)
    return rows


def record_to_dict(record: RunRecord) -> dict:
    return plain({
        "seed": record.seed,
        "status": record.status,
        "stage": record.stage,
        "error": record.error,
        "metrics": record.metrics,
        "per_class": record.per_class,
        "train_counts": record.train_counts,
        "epochs_run": record.epochs_run,
        "best_epoch": record.best_epoch,
        "queries": record.queries,
        "subset": record.subset,
        "query_events": record.events,
        "wall_clock_s": record.wall_clock_s,
    })


def build_manifest(records, report: MetricsReport | None = None, created_at=None) -> dict:
    base = dict(records[0].config)
    base["seed"] = min(r.seed for r in records)
    manifest = {
        "created_at": created_at or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config": base,
        "trial_seeds": [r.seed for r in records],
        "summary": None,
        "trials": [record_to_dict(r) for r in records],
    }
    if report is not None:
        manifest["summary"] = {"mean": report.mean, "std": report.std,
                               "per_class_mean": report.per_class_mean,
                               "per_class_std": report.per_class_std}
    return plain(manifest)


def dump_manifest(manifest: dict) -> str:
    return yaml.safe_dump(manifest, sort_keys=False, default_flow_style=None, width=100)


def load_manifest(path) -> dict:
    return yaml.safe_load(Path(path).read_text(encoding="utf-8"))


def strip_timestamps(obj):
    """Copy of a manifest with wall-clock fields removed (for reproducibility diffs)."""
    if isinstance(obj, dict):
        return {k: strip_timestamps(v) for k, v in obj.items() if k not in TIMESTAMP_KEYS}
    if isinstance(obj, list):
        return [strip_timestamps(v) for v in obj]
    return obj


def write_plot_data(records, path) -> Path:
    """Long-format per-epoch table: one row per (trial, epoch, split)."""
    path = Path(path)
    k = max((len(h["per_class"]) for r in records for h in r.history), default=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial_seed", "epoch", "split", "top1", "loss", "n_train", "pool"]
                   + [f"acc_c{c}" for c in range(k)])
        for r in records:
            for h in r.history:
                w.writerow([r.seed, h["epoch"], h["split"], _fmt(h["top1"]), _fmt(h["loss"]),
                            h["n_train"], h["pool"]] + [_fmt(a) for a in h["per_class"]])
    return path


def emit_report(report: MetricsReport | None, records, out_dir) -> dict:
    """Write metrics.csv, manifest.yaml and epochs.csv into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"manifest": out / "manifest.yaml", "epochs": out / "epochs.csv"}
        paths["manifest"].write_text(dump_manifest(build_manifest(records, report)),
                                     encoding="utf-8")
        write_plot_data(records, paths["epochs"])
        if report is not None:
            paths["metrics"] = write_metrics_csv(report, out / "metrics.csv")
    except OSError as exc:
        raise OSError(f"could not write report to {out}: {exc}") from exc
    return paths


def _label(cfg: dict) -> str:
    if cfg.get("method") != "flexible":
        return cfg.get("method", "?")
    return f"flexible[{cfg['pretrain']}/{cfg['selection']}/{cfg['querying']}]"


def summary_rows(manifest_paths) -> list[dict]:
    rows = []
    for p in manifest_paths:
        m = load_manifest(p)
        summ = m.get("summary") or {}
        mean, std = summ.get("mean", {}), summ.get("std", {})
        row = {"run": _label(m["config"]), "ratio": m["config"]["ratio"],
               "trials": len(m["trial_seeds"]), "source": str(p)}
        for key in ("top1", "head", "medium", "tail", "all"):
            row[key] = mean.get(key)
            row[key + "_std"] = std.get(key)
        rows.append(row)
    return rows


def format_table(rows) -> str:
    def cell(m, s):
        return "n/a" if m is None else f"{100 * m:6.2f} (±{100 * s:4.2f})"

    head = f"{'run':32s} {'ratio':>6s} {'n':>2s}  " + "  ".join(
        f"{k:>15s}" for k in ("top1", "head", "medium", "tail", "all"))
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['run']:32s} {r['ratio']:6g} {r['trials']:2d}  " + "  ".join(
            f"{cell(r[k], r[k + '_std']):>15s}" for k in ("top1", "head", "medium", "tail", "all")))
    return "\n".join(lines)


def write_summary_csv(rows, path) -> Path:
    cols = ["run", "ratio", "trials"] + [c for k in ("top1", "head", "medium", "tail", "all")
                                         for c in (k, k + "_std")] + ["source"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    return Path(path)
