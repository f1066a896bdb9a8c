"""Seed-averaged summaries of run records: CSV table, JSON summary, figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

# Stable column order of report.csv; append new columns at the end only.
REPORT_COLUMNS = [
    "config_id",
    "mode",
    "d",
    "k",
    "init_std",
    "hash_fraction",
    "optimizer",
    "eta",
    "n_seeds",
    "train_params",
    "inference_params",
    "auc_mean",
    "auc_std",
    "pr_auc_mean",
    "logloss_mean",
    "logloss_std",
    "pr_auc_most_mean",
    "pr_auc_least_mean",
    "train_logloss_mean",
]


class IncompatibleRunsError(ValueError):
    pass


def load_records(run_dirs) -> list[dict]:
    records = []
    for rd in run_dirs:
        rd = Path(rd)
        runs = rd / "runs" if (rd / "runs").is_dir() else rd
        files = sorted(runs.glob("*.json"))
        if not files:
            raise FileNotFoundError(f"no run records under {runs}")
        records.extend(json.loads(f.read_text()) for f in files)
    return records


def _check_compatible(records: list[dict]) -> None:
    datasets = {r["config"]["dataset"] for r in records}
    if len(datasets) > 1:
        raise IncompatibleRunsError(f"runs come from different datasets: {sorted(datasets)}")
    seen = {}
    for r in records:
        cid = r["config"]["config_id"]
        if cid in seen and seen[cid] != r["config"]:
            raise IncompatibleRunsError(f"config {cid} appears with different settings")
        seen[cid] = r["config"]


def summarize(records: list[dict]) -> list[dict]:
    """One row per configuration with metrics averaged over seeds."""
    if not records:
        raise ValueError("need at least one run record")
    _check_compatible(records)
    merged: dict[str, dict] = {}
    for r in records:
        cid = r["config"]["config_id"]
        entry = merged.setdefault(cid, {"config": r["config"], "results": {}, "params": r})
        for res in r["results"]:
            entry["results"][res["seed"]] = res
    rows = []
    for cid in sorted(merged):
        entry = merged[cid]
        cfg = entry["config"]
        results = [entry["results"][s] for s in sorted(entry["results"])]

        def col(path):
            vals = []
            for res in results:
                v = res
                for key in path:
                    v = v[key]
                vals.append(v)
            return np.array(vals, dtype=float)

        auc = col(("test", "auc"))
        ll = col(("test", "logloss"))
        rows.append({
            "config_id": cid,
            "mode": cfg["mode"],
            "d": cfg["d"],
            "k": cfg["k"],
            "init_std": cfg["init_std"] if cfg["mode"] == "mlet" else None,
            "hash_fraction": cfg.get("hash_fraction"),
            "optimizer": cfg["train"]["optimizer"],
            "eta": cfg["train"]["eta"],
            "n_seeds": len(results),
            "train_params": entry["params"]["train_params"],
            "inference_params": entry["params"]["inference_params"],
            "auc_mean": float(auc.mean()),
            "auc_std": float(auc.std()),
            "pr_auc_mean": float(col(("test", "pr_auc")).mean()),
            "logloss_mean": float(ll.mean()),
            "logloss_std": float(ll.std()),
            "pr_auc_most_mean": float(col(("most_frequent", "pr_auc")).mean()),
            "pr_auc_least_mean": float(col(("least_frequent", "pr_auc")).mean()),
            "train_logloss_mean": float(np.mean([res["train_loss"][-1]["logloss"] for res in results])),
        })
    return rows


def _baseline(rows, d, hash_fraction):
    for r in rows:
        if r["mode"] == "single" and r["d"] == d and r["hash_fraction"] == hash_fraction:
            return r
    return None


def slice_deltas(rows: list[dict]) -> list[dict]:
    """Relative PR-AUC change (%) of each factorized config over the single-layer
    baseline with the same d, on the most- and least-frequent test slices."""
    out = []
    for r in rows:
        if r["mode"] != "mlet":
            continue
        base = _baseline(rows, r["d"], r["hash_fraction"])
        if base is None:
            continue
        out.append({
            "config_id": r["config_id"],
            "baseline": base["config_id"],
            "most_frequent_pct": 100.0 * (r["pr_auc_most_mean"] / base["pr_auc_most_mean"] - 1.0),
            "least_frequent_pct": 100.0 * (r["pr_auc_least_mean"] / base["pr_auc_least_mean"] - 1.0),
        })
    return out


def iso_quality_reduction(rows: list[dict]) -> list[dict]:
    """For each single-layer baseline, the smallest factorized d reaching its mean AUC.

    The reduction factor is ``baseline d / matched d``, since inference
    tables are d x n either way.
    """
    out = []
    for base in rows:
        if base["mode"] != "single":
            continue
        matches = [r for r in rows
                   if r["mode"] == "mlet" and r["hash_fraction"] == base["hash_fraction"]
                   and r["auc_mean"] >= base["auc_mean"]]
        if not matches:
            out.append({"baseline": base["config_id"], "baseline_d": base["d"],
                        "matched_d": None, "reduction": None, "label": "none"})
            continue
        best_d = min(r["d"] for r in matches)
        min_k = min(r["k"] for r in matches if r["d"] == best_d)
        factor = base["d"] / best_d
        out.append({
            "baseline": base["config_id"],
            "baseline_d": base["d"],
            "matched_d": best_d,
            "matched_min_k": min_k,
            "reduction": factor,
            "label": f"{factor:g}x (d {base['d']}->{best_d}, k>={min_k})",
        })
    return out


def write_report(rows: list[dict], out_dir, figures: bool = True) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({c: ("" if r[c] is None else r[c]) for c in REPORT_COLUMNS})
    summary = {
        "columns": REPORT_COLUMNS,
        "rows": rows,
        "slice_deltas": slice_deltas(rows),
        "iso_quality": iso_quality_reduction(rows),
    }
    if figures:
        from .plotting import render_all

        summary["figures"] = [str(p.name) for p in render_all(rows, summary, out_dir)]
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
