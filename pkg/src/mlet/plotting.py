"""Figures for ``mlet report``. Rendered with the Agg backend straight to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.5, 3.8),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _series(rows, key):
    """Group rows into plot series: one for single-layer, one per (k, init std)."""
    groups = {}
    for r in rows:
        if r["mode"] == "single":
            label = "single-layer"
        else:
            label = f"k={r['k']}" + (f", std={r['init_std']:g}" if r["init_std"] != 0.25 else "")
        if r.get("hash_fraction") is not None:
            label += f" (hash {r['hash_fraction']:g})"
        groups.setdefault(label, []).append(r)
    for label, members in groups.items():
        members.sort(key=lambda r: r[key])
    return groups


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def quality_vs_size(rows, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, members in _series(rows, "inference_params").items():
            ax.plot([r["inference_params"] for r in members], [r["auc_mean"] for r in members],
                    marker="o", ls="-" if label.startswith("single") else "--", label=label)
        ax.set_xscale("log")
        ax.set_xlabel("inference embedding parameters")
        ax.set_ylabel("test AUC (seed mean)")
        ax.legend()
        return _save(fig, path)


def logloss_vs_d(rows, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, members in _series(rows, "d").items():
            ax.errorbar([r["d"] for r in members], [r["logloss_mean"] for r in members],
                        yerr=[r["logloss_std"] for r in members], marker="o", capsize=2,
                        label=label)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("embedding dimension d")
        ax.set_ylabel("test LogLoss (seed mean)")
        ax.legend()
        return _save(fig, path)


def slice_improvement(deltas, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(deltas) + 2), 3.8))
        xs = range(len(deltas))
        w = 0.38
        ax.bar([x - w / 2 for x in xs], [d["most_frequent_pct"] for d in deltas], w,
               label="most frequent 10%")
        ax.bar([x + w / 2 for x in xs], [d["least_frequent_pct"] for d in deltas], w,
               label="least frequent 10%")
        ax.axhline(0.0, color="k", lw=0.8)
        ax.set_xticks(list(xs))
        ax.set_xticklabels([d["config_id"] for d in deltas], rotation=20, ha="right", fontsize=7)
        ax.set_ylabel("PR-AUC change vs single-layer (%)")
        ax.legend()
        return _save(fig, path)


def init_std_sweep(rows, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        groups = {}
        for r in rows:
            if r["mode"] == "mlet":
                groups.setdefault((r["d"], r["k"]), []).append(r)
        for (d, k), members in sorted(groups.items()):
            members.sort(key=lambda r: r["init_std"])
            ax.plot([r["init_std"] for r in members], [r["auc_mean"] for r in members],
                    marker="o", label=f"d={d}, k={k}")
        ax.set_xscale("log")
        ax.set_xlabel("factor-layer init std")
        ax.set_ylabel("test AUC (seed mean)")
        ax.legend()
        return _save(fig, path)


def render_all(rows, summary, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = [quality_vs_size(rows, out_dir / "quality_vs_size.png"),
             logloss_vs_d(rows, out_dir / "logloss_vs_d.png")]
    if summary["slice_deltas"]:
        paths.append(slice_improvement(summary["slice_deltas"], out_dir / "slice_improvement.png"))
    stds = {r["init_std"] for r in rows if r["mode"] == "mlet"}
    if len(stds) > 1:
        paths.append(init_std_sweep(rows, out_dir / "init_std_sweep.png"))
    return paths
