"""Command line entry point: ``mlet gen-data | verify-theory | train | compress | report``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import gradflow as gf
from .ctrmodel import TrainingDivergedError, load_checkpoint
from .experiment import (
    Cell,
    ExperimentConfig,
    compress_model,
    compressed_bytes,
    evaluate_slices,
    load_data,
    retrain_hashed,
    run_experiment,
)
from .report import load_records, summarize, write_report
from .synthdata import GeneratorSpec, generate, stratify, write_dataset
from .verify import REFERENCE_GRID, direction_grids, run_all


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _pair(text: str) -> tuple[int, int]:
    lo, hi = _ints(text)
    return lo, hi


# -- gen-data -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    zipf = _floats(args.zipf)
    spec = GeneratorSpec(
        field_sizes=tuple(_ints(args.fields)),
        zipf=tuple(zipf),
        dense_dim=args.dense_dim,
        n_train=args.n_train,
        n_val=args.n_val,
        n_test=args.n_test,
        noise_std=args.noise,
        freq_bias=args.freq_bias,
        clusters=args.clusters,
    )
    ds = generate(spec, seed=args.seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out, truth_sidecar=args.truth)
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    print(json.dumps({
        "path": str(out),
        "records": len(ds),
        "splits": {"train": ds.n_train, "val": ds.n_val, "test": ds.n_test},
        "field_sizes": list(ds.field_sizes),
        "zipf": list(spec.zipf),
        "uniform": ds.meta["uniform"],
        "dense_dim": ds.dense_dim,
        "positive_rate": float(ds.labels.mean()),
        "sha256": digest,
    }, indent=2))
    return 0


# -- verify-theory ------------------------------------------------------------

def _format_grid(grid) -> str:
    marks = {gf.SINGLE_ONE: "1", gf.BOTH: "*", gf.SIGMA1_ONLY: "+", gf.ZERO: "0"}
    return "\n".join(" ".join(marks[c] for c in row) for row in grid)


def cmd_verify_theory(args) -> int:
    report: dict = {}
    ok = True
    if args.census:
        n, d, k = args.census
        c = gf.factor_census(n, d, k)
        print(f"nonzero={c.nonzero_count} zero={c.zero_count} "
              f"informative={c.informative_count} sigma2_active={c.sigma2_active_count}")
        report["census"] = asdict(c)
        if k < d <= n:
            report["census"]["identity_holds"] = gf.census_identity_check(n, d, k)
    if args.direction_grid:
        grids = direction_grids(args.seed)
        match = all(grids[f"k={k}"] == REFERENCE_GRID[k] for k in (1, 2, 4))
        ok &= match
        print("legend: * both singular values non-zero, + sigma1 only, 0 zero, 1 single-layer")
        for name, grid in grids.items():
            print(f"[{name}]\n{_format_grid(grid)}")
        report["direction_grid"] = {"grids": grids, "matches_reference": match}
    if not (args.census or args.direction_grid):
        d_range, n_range = _pair(args.d_range), _pair(args.n_range)
        if n_range[1] > gf.THEORY_MAX_N:
            print(f"error: n is capped at {gf.THEORY_MAX_N} in theory mode", file=sys.stderr)
            return 2
        report = run_all(args.trials, args.seed, d_range, n_range, method=args.svd)
        ok = report["passed"]
        print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return 0 if ok else 1


# -- train --------------------------------------------------------------------

_TRAIN_FLAGS = {
    "data": "data", "data_seed": "data_seed", "d": "d_list", "k": "k_list",
    "init_std": "init_std", "eta": "eta", "optimizer": "optimizer",
    "adagrad_eps": "adagrad_eps", "batch_size": "batch_size", "epochs": "epochs",
    "seeds": "seeds", "hash_fraction": "hash_fraction", "out": "out",
}


def build_config(args) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            raw[key] = value
    if args.mode is not None:
        raw["modes"] = ["single", "mlet"] if args.mode == "both" else [args.mode]
    if raw.get("optimizer") == "adagrad":
        # the non-DLRM defaults
        raw.setdefault("eta", 0.02)
        raw.setdefault("init_std", [0.5])
    return ExperimentConfig.from_dict(raw)


def cmd_train(args) -> int:
    config = build_config(args)
    try:
        records = run_experiment(config)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        print(json.dumps({"iteration": exc.iteration, "batch_start": exc.batch_start,
                          "max_abs_param": exc.max_abs_param, "loss": exc.loss}),
              file=sys.stderr)
        return 3
    for r in records:
        aucs = [res["test"]["auc"] for res in r["results"]]
        print(f"{r['config']['config_id']:<32} seeds={r['seeds']} "
              f"auc={np.mean(aucs):.4f} inference_params={r['inference_params']}")
    print(f"wrote {len(records)} run records under {config.out}")
    return 0


# -- compress -----------------------------------------------------------------

def cmd_compress(args) -> int:
    path = Path(args.checkpoint)
    if not path.exists():
        print(f"error: checkpoint {path} not found", file=sys.stderr)
        return 2
    if args.hash is not None and not args.retrain:
        print("error: hashing changes table width before training; pass --retrain with --hash",
              file=sys.stderr)
        return 2
    if args.svd_rank is None and not args.int8 and args.hash is None:
        print("error: choose at least one of --svd-rank, --int8, --hash", file=sys.stderr)
        return 2
    raw = path.read_bytes()
    model, header = load_checkpoint(raw)
    snap = header.get("cell", {})
    config = ExperimentConfig(
        data=args.data or snap.get("data"),
        data_spec=snap.get("data_spec", {}),
        data_seed=snap.get("data_seed", 0),
        eta=snap.get("train", {}).get("eta", 0.2),
        optimizer=snap.get("train", {}).get("optimizer", "sgd"),
        batch_size=snap.get("train", {}).get("batch_size", 128),
        epochs=snap.get("train", {}).get("epochs", 1),
    )
    ds = load_data(config)
    slices = stratify(ds)
    before = evaluate_slices(model, ds, slices)
    size_before = len(raw)

    if args.hash is not None:
        cell = Cell(snap.get("mode", model.mode), model.d, snap.get("k"),
                    snap.get("init_std", 0.25))
        hashed_ds, _, model = retrain_hashed(config, cell, header.get("seed", 1), args.hash, ds)
        eval_ds = hashed_ds
    else:
        eval_ds = ds
    if args.svd_rank is not None and not 1 <= args.svd_rank <= min(model.d, min(model.field_sizes)):
        print(f"error: --svd-rank must be in [1, {model.d}]", file=sys.stderr)
        return 2
    evaluated, quantized, stored = compress_model(model, args.svd_rank, args.int8)
    info = dict(header)
    info["compression"] = {"svd_rank": args.svd_rank, "int8": args.int8, "hash": args.hash}
    blob = compressed_bytes(stored, quantized, info)
    after = evaluate_slices(evaluated, eval_ds, slices)

    out = Path(args.out) if args.out else path.with_name(path.stem + "-compressed.bin")
    out.write_bytes(blob)
    summary = {
        "checkpoint": str(out),
        "bytes_before": size_before,
        "bytes_after": len(blob),
        "ratio": size_before / len(blob),
        "before": before,
        "after": after,
        "compression": info["compression"],
    }
    out.with_suffix(".json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


# -- report -------------------------------------------------------------------

def cmd_report(args) -> int:
    rows = summarize(load_records(args.runs))
    out = Path(args.out or args.runs[0])
    summary = write_report(rows, out, figures=not args.no_figures)
    for r in rows:
        print(f"{r['config_id']:<32} n={r['n_seeds']} auc={r['auc_mean']:.4f} "
              f"logloss={r['logloss_mean']:.4f} pr_auc(most/least)="
              f"{r['pr_auc_most_mean']:.4f}/{r['pr_auc_least_mean']:.4f}")
    for iso in summary["iso_quality"]:
        print(f"iso-quality vs {iso['baseline']}: {iso['label']}")
    print(f"wrote {out / 'report.csv'} and {out / 'report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic CTR dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--fields", default="1000,1000", help="category count per sparse field")
    g.add_argument("--zipf", default="1.2", help="Zipf exponent, one or one per field")
    g.add_argument("--dense-dim", type=int, default=4)
    g.add_argument("--n-train", type=int, default=200_000)
    g.add_argument("--n-val", type=int, default=20_000)
    g.add_argument("--n-test", type=int, default=20_000)
    g.add_argument("--noise", type=float, default=0.5, help="logit noise std")
    g.add_argument("--freq-bias", type=float, default=0.0)
    g.add_argument("--clusters", type=int, default=20)
    g.add_argument("--truth", action="store_true", help="also write ground-truth latents")
    g.set_defaults(func=cmd_gen_data)

    v = sub.add_parser("verify-theory", help="numerically check the update algebra")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--d-range", default="2,6")
    v.add_argument("--n-range", default="5,20")
    v.add_argument("--svd", choices=["lapack", "jacobi"], default="lapack")
    v.add_argument("--direction-grid", "--table1", dest="direction_grid", action="store_true",
                   help="print the d=2, n=5 direction classification grid")
    v.add_argument("--census", nargs=3, type=int, metavar=("N", "D", "K"))
    v.add_argument("--out", help="also write the JSON report here")
    v.set_defaults(func=cmd_verify_theory)

    t = sub.add_parser("train", help="train a grid of configurations over seeds")
    t.add_argument("--config", help="JSON config file; flags override its values")
    t.add_argument("--data", help="dataset file (default: generate in memory)")
    t.add_argument("--data-seed", type=int)
    t.add_argument("--mode", choices=["single", "mlet", "both"])
    t.add_argument("--d", type=_ints)
    t.add_argument("--k", type=_ints)
    t.add_argument("--init-std", type=_floats)
    t.add_argument("--eta", type=float)
    t.add_argument("--optimizer", choices=["sgd", "adagrad"])
    t.add_argument("--adagrad-eps", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seeds", type=_ints)
    t.add_argument("--hash-fraction", type=float)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", help="compress a trained checkpoint and re-evaluate")
    c.add_argument("checkpoint")
    c.add_argument("--data")
    c.add_argument("--svd-rank", type=int)
    c.add_argument("--int8", action="store_true")
    c.add_argument("--hash", type=int, metavar="M", help="bucket count for the two widest fields")
    c.add_argument("--retrain", action="store_true")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compress)

    r = sub.add_parser("report", help="seed-averaged CSV/JSON summary and figures")
    r.add_argument("runs", nargs="+", help="output directories of train runs")
    r.add_argument("--out")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
