"""Experiment grid: train, collapse, evaluate and persist one cell per (config, seed)."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .compress import QuantizedTable, apply_hash, low_rank_approx, quantize_int8
from .ctrmodel import CtrModel, TrainConfig, dump_checkpoint, train
from .embedding import EmbeddingBundle, InitSpec
from .metrics import evaluate
from .synthdata import GeneratorSpec, SyntheticCtrDataset, generate, read_dataset, stratify

DEFAULT_SEEDS = (1, 2, 3)

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    """Everything ``mlet train`` needs. Every field has a matching CLI flag."""

    data: str | None = None
    data_spec: dict = field(default_factory=dict)
    data_seed: int = 0
    modes: list[str] = field(default_factory=lambda: ["single", "mlet"])
    d_list: list[int] = field(default_factory=lambda: [8])
    k_list: list[int] = field(default_factory=lambda: [32])
    init_std: list[float] = field(default_factory=lambda: [0.25])
    eta: float = 0.2
    optimizer: str = "sgd"
    adagrad_eps: float = 1e-10
    batch_size: int = 128
    epochs: int = 1
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    # hash the two largest tables to this fraction of their width before training
    hash_fraction: float | None = None
    out: str = "runs_out"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not self.d_list or not self.modes:
            raise ValueError("need at least one (d, mode) combination")
        bad = set(self.modes) - {"single", "mlet"}
        if bad:
            raise ValueError(f"unknown modes {sorted(bad)}")
        if "mlet" in self.modes and not self.k_list:
            raise ValueError("mlet mode needs at least one k")

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Cell:
    mode: str
    d: int
    k: int | None
    init_std: float
    hash_fraction: float | None = None

    @property
    def config_id(self) -> str:
        if self.mode == "single":
            cid = f"single-d{self.d}"
        else:
            cid = f"mlet-d{self.d}-k{self.k}-std{self.init_std:g}"
        if self.hash_fraction is not None:
            cid += f"-hash{self.hash_fraction:g}"
        return cid


def cells(config: ExperimentConfig) -> list[Cell]:
    out = []
    for d in config.d_list:
        if "single" in config.modes:
            out.append(Cell("single", d, None, config.init_std[0], config.hash_fraction))
        if "mlet" in config.modes:
            for k in config.k_list:
                for std in config.init_std:
                    out.append(Cell("mlet", d, k, std, config.hash_fraction))
    return out


def train_config(config: ExperimentConfig, cell: Cell, seed: int) -> TrainConfig:
    return TrainConfig(
        eta=config.eta,
        optimizer=config.optimizer,
        adagrad_eps=config.adagrad_eps,
        batch_size=config.batch_size,
        epochs=config.epochs,
        seed=seed,
        init=InitSpec(factor_std=cell.init_std, seed=seed),
    )


def load_data(config: ExperimentConfig) -> SyntheticCtrDataset:
    if config.data:
        ds = read_dataset(config.data)
    else:
        ds = generate(GeneratorSpec(**config.data_spec), seed=config.data_seed)
    if config.hash_fraction is not None:
        ds = hash_largest(ds, config.hash_fraction)
    return ds


def hash_largest(ds: SyntheticCtrDataset, fraction: float, count: int = 2) -> SyntheticCtrDataset:
    """Modulo-hash the ``count`` widest fields to ``ceil(fraction * n_f)`` buckets."""
    if not 0 < fraction <= 1:
        raise ValueError("hash fraction must be in (0, 1]")
    base = ds.meta.get("base_fingerprint", ds.fingerprint())
    widest = sorted(range(ds.n_fields), key=lambda f: (-ds.field_sizes[f], f))[:count]
    hashed = {}
    for f in widest:
        m = math.ceil(ds.field_sizes[f] * fraction)
        ds, spec = apply_hash(ds, f, m)
        hashed[f] = {"original_n": spec.original_n, "buckets": spec.bucket_count}
    meta = dict(ds.meta)
    meta["hashed_fields"] = hashed
    meta["base_fingerprint"] = base
    return ds.replace(meta=meta)


def evaluate_slices(model: CtrModel, ds: SyntheticCtrDataset,
                    slices: tuple[np.ndarray, np.ndarray] | None = None) -> dict:
    sp, dn, y = ds.split("test")
    p = model.predict(sp, dn)
    most, least = slices if slices is not None else stratify(ds)
    return {
        "test": evaluate(p, y).to_dict(),
        "most_frequent": evaluate(p[most], y[most]).to_dict(),
        "least_frequent": evaluate(p[least], y[least]).to_dict(),
    }


def train_cell(ds: SyntheticCtrDataset, cell: Cell, tcfg: TrainConfig):
    """Fresh model for ``cell`` trained on the train split; returns (model, loss reports)."""
    model = CtrModel.create(ds.field_sizes, ds.dense_dim, cell.d, cell.k, tcfg.init)
    sp, dn, y = ds.split("train")
    return model, train(model, sp, dn, y, tcfg)


def run_cell(ds: SyntheticCtrDataset, cell: Cell, tcfg: TrainConfig,
             slices=None) -> tuple[dict, CtrModel]:
    """Train one (config, seed) cell, collapse it and evaluate on the test slices."""
    t0 = time.perf_counter()
    model, losses = train_cell(ds, cell, tcfg)
    train_params = model.train_param_count()
    inference = model.collapsed()
    result = {
        "seed": tcfg.seed,
        "train_loss": [asdict(r) for r in losses],
        "train_params": train_params,
        "inference_params": inference.inference_param_count(),
        **evaluate_slices(inference, ds, slices),
        "wall_clock_s": time.perf_counter() - t0,
    }
    return result, inference


def cell_snapshot(config: ExperimentConfig, cell: Cell, ds: SyntheticCtrDataset) -> dict:
    tc = train_config(config, cell, 0).to_dict()
    tc.pop("seed")
    tc["init"].pop("seed")
    return {
        "config_id": cell.config_id,
        "mode": cell.mode,
        "d": cell.d,
        "k": cell.k,
        "init_std": cell.init_std,
        "train": tc,
        "hash_fraction": config.hash_fraction,
        "dataset": ds.meta.get("base_fingerprint", ds.fingerprint()),
        "data": config.data,
        "data_spec": config.data_spec,
        "data_seed": config.data_seed,
    }


def _cell_job(args):
    ds, cell, tcfg, ckpt_path, info = args
    result, inference = run_cell(ds, cell, tcfg)
    Path(ckpt_path).write_bytes(dump_checkpoint(inference, info))
    log.info("%s seed %d: test auc %.4f, logloss %.4f (%.1fs)", cell.config_id, tcfg.seed,
             result["test"]["auc"], result["test"]["logloss"], result["wall_clock_s"])
    return cell.config_id, result


def run_experiment(config: ExperimentConfig, ds: SyntheticCtrDataset | None = None,
                   threads: int | None = None) -> list[dict]:
    """Run every (cell, seed), write config.json, runs/*.json and checkpoints/*.bin.

    Cells run in parallel processes when ``threads`` (default: env
    ``MLET_THREADS``, else 1) is above one; each cell is single threaded and
    results are merged in a fixed order, so output does not depend on it.
    """
    ds = ds if ds is not None else load_data(config)
    out = Path(config.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    threads = threads or int(os.environ.get("MLET_THREADS", "1"))

    jobs, snapshots = [], {}
    for cell in cells(config):
        snap = cell_snapshot(config, cell, ds)
        snapshots[cell.config_id] = snap
        for seed in config.seeds:
            ckpt = out / "checkpoints" / f"{cell.config_id}-s{seed}.bin"
            info = {"cell": snap, "seed": seed}
            jobs.append((ds, cell, train_config(config, cell, seed), str(ckpt), info))

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]

    records = []
    for config_id, snap in snapshots.items():
        per_seed = sorted((r for cid, r in results if cid == config_id), key=lambda r: r["seed"])
        record = {
            "config": snap,
            "seeds": [r["seed"] for r in per_seed],
            "train_params": per_seed[0]["train_params"],
            "inference_params": per_seed[0]["inference_params"],
            "results": per_seed,
        }
        (out / "runs" / f"{config_id}.json").write_text(json.dumps(record, indent=2, sort_keys=True))
        records.append(record)
    return records


def compress_model(model: CtrModel, svd_rank: int | None = None, int8: bool = False):
    """Apply truncated SVD and/or int8 quantization to every table of a collapsed model.

    Returns ``(eval_model, quantized, storage_model)``: the model to evaluate
    (tables replaced by their compressed reconstruction), the quantized
    tables if ``int8`` (else None), and the model to serialize.
    """
    if model.mode != "single":
        raise ValueError("compress a collapsed (single-layer) model")
    eval_bundles, store_bundles, quantized = [], [], []
    for b in model.bundles:
        w = b.w
        store = b
        if svd_rank is not None:
            left, right, w = low_rank_approx(w, svd_rank)
            store = EmbeddingBundle("mlet", b.d, b.n, w1=left, w2=right)
        if int8:
            q = quantize_int8(w)
            quantized.append(q)
            w = q.dequantize()
        eval_bundles.append(EmbeddingBundle("single", b.d, b.n, w=w))
        store_bundles.append(store)
    evaluated = CtrModel(eval_bundles, model.dense_weights.copy(), model.top_weights.copy())
    stored = CtrModel(store_bundles, model.dense_weights.copy(), model.top_weights.copy()) \
        if not int8 else evaluated
    return evaluated, (quantized if int8 else None), stored


def compressed_bytes(stored: CtrModel, quantized: list[QuantizedTable] | None, info: dict) -> bytes:
    return dump_checkpoint(stored, info, quantized=quantized)


def retrain_hashed(config: ExperimentConfig, cell: Cell, seed: int, buckets: int,
                   ds: SyntheticCtrDataset | None = None):
    """Retrain a cell with the two widest fields hashed to ``buckets`` columns."""
    ds = ds if ds is not None else load_data(replace(config, hash_fraction=None))
    widest = sorted(range(ds.n_fields), key=lambda f: (-ds.field_sizes[f], f))[:2]
    for f in widest:
        ds, _ = apply_hash(ds, f, min(buckets, ds.field_sizes[f]))
    result, inference = run_cell(ds, cell, train_config(config, cell, seed))
    return ds, result, inference
