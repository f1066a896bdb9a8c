"""Synthetic click-through data with Zipf-skewed categorical fields.

Each sample draws one category per sparse field from a Zipf law over
``[0, n_f)`` (index 0 is the most popular), a standard-normal dense vector,
and a click label from a hidden pairwise-interaction model of the same
form the CTR model learns, plus Gaussian logit noise.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

FORMAT_TAG = "mlet-ctr-v1"


@dataclass(frozen=True)
class GeneratorSpec:
    field_sizes: tuple[int, ...] = (1000, 1000)
    zipf: tuple[float, ...] = (1.2, 1.2)
    dense_dim: int = 4
    n_train: int = 200_000
    n_val: int = 20_000
    n_test: int = 20_000
    latent_dim: int = 8
    temperature: float = 1.0
    noise_std: float = 0.5
    bias: float = -1.5
    # > 0 makes popular categories click more often.
    freq_bias: float = 0.0
    # 0 gives independent per-category latents; otherwise categories share
    # one of this many cluster centres plus individual noise of relative size
    # cluster_spread.
    clusters: int = 20
    cluster_spread: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "field_sizes", tuple(int(n) for n in self.field_sizes))
        zipf = tuple(float(a) for a in self.zipf)
        if len(zipf) == 1 and len(self.field_sizes) > 1:
            zipf = zipf * len(self.field_sizes)
        object.__setattr__(self, "zipf", zipf)
        if len(self.zipf) != len(self.field_sizes):
            raise ValueError("need one Zipf exponent per field")
        if any(n < 2 for n in self.field_sizes):
            raise ValueError("every field needs at least 2 categories")
        if any(a < 0 for a in self.zipf):
            raise ValueError("Zipf exponents must be >= 0")
        if min(self.n_train, self.n_test) < 1 or self.n_val < 0:
            raise ValueError("train and test splits must be non-empty")

    @property
    def n_samples(self) -> int:
        return self.n_train + self.n_val + self.n_test

    def to_dict(self) -> dict:
        d = asdict(self)
        d["field_sizes"] = list(self.field_sizes)
        d["zipf"] = list(self.zipf)
        return d


@dataclass
class SyntheticCtrDataset:
    field_sizes: tuple[int, ...]
    sparse: np.ndarray  # (N, F) int64
    dense: np.ndarray  # (N, dense_dim) float32
    labels: np.ndarray  # (N,) uint8
    n_train: int
    n_val: int
    meta: dict = field(default_factory=dict)
    truth: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.sparse.shape != (n, len(self.field_sizes)):
            raise ValueError("sparse block shape does not match field count")
        if self.dense.shape[0] != n:
            raise ValueError("dense block length mismatch")
        if self.n_train + self.n_val > n:
            raise ValueError("split sizes exceed sample count")

    @property
    def n_fields(self) -> int:
        return len(self.field_sizes)

    @property
    def dense_dim(self) -> int:
        return self.dense.shape[1]

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_test(self) -> int:
        return len(self) - self.n_train - self.n_val

    def split_range(self, name: str) -> range:
        bounds = {
            "train": (0, self.n_train),
            "val": (self.n_train, self.n_train + self.n_val),
            "test": (self.n_train + self.n_val, len(self)),
        }
        if name not in bounds:
            raise KeyError(f"unknown split {name!r}")
        return range(*bounds[name])

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        r = self.split_range(name)
        sl = slice(r.start, r.stop)
        return self.sparse[sl], self.dense[sl], self.labels[sl]

    def train_freq(self) -> list[np.ndarray]:
        """Per field, occurrence count of every category in the training split."""
        sp = self.sparse[: self.n_train]
        return [np.bincount(sp[:, f], minlength=n) for f, n in enumerate(self.field_sizes)]

    def replace(self, **changes) -> SyntheticCtrDataset:
        return replace(self, **changes)

    def fingerprint(self) -> str:
        h = zlib.crc32(self.sparse.astype("<u4").tobytes())
        h = zlib.crc32(self.dense.astype("<f4").tobytes(), h)
        h = zlib.crc32(self.labels.astype("u1").tobytes(), h)
        return f"{h:08x}-{len(self)}-{'x'.join(map(str, self.field_sizes))}"


def zipf_probs(n: int, alpha: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** alpha
    return w / w.sum()


def sample_zipf(rng: np.random.Generator, n: int, alpha: float, size: int) -> np.ndarray:
    """Inverse-CDF draws over [0, n); index 0 has the highest probability."""
    cdf = np.cumsum(zipf_probs(n, alpha))
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, n - 1).astype(np.int64)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _field_latents(rng, n: int, spec: GeneratorSpec, scale: float) -> np.ndarray:
    if not spec.clusters:
        return rng.normal(0.0, scale, size=(n, spec.latent_dim))
    centres = rng.normal(0.0, 1.0, size=(spec.clusters, spec.latent_dim))
    member = rng.integers(0, spec.clusters, size=n)
    z = centres[member] + spec.cluster_spread * rng.normal(size=(n, spec.latent_dim))
    return scale * z / np.sqrt(1.0 + spec.cluster_spread**2)


def generate(spec: GeneratorSpec | None = None, seed: int = 0) -> SyntheticCtrDataset:
    spec = spec or GeneratorSpec()
    rng = np.random.default_rng(seed)
    n_total = spec.n_samples
    n_fields = len(spec.field_sizes)
    latent_scale = spec.latent_dim ** -0.25  # pairwise dots then have unit variance

    latents = [_field_latents(rng, n, spec, latent_scale) for n in spec.field_sizes]
    dense_proj = rng.normal(0.0, latent_scale / np.sqrt(max(spec.dense_dim, 1)),
                            size=(spec.latent_dim, spec.dense_dim))

    sparse = np.column_stack(
        [sample_zipf(rng, n, a, n_total) for n, a in zip(spec.field_sizes, spec.zipf)]
    )
    dense = rng.standard_normal((n_total, spec.dense_dim)).astype(np.float32)

    vecs = [latents[f][sparse[:, f]] for f in range(n_fields)]
    if spec.dense_dim:
        vecs.append(dense.astype(np.float64) @ dense_proj.T)
    interaction = np.zeros(n_total)
    for a in range(len(vecs)):
        for b in range(a + 1, len(vecs)):
            interaction += np.einsum("ij,ij->i", vecs[a], vecs[b])
    logit = spec.temperature * interaction + spec.bias
    if spec.freq_bias:
        for f, n in enumerate(spec.field_sizes):
            pop = 0.5 - np.log1p(sparse[:, f]) / np.log(n)
            logit += spec.freq_bias * pop
    logit += rng.normal(0.0, spec.noise_std, size=n_total)
    labels = (rng.random(n_total) < _sigmoid(logit)).astype(np.uint8)

    meta = {
        "format": FORMAT_TAG,
        "spec": spec.to_dict(),
        "seed": int(seed),
        "uniform": all(a == 0 for a in spec.zipf),
    }
    truth = {"latents": latents, "dense_proj": dense_proj}
    return SyntheticCtrDataset(
        field_sizes=spec.field_sizes,
        sparse=sparse,
        dense=dense,
        labels=labels,
        n_train=spec.n_train,
        n_val=spec.n_val,
        meta=meta,
        truth=truth,
    )


def _record_dtype(n_fields: int, dense_dim: int) -> np.dtype:
    parts = [("idx", "<u4", (n_fields,))]
    if dense_dim:
        parts.append(("dense", "<f4", (dense_dim,)))
    parts.append(("label", "u1"))
    return np.dtype(parts)


def write_dataset(ds: SyntheticCtrDataset, path, truth_sidecar: bool = False) -> None:
    """Header JSON line, then packed little-endian records (u32 idx, f32 dense, u8 label)."""
    header = dict(ds.meta)
    header.update(
        {
            "format": FORMAT_TAG,
            "field_sizes": list(ds.field_sizes),
            "dense_dim": ds.dense_dim,
            "counts": {"train": ds.n_train, "val": ds.n_val, "test": ds.n_test},
        }
    )
    rec = np.zeros(len(ds), dtype=_record_dtype(ds.n_fields, ds.dense_dim))
    rec["idx"] = ds.sparse
    if ds.dense_dim:
        rec["dense"] = ds.dense
    rec["label"] = ds.labels
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(rec.tobytes())
    if truth_sidecar and ds.truth is not None:
        np.savez(
            path.with_suffix(path.suffix + ".truth.npz"),
            dense_proj=ds.truth["dense_proj"],
            **{f"latents_{i}": z for i, z in enumerate(ds.truth["latents"])},
        )


def read_dataset(path) -> SyntheticCtrDataset:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: not an {FORMAT_TAG} file")
    sizes = tuple(header["field_sizes"])
    dense_dim = header["dense_dim"]
    rec = np.frombuffer(raw[nl + 1 :], dtype=_record_dtype(len(sizes), dense_dim))
    counts = header["counts"]
    if rec.size != counts["train"] + counts["val"] + counts["test"]:
        raise ValueError(f"{path}: record count does not match header")
    dense = rec["dense"].astype(np.float32) if dense_dim else np.zeros((rec.size, 0), np.float32)
    return SyntheticCtrDataset(
        field_sizes=sizes,
        sparse=rec["idx"].astype(np.int64),
        dense=dense,
        labels=rec["label"].astype(np.uint8),
        n_train=counts["train"],
        n_val=counts["val"],
        meta=header,
    )


def load_criteo_csv(
    path,
    n_dense: int = 13,
    n_sparse: int = 26,
    buckets: int | list[int] = 100_000,
    delimiter: str = "\t",
    split: tuple[float, float] = (0.8, 0.1),
) -> SyntheticCtrDataset:
    """Read a Criteo-style file: label, dense columns, then categorical strings.

    Categorical strings are hashed (CRC32 mod bucket count) to ids; missing
    dense values become 0 and present ones are ``log1p(max(x, 0))``. Rows are
    split in file order into train / validation / test by ``split``.
    """
    sizes = [buckets] * n_sparse if isinstance(buckets, int) else list(buckets)
    if len(sizes) != n_sparse:
        raise ValueError("need one bucket count per sparse column")
    labels, dense, sparse = [], [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh, delimiter=delimiter):
            if not row:
                continue
            if len(row) != 1 + n_dense + n_sparse:
                raise ValueError(f"expected {1 + n_dense + n_sparse} columns, got {len(row)}")
            labels.append(int(row[0]))
            dense.append([np.log1p(max(float(x), 0.0)) if x else 0.0 for x in row[1 : 1 + n_dense]])
            sparse.append(
                [zlib.crc32(tok.encode()) % m for tok, m in zip(row[1 + n_dense :], sizes)]
            )
    n = len(labels)
    n_train = int(n * split[0])
    n_val = int(n * split[1])
    return SyntheticCtrDataset(
        field_sizes=tuple(sizes),
        sparse=np.array(sparse, dtype=np.int64).reshape(n, n_sparse),
        dense=np.array(dense, dtype=np.float32).reshape(n, n_dense),
        labels=np.array(labels, dtype=np.uint8),
        n_train=n_train,
        n_val=n_val,
        meta={"format": FORMAT_TAG, "source": str(path), "uniform": False},
    )


def frequency_scores(ds: SyntheticCtrDataset, split: str = "test") -> np.ndarray:
    """Product over fields of (train count + 1) for each sample of ``split``."""
    freq = ds.train_freq()
    sp, _, _ = ds.split(split)
    if sp.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    score = np.ones(sp.shape[0])
    for f, counts in enumerate(freq):
        score *= counts[sp[:, f]] + 1.0
    return score


def stratify(ds: SyntheticCtrDataset, fraction: float = 0.10) -> tuple[np.ndarray, np.ndarray]:
    """Split-relative positions of the most- and least-frequent test samples.

    Test samples are ordered by (score, position); the least-frequent set is
    the first ``floor(fraction * n_test)`` of that order and the most-frequent
    set the last as many, highest score first. Sharing one order keeps the
    two sets disjoint even under heavy ties.
    """
    if ds.n_test < 1:
        raise ValueError("test split is empty")
    score = frequency_scores(ds, "test")
    m = int(np.floor(fraction * score.size))
    order = np.lexsort((np.arange(score.size), score))
    least = order[:m]
    most = order[::-1][:m]
    return most, least
