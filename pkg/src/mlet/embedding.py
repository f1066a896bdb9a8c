"""Single-layer and two-layer (factorized) embedding tables.

A table stores one d-dimensional column per category. The factorized form
keeps ``w1`` (d x k) and ``w2`` (k x n) during training; :func:`collapse`
multiplies them out so inference sees a plain d x n table.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, dump_matrix, load_matrix

SINGLE = "single"
MLET = "mlet"

_TAGS = {SINGLE: 0, MLET: 1}
_KINDS = {v: k for k, v in _TAGS.items()}


@dataclass(frozen=True)
class InitSpec:
    """Initialization for embedding layers.

    The table-shaped layer always gets Xavier-uniform; ``factor_std`` is the
    standard deviation of the Gaussian used for the extra d x k projection.
    """

    factor_std: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not self.factor_std > 0:
            raise ValueError(f"factor_std must be > 0, got {self.factor_std}")


@dataclass
class EmbeddingBundle:
    kind: str
    d: int
    n: int
    w: np.ndarray | None = None
    w1: np.ndarray | None = None
    w2: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _TAGS:
            raise ValueError(f"unknown bundle kind {self.kind!r}")
        if self.d < 1 or self.n < 1:
            raise ShapeError(f"d and n must be >= 1, got d={self.d}, n={self.n}")
        if self.kind == SINGLE:
            if self.w is None or self.w.shape != (self.d, self.n):
                raise ShapeError(f"single-layer table must be {(self.d, self.n)}")
        else:
            if self.w1 is None or self.w2 is None:
                raise ShapeError("factorized bundle needs both w1 and w2")
            if self.w1.shape[0] != self.d or self.w2.shape[1] != self.n:
                raise ShapeError(
                    f"factor shapes {self.w1.shape} x {self.w2.shape} do not give {(self.d, self.n)}"
                )
            if self.w1.shape[1] != self.w2.shape[0]:
                raise ShapeError(f"inner dims differ: {self.w1.shape} x {self.w2.shape}")

    @property
    def k(self) -> int | None:
        return self.w1.shape[1] if self.kind == MLET else None

    @property
    def is_mlet(self) -> bool:
        return self.kind == MLET

    def param_count(self) -> int:
        if self.kind == SINGLE:
            return self.d * self.n
        return self.w1.size + self.w2.size

    def table(self) -> np.ndarray:
        """The effective d x n table (materialized for factorized bundles)."""
        if self.kind == SINGLE:
            return self.w
        return self.w1 @ self.w2

    def copy(self) -> EmbeddingBundle:
        return EmbeddingBundle(
            kind=self.kind,
            d=self.d,
            n=self.n,
            w=None if self.w is None else self.w.copy(),
            w1=None if self.w1 is None else self.w1.copy(),
            w2=None if self.w2 is None else self.w2.copy(),
            meta=dict(self.meta),
        )


def xavier_uniform(rng: np.random.Generator, fan_a: int, fan_b: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_a + fan_b))
    return rng.uniform(-bound, bound, size=(fan_a, fan_b))


def init_single(d: int, n: int, spec: InitSpec | None = None) -> EmbeddingBundle:
    """d x n table drawn from U(-a, a) with a = sqrt(6 / (d + n))."""
    spec = spec or InitSpec()
    _check_dims(d=d, n=n)
    rng = np.random.default_rng(spec.seed)
    return EmbeddingBundle(SINGLE, d, n, w=xavier_uniform(rng, d, n))


def init_mlet(d: int, n: int, k: int, spec: InitSpec | None = None) -> EmbeddingBundle:
    """Factorized table: w2 (k x n) Xavier-uniform, w1 (d x k) Gaussian(0, std^2).

    ``w2`` holds one column per category like the single-layer table does,
    so it keeps the Xavier scheme; ``w1`` is the added projection layer.
    """
    spec = spec or InitSpec()
    _check_dims(d=d, n=n, k=k)
    rng = np.random.default_rng(spec.seed)
    w2 = xavier_uniform(rng, k, n)
    w1 = rng.normal(0.0, spec.factor_std, size=(d, k))
    return EmbeddingBundle(MLET, d, n, w1=w1, w2=w2)


def _check_dims(**dims):
    for name, value in dims.items():
        if int(value) < 1:
            raise ShapeError(f"{name} must be >= 1, got {value}")


def lookup(bundle: EmbeddingBundle, indices) -> np.ndarray:
    """Gather embeddings for ``indices`` as a d x b matrix.

    Factorized bundles compute ``w1 @ w2[:, idx]`` without forming the full
    table or any one-hot vectors.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValueError("query must contain at least one index")
    if idx.min() < 0 or idx.max() >= bundle.n:
        bad = idx[(idx < 0) | (idx >= bundle.n)][0]
        raise IndexError(f"category index {bad} out of range [0, {bundle.n})")
    if bundle.kind == SINGLE:
        return bundle.w[:, idx]
    return bundle.w1 @ bundle.w2[:, idx]


def collapse(bundle: EmbeddingBundle) -> EmbeddingBundle:
    """Replace (w1, w2) by their product. Single-layer input comes back as a copy
    with ``meta["collapse_noop"] = True``."""
    if bundle.kind == SINGLE:
        out = bundle.copy()
        out.meta["collapse_noop"] = True
        return out
    meta = dict(bundle.meta)
    meta["collapsed_from_k"] = bundle.k
    return EmbeddingBundle(SINGLE, bundle.d, bundle.n, w=bundle.w1 @ bundle.w2, meta=meta)


def dump_bundle(bundle: EmbeddingBundle) -> bytes:
    """One tag byte, then d, n, k as u64 LE, then the matrices in MLETMAT1 form."""
    k = bundle.k or 0
    head = struct.pack("<BQQQ", _TAGS[bundle.kind], bundle.d, bundle.n, k)
    if bundle.kind == SINGLE:
        return head + dump_matrix(bundle.w)
    return head + dump_matrix(bundle.w1) + dump_matrix(bundle.w2)


def load_bundle(buf: bytes, offset: int = 0) -> tuple[EmbeddingBundle, int]:
    tag, d, n, k = struct.unpack_from("<BQQQ", buf, offset)
    offset += struct.calcsize("<BQQQ")
    if tag not in _KINDS:
        raise ValueError(f"bad bundle tag {tag}")
    kind = _KINDS[tag]
    if kind == SINGLE:
        w, offset = load_matrix(buf, offset)
        return EmbeddingBundle(SINGLE, d, n, w=w), offset
    w1, offset = load_matrix(buf, offset)
    w2, offset = load_matrix(buf, offset)
    if w1.shape[1] != k:
        raise ValueError(f"header k={k} does not match w1 shape {w1.shape}")
    return EmbeddingBundle(MLET, d, n, w1=w1, w2=w2), offset
