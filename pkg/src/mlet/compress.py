"""Post-training table compression: truncated SVD, int8 quantization, modulo hashing."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError, as_matrix, svd_full

QUANT_MAGIC = b"MLETQ8"
GRID_POINTS = 256


def low_rank_approx(w, r: int):
    """Rank-r truncated SVD of ``w``.

    Returns ``(left, right, recon)`` with ``left = U_r Sigma_r`` (d x r),
    ``right = V_r^T`` (r x n) and ``recon = left @ right``. Storage is
    ``r * (d + n)`` floats.
    """
    w = as_matrix(w, "w")
    d, n = w.shape
    if not 1 <= r <= min(d, n):
        raise ValueError(f"rank must be in [1, {min(d, n)}], got {r}")
    res = svd_full(w)
    left = res.u[:, :r] * res.sigma[:r]
    right = res.vt[:r, :]
    return left, right, left @ right


@dataclass(frozen=True)
class QuantizedTable:
    codes: np.ndarray  # int8, d x n
    scale: float

    def dequantize(self) -> np.ndarray:
        return self.codes.astype(np.float64) * self.scale

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    def to_bytes(self) -> bytes:
        d, n = self.codes.shape
        return (
            QUANT_MAGIC
            + struct.pack("<QQd", d, n, self.scale)
            + self.codes.astype(np.int8).tobytes(order="C")
        )

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple[QuantizedTable, int]:
        end = offset + len(QUANT_MAGIC)
        if buf[offset:end] != QUANT_MAGIC:
            raise ValueError("bad quantized-table magic")
        d, n, scale = struct.unpack_from("<QQd", buf, end)
        start = end + struct.calcsize("<QQd")
        stop = start + d * n
        codes = np.frombuffer(buf[start:stop], dtype=np.int8).reshape(d, n).copy()
        return cls(codes, scale), stop


def _codes(w: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(np.rint(w / scale), -127, 127).astype(np.int8)


def quantize_int8(w, grid_points: int = GRID_POINTS) -> QuantizedTable:
    """Symmetric per-table int8 quantization with a grid-searched scale.

    Candidate scales span [0.5, 1.5] times the max-abs scale ``max|w|/127``;
    the one with the smallest L2 reconstruction error wins (first on ties).
    An even-sized grid skips the midpoint, so the max-abs scale itself is
    tried first and the result is never worse than it.
    """
    w = as_matrix(w, "w")
    peak = float(np.max(np.abs(w)))
    if peak == 0.0:
        return QuantizedTable(np.zeros(w.shape, dtype=np.int8), 1.0)
    base = peak / 127.0
    best_scale, best_err = base, float(np.sum((w - _codes(w, base) * base) ** 2))
    for scale in base * np.linspace(0.5, 1.5, grid_points):
        err = float(np.sum((w - _codes(w, scale) * scale) ** 2))
        if err < best_err:
            best_scale, best_err = float(scale), err
    return QuantizedTable(_codes(w, best_scale), best_scale)


def quantize_with_scale(w, scale: float) -> QuantizedTable:
    w = as_matrix(w, "w")
    if not scale > 0:
        raise ValueError("scale must be positive")
    return QuantizedTable(_codes(w, scale), float(scale))


@dataclass(frozen=True)
class HashedTableSpec:
    original_n: int
    bucket_count: int

    def __post_init__(self):
        if self.bucket_count < 1:
            raise ValueError("bucket_count must be >= 1")

    def remap(self, indices) -> np.ndarray:
        return np.asarray(indices) % self.bucket_count


def apply_hash(dataset, field: int, m: int):
    """Remap one sparse field of ``dataset`` with ``index mod m``.

    Returns ``(new_dataset, HashedTableSpec)``; the new dataset's field
    cardinality is ``m`` so tables built from it are m columns wide.
    """
    if m < 1:
        raise ValueError("bucket count must be >= 1")
    n_f = dataset.field_sizes[field]
    if m > n_f:
        raise ShapeError(f"bucket count {m} exceeds field cardinality {n_f}")
    spec = HashedTableSpec(original_n=n_f, bucket_count=m)
    sparse = dataset.sparse.copy()
    sparse[:, field] = spec.remap(sparse[:, field])
    sizes = list(dataset.field_sizes)
    sizes[field] = m
    return dataset.replace(sparse=sparse, field_sizes=tuple(sizes)), spec
