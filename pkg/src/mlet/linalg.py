"""Dense float64 matrix helpers and a full SVD.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The
helpers here validate shapes and finiteness and add the few things numpy
does not give directly: a matmul with a fixed accumulation order, a full
(square-factor) SVD with a sign convention, and a tiny binary format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ShapeError",
    "SvdConvergenceError",
    "SvdResult",
    "SVD_MAX_DIM",
    "as_matrix",
    "matmul",
    "transpose",
    "scale_add",
    "frobenius_norm",
    "svd_full",
    "diag_embed",
    "dump_matrix",
    "load_matrix",
    "save_matrix",
    "read_matrix",
]

MATRIX_MAGIC = b"MLETMAT1"

# Full SVD stores an n x n right factor; beyond this the O(n^2) memory is
# not worth it for the analysis this package does.
SVD_MAX_DIM = 8192

JACOBI_MAX_SWEEPS = 60


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class SvdConvergenceError(RuntimeError):
    def __init__(self, sweeps: int, residual: float):
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})"
        )
        self.sweeps = sweeps
        self.residual = residual


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite float64 2-D array (no copy if already one)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product accumulated left to right over the inner index.

    ``out[i, j] = ((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)``, so the result
    is bit-identical to a naive triple loop and independent of BLAS
    threading. Slower than ``a @ b``; meant for the analysis paths.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for p in range(a.shape[1]):
        out += np.multiply.outer(a[:, p], b[p, :])
    return out


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(a).T)


def scale_add(a, b, alpha: float) -> np.ndarray:
    """``a + alpha * b``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"scale_add shape mismatch: {a.shape} vs {b.shape}")
    return a + alpha * b


def frobenius_norm(a) -> float:
    a = as_matrix(a)
    return float(np.sqrt(np.sum(a * a)))


@dataclass(frozen=True)
class SvdResult:
    """Full SVD ``a = u @ diag_embed(sigma) @ vt`` with square ``u`` and ``vt``."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    @property
    def v(self) -> np.ndarray:
        return self.vt.T

    def reconstruct(self) -> np.ndarray:
        return self.u @ diag_embed(self.sigma, self.u.shape[0], self.vt.shape[0]) @ self.vt


def diag_embed(sigma, rows: int, cols: int) -> np.ndarray:
    """Place ``sigma`` on the diagonal of a ``rows x cols`` zero matrix."""
    out = np.zeros((rows, cols))
    r = len(sigma)
    out[np.arange(r), np.arange(r)] = sigma
    return out


def svd_full(a, method: str = "lapack") -> SvdResult:
    """Full singular value decomposition of ``a`` (m x n).

    ``u`` is m x m and ``vt`` is n x n even when ``a`` is rank deficient:
    null-space directions are filled in with an orthonormal completion.
    ``sigma`` has length min(m, n), sorted non-increasing.

    ``method`` is ``"lapack"`` (numpy's gesdd driver) or ``"jacobi"``
    (one-sided Hestenes Jacobi written here, fine up to a few hundred
    columns). Both results go through the same sign convention: the first
    non-zero entry of every left singular vector is made non-negative, with
    the paired right vector flipped alongside.
    """
    a = as_matrix(a)
    m, n = a.shape
    if max(m, n) > SVD_MAX_DIM:
        raise ShapeError(f"svd_full supports dims up to {SVD_MAX_DIM}, got {a.shape}")
    if method == "lapack":
        u, s, vt = np.linalg.svd(a, full_matrices=True)
    elif method == "jacobi":
        u, s, vt = _jacobi_svd(a)
    else:
        raise ValueError(f"unknown svd method {method!r}")
    u, vt = _fix_signs(u, vt, len(s))
    return SvdResult(u=u, sigma=s, vt=vt)


def _fix_signs(u: np.ndarray, vt: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    u = u.copy()
    vt = vt.copy()
    for i in range(u.shape[1]):
        col = u[:, i]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            u[:, i] = -col
            if i < r:
                vt[i, :] = -vt[i, :]
    for j in range(r, vt.shape[0]):
        row = vt[j, :]
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            vt[j, :] = -row
    return u, vt


def _jacobi_svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m, n = a.shape
    if m < n:
        u, s, vt = _jacobi_svd(a.T)
        return vt.T, s, u.T
    # m >= n from here: orthogonalise the n columns of a.
    work = a.copy()
    v = np.eye(n)
    # Rotate a pair while its columns are further from orthogonal than this,
    # relative to their norms; small columns then come out as accurate as big ones.
    tol = np.finfo(float).eps * max(1.0, np.sqrt(m))
    if n > 1:
        rounds = _round_robin(n)
        for sweep in range(1, JACOBI_MAX_SWEEPS + 1):
            rotated = False
            for p, q in rounds:
                ap, aq = work[:, p], work[:, q]
                alpha = np.einsum("ij,ij->j", ap, ap)
                beta = np.einsum("ij,ij->j", aq, aq)
                gamma = np.einsum("ij,ij->j", ap, aq)
                active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
                if not active.any():
                    continue
                rotated = True
                p, q = p[active], q[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                t[zeta == 0] = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for mat in (work, v):
                    xp, xq = mat[:, p].copy(), mat[:, q]
                    mat[:, p] = c * xp - s * xq
                    mat[:, q] = s * xp + c * xq
            if not rotated:
                break
        else:
            raise SvdConvergenceError(JACOBI_MAX_SWEEPS, _off_diagonal(work))

    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    tol = max(m, n) * np.finfo(float).eps * (sigma[0] if sigma.size else 0.0)
    rank = int(np.sum(sigma > tol))
    u_r = work[:, :rank] / sigma[:rank]
    u = _complete_basis(u_r, m)
    return u, sigma, v.T


def _off_diagonal(work: np.ndarray) -> float:
    gram = work.T @ work
    np.fill_diagonal(gram, 0.0)
    return float(np.sqrt(np.sum(gram * gram) / 2.0))


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint pair schedule covering every (p, q) once per sweep."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(x, y), max(x, y)) for x, y in pairs if x >= 0 and y >= 0]
        p = np.array([x for x, _ in pairs], dtype=np.intp)
        q = np.array([y for _, y in pairs], dtype=np.intp)
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u_r: np.ndarray, m: int) -> np.ndarray:
    r = u_r.shape[1]
    if r == m:
        return u_r
    q, rr = np.linalg.qr(np.hstack([u_r, np.eye(m)]))
    signs = np.sign(np.diag(rr)[:m])
    signs[signs == 0] = 1.0
    q = q[:, :m] * signs
    q[:, :r] = u_r
    return q


def dump_matrix(a) -> bytes:
    """Serialize as ``MLETMAT1`` + rows, cols (u64 LE) + row-major f64 LE."""
    a = as_matrix(a)
    rows, cols = a.shape
    return MATRIX_MAGIC + struct.pack("<QQ", rows, cols) + a.astype("<f8").tobytes(order="C")


def load_matrix(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one matrix from ``buf`` at ``offset``; returns (matrix, next offset)."""
    end = offset + len(MATRIX_MAGIC)
    if buf[offset:end] != MATRIX_MAGIC:
        raise ValueError("bad matrix magic")
    rows, cols = struct.unpack_from("<QQ", buf, end)
    start = end + 16
    stop = start + 8 * rows * cols
    if stop > len(buf):
        raise ValueError("truncated matrix payload")
    data = np.frombuffer(buf[start:stop], dtype="<f8").astype(np.float64)
    return data.reshape(rows, cols), stop


def save_matrix(path, a) -> None:
    Path(path).write_bytes(dump_matrix(a))


def read_matrix(path) -> np.ndarray:
    m, _ = load_matrix(Path(path).read_bytes())
    return m
