"""Embedding-update algebra for single-layer vs. factorized training.

The loss gradient with respect to a d x n table is column sparse: a batch
of b lookups touches at most b columns. This module builds that gradient,
applies the plain update ``W - eta*G``, the first-order factorized update
``W - eta*(W1 W1^T G + G W2^T W2)`` and the exact two-layer SGD step, and
rewrites the factorized update in the basis ``{u_i v_j^T}`` formed from the
singular vectors of the two factors, where each direction is scaled by
``sigma1(i)^2 + sigma2(j)^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SvdResult, ShapeError, as_matrix, svd_full

# Full SVD of w2 stores an n x n factor; analysis paths refuse larger n.
THEORY_MAX_N = 4096


@dataclass(frozen=True)
class SparseGradient:
    """Column-sparse d x n gradient.

    ``indices`` are the distinct touched columns in ascending order and
    ``values[:, t]`` is the summed gradient for column ``indices[t]``.
    """

    d: int
    n: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def entries(self) -> dict[int, np.ndarray]:
        return {int(c): self.values[:, t] for t, c in enumerate(self.indices)}

    @property
    def nnz_columns(self) -> int:
        return int(self.indices.size)

    def densify(self) -> np.ndarray:
        out = np.zeros((self.d, self.n))
        out[:, self.indices] = self.values
        return out

    def scaled(self, alpha: float) -> SparseGradient:
        return SparseGradient(self.d, self.n, self.indices, alpha * self.values)


def sparse_gradient(per_sample, d: int, n: int) -> SparseGradient:
    """Accumulate ``(index, g)`` pairs into a :class:`SparseGradient`.

    Repeated indices are summed, so the dense form is ``sum_b g_b e_{C_b}^T``.
    """
    pairs = list(per_sample)
    if not pairs:
        return SparseGradient(d, n, np.zeros(0, dtype=np.int64), np.zeros((d, 0)))
    idx = np.array([int(c) for c, _ in pairs], dtype=np.int64)
    g = np.array([np.asarray(v, dtype=np.float64) for _, v in pairs])
    if g.ndim != 2 or g.shape[1] != d:
        raise ShapeError(f"every gradient vector must have length d={d}")
    return sparse_gradient_from_arrays(idx, g.T, d, n)


def sparse_gradient_from_arrays(idx, g, d: int, n: int) -> SparseGradient:
    """Vectorized builder: ``idx`` has length b, ``g`` is d x b."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (d, idx.size):
        raise ShapeError(f"gradient block must be {(d, idx.size)}, got {g.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"category index out of range [0, {n})")
    uniq, inverse = np.unique(idx, return_inverse=True)
    values = np.zeros((d, uniq.size))
    np.add.at(values.T, inverse, g.T)
    return SparseGradient(d, n, uniq, values)


def _check_table(w, grad: SparseGradient):
    w = as_matrix(w, "w")
    if w.shape != (grad.d, grad.n):
        raise ShapeError(f"table {w.shape} does not match gradient {(grad.d, grad.n)}")
    return w


def _check_factors(w1, w2, grad: SparseGradient):
    w1 = as_matrix(w1, "w1")
    w2 = as_matrix(w2, "w2")
    if w1.shape[1] != w2.shape[0]:
        raise ShapeError(f"inner dims differ: {w1.shape} x {w2.shape}")
    if (w1.shape[0], w2.shape[1]) != (grad.d, grad.n):
        raise ShapeError(
            f"factors {w1.shape} x {w2.shape} do not match gradient {(grad.d, grad.n)}"
        )
    return w1, w2


def conventional_update(w, grad: SparseGradient, eta: float) -> np.ndarray:
    """``W - eta*G``, writing only the touched columns."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    w = _check_table(w, grad)
    out = w.copy()
    out[:, grad.indices] -= eta * grad.values
    return out


def mlet_effective_update(w1, w2, grad: SparseGradient, eta: float) -> np.ndarray:
    """First-order factorized update ``W1W2 - eta*W1W1^T G - eta*G W2^T W2``."""
    w1, w2 = _check_factors(w1, w2, grad)
    g = grad.densify()
    return w1 @ w2 - eta * (w1 @ (w1.T @ g)) - eta * ((g @ w2.T) @ w2)


def layer_gradients(w1, w2, grad: SparseGradient) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the loss w.r.t. the two factors: ``(G W2^T, W1^T G)``.

    ``W1^T G`` is returned dense (k x n) here; it is zero outside the touched
    columns.
    """
    w1, w2 = _check_factors(w1, w2, grad)
    g1 = grad.values @ w2[:, grad.indices].T
    g2 = np.zeros_like(w2)
    g2[:, grad.indices] = w1.T @ grad.values
    return g1, g2


def two_layer_sgd_step(w1, w2, grad: SparseGradient, eta: float):
    """One exact SGD step on both factors.

    Returns ``(w1_new, w2_new, w1_new @ w2_new)``. The product differs from
    :func:`mlet_effective_update` by exactly ``eta^2 (G W2^T)(W1^T G)``.
    """
    g1, g2 = layer_gradients(w1, w2, grad)
    w1n = w1 - eta * g1
    w2n = w2 - eta * g2
    return w1n, w2n, w1n @ w2n


def second_order_term(w1, w2, grad: SparseGradient, eta: float) -> np.ndarray:
    """``eta^2 (G W2^T)(W1^T G)``, the part the first-order update drops."""
    g1, g2 = layer_gradients(w1, w2, grad)
    return eta * eta * (g1 @ g2)


@dataclass(frozen=True)
class SpectralView:
    """Gradient coordinates in the ``u_i v_j^T`` basis and the per-direction weights.

    ``sigma1`` (length d) and ``sigma2`` (length n) are zero-padded past the
    rank of each factor.
    """

    svd1: SvdResult
    svd2: SvdResult
    sigma1: np.ndarray
    sigma2: np.ndarray
    coeffs: np.ndarray
    weights: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return self.svd1.u

    @property
    def v(self) -> np.ndarray:
        return self.svd2.v

    def basis_sum(self, coeffs: np.ndarray) -> np.ndarray:
        """``sum_ij coeffs[i, j] u_i v_j^T``."""
        return self.u @ coeffs @ self.v.T


def _pad(sigma: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros(length)
    r = min(length, sigma.size)
    out[:r] = sigma[:r]
    return out


def spectral_view(w1, w2, grad: SparseGradient, method: str = "lapack") -> SpectralView:
    """Decompose ``G`` on the orthonormal basis built from the factor SVDs.

    ``coeffs[i, j] = u_i^T G v_j`` is the coordinate of vec(G) on
    ``v_j (x) u_i``; ``weights[i, j] = sigma1(i)^2 + sigma2(j)^2``.
    """
    w1, w2 = _check_factors(w1, w2, grad)
    if grad.n > THEORY_MAX_N:
        raise ShapeError(f"spectral analysis is capped at n <= {THEORY_MAX_N}, got {grad.n}")
    svd1 = svd_full(w1, method=method)
    svd2 = svd_full(w2, method=method)
    s1 = _pad(svd1.sigma, grad.d)
    s2 = _pad(svd2.sigma, grad.n)
    u, v = svd1.u, svd2.v
    coeffs = u.T @ grad.densify() @ v
    weights = s1[:, None] ** 2 + s2[None, :] ** 2
    return SpectralView(svd1, svd2, s1, s2, coeffs, weights)


def reweighted_update(view: SpectralView, w, eta: float) -> np.ndarray:
    """``W - eta * sum_ij g_ij (sigma1(i)^2 + sigma2(j)^2) u_i v_j^T``."""
    w = as_matrix(w, "w")
    if w.shape != view.coeffs.shape:
        raise ShapeError(f"table {w.shape} does not match view {view.coeffs.shape}")
    return w - eta * view.basis_sum(view.coeffs * view.weights)


def kronecker_basis(view: SpectralView) -> np.ndarray:
    """All ``v_j (x) u_i`` as columns of an (nd) x (nd) matrix, column index j*d + i.

    Only sensible for small d*n; used to check orthonormality explicitly.
    """
    d, n = view.coeffs.shape
    if d * n > 4096:
        raise ShapeError("explicit Kronecker basis limited to d*n <= 4096")
    u, v = view.u, view.v
    cols = [np.kron(v[:, j], u[:, i]) for j in range(n) for i in range(d)]
    return np.column_stack(cols)


def kronecker_coefficients(view: SpectralView, grad: SparseGradient) -> np.ndarray:
    """Coefficients via explicit projection of vec(G) (column-major) on the basis."""
    basis = kronecker_basis(view)
    vec_g = grad.densify().reshape(-1, order="F")
    d, n = view.coeffs.shape
    return (basis.T @ vec_g).reshape(n, d).T


@dataclass(frozen=True)
class FactorCensus:
    n: int
    d: int
    k: int
    informative_count: int
    sigma2_active_count: int
    nonzero_count: int
    zero_count: int


def factor_census(n: int, d: int, k: int) -> FactorCensus:
    """Count reweighting factors for generic (full-rank) factors.

    w1 has rank min(d, k) and w2 rank min(k, n). A factor is non-zero when
    either singular value is non-zero and informative when both are. For
    k < d <= n, ``nonzero = kn + (d-k)k`` and ``zero = (n-k)(d-k)``; for
    k >= d every one of the d*n factors is non-zero.
    """
    if min(n, d, k) < 1:
        raise ValueError("n, d, k must all be >= 1")
    r1 = min(d, k)
    r2 = min(k, n)
    nonzero = r1 * n + (d - r1) * r2
    return FactorCensus(
        n=n,
        d=d,
        k=k,
        informative_count=r1 * r2,
        sigma2_active_count=d * r2,
        nonzero_count=nonzero,
        zero_count=d * n - nonzero,
    )


def census_identity_check(n: int, d: int, k: int) -> bool:
    """Integer check of ``dn - (n+d-k)k == (n-k)(d-k)``; needs k < d <= n."""
    if not (1 <= k < d <= n):
        raise ValueError(f"identity is stated for k < d <= n, got n={n}, d={d}, k={k}")
    return d * n - (n + d - k) * k == (n - k) * (d - k)


def brute_force_census(w1, w2, rel_tol: float = 1e-12) -> dict:
    """Count weights above ``rel_tol * max weight`` from actual SVDs of the factors."""
    w1 = as_matrix(w1, "w1")
    w2 = as_matrix(w2, "w2")
    d, n = w1.shape[0], w2.shape[1]
    grad = SparseGradient(d, n, np.zeros(0, dtype=np.int64), np.zeros((d, 0)))
    view = spectral_view(w1, w2, grad)
    weights = view.weights
    cut = rel_tol * weights.max() if weights.max() > 0 else 0.0
    nonzero = int(np.sum(weights > cut))
    s1 = view.sigma1 > rel_tol * max(view.sigma1.max(), 1e-300)
    s2 = view.sigma2 > rel_tol * max(view.sigma2.max(), 1e-300)
    return {
        "nonzero_count": nonzero,
        "zero_count": d * n - nonzero,
        "informative_count": int(s1.sum() * s2.sum()),
        "sigma2_active_count": int(d * s2.sum()),
    }


# Cell labels for the per-direction classification grid.
SINGLE_ONE = "1"
BOTH = "both"       # sigma1 and sigma2 both non-zero
SIGMA1_ONLY = "s1"  # sigma1 non-zero, sigma2 zero
ZERO = "0"          # sigma1 zero


def classify_directions(d: int, n: int, k: int | None) -> list[list[str]]:
    """d x n grid labelling each direction ``u_i v_j^T`` for generic factors.

    ``k=None`` means single-layer training, where every direction has weight 1.
    Otherwise a direction is labelled by whether sigma1(i) is non-zero and,
    if so, whether sigma2(j) is too. Directions with sigma1(i) = 0 are
    labelled zero even when sigma2(j) > 0, so this grid is about which
    directions carry information from w1, not about the weight value.
    """
    if k is None:
        return [[SINGLE_ONE] * n for _ in range(d)]
    r1, r2 = min(d, k), min(k, n)
    grid = []
    for i in range(d):
        row = []
        for j in range(n):
            if i >= r1:
                row.append(ZERO)
            elif j < r2:
                row.append(BOTH)
            else:
                row.append(SIGMA1_ONLY)
        grid.append(row)
    return grid


def classify_from_factors(w1, w2, rel_tol: float = 1e-12) -> list[list[str]]:
    """Same labelling as :func:`classify_directions` but from measured singular values."""
    w1 = as_matrix(w1, "w1")
    w2 = as_matrix(w2, "w2")
    d, n = w1.shape[0], w2.shape[1]
    s1 = _pad(svd_full(w1).sigma, d)
    s2 = _pad(svd_full(w2).sigma, n)
    nz1 = s1 > rel_tol * max(s1.max(), 1e-300)
    nz2 = s2 > rel_tol * max(s2.max(), 1e-300)
    return [
        [ZERO if not nz1[i] else (BOTH if nz2[j] else SIGMA1_ONLY) for j in range(n)]
        for i in range(d)
    ]
