"""Randomized numerical checks of the update algebra in :mod:`mlet.gradflow`.

Every check returns a :class:`CheckResult`; :func:`run_all` bundles them
into the JSON-ready report printed by ``mlet verify-theory``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gradflow as gf
from .linalg import ShapeError, svd_full

# Reweighting-factor grid for d=2, n=5 at k = 1, 2, 4, row-major over
# u_1 v_1 .. u_1 v_5, u_2 v_1 .. u_2 v_5.
B, S, Z = gf.BOTH, gf.SIGMA1_ONLY, gf.ZERO
REFERENCE_GRID = {
    None: [[gf.SINGLE_ONE] * 5, [gf.SINGLE_ONE] * 5],
    1: [[B, S, S, S, S], [Z, Z, Z, Z, Z]],
    2: [[B, B, S, S, S], [B, B, S, S, S]],
    4: [[B, B, B, B, S], [B, B, B, B, S]],
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_residual: float
    tolerance: float
    instances: int
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def random_sparse_grad(rng, d: int, n: int, b: int) -> gf.SparseGradient:
    idx = rng.integers(0, n, size=b)
    return gf.sparse_gradient_from_arrays(idx, rng.normal(size=(d, b)), d, n)


def check_reweighting(trials: int = 100, seed: int = 0, d_range=(2, 6), n_range=(5, 20),
                  b_range=(1, 4), eta: float = 0.1, tol: float = 1e-8,
                  method: str = "lapack") -> CheckResult:
    """Reweighted spectral update vs. the first-order factorized update."""
    rng = np.random.default_rng(seed)
    worst, dims = 0.0, []
    t0 = time.perf_counter()
    for _ in range(trials):
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        k = int(rng.integers(1, 2 * d + 1))
        b = int(rng.integers(b_range[0], b_range[1] + 1))
        w1 = rng.normal(size=(d, k))
        w2 = rng.normal(size=(k, n))
        grad = random_sparse_grad(rng, d, n, b)
        w = w1 @ w2
        direct = gf.mlet_effective_update(w1, w2, grad, eta)
        view = gf.spectral_view(w1, w2, grad, method=method)
        spectral = gf.reweighted_update(view, w, eta)
        rel = np.linalg.norm(spectral - direct) / np.linalg.norm(direct - w)
        if rel > worst:
            worst, dims = float(rel), [d, n, k, b]
    return CheckResult("spectral_reweighting", worst <= tol, worst, tol, trials,
                       time.perf_counter() - t0, {"worst_dims_d_n_k_b": dims, "eta": eta})


def check_second_order(trials: int = 20, seed: int = 1, etas=(1e-2, 1e-3, 1e-4),
                       tol: float = 1e-12, ratio_tol: float = 1e-6) -> CheckResult:
    """Exact two-layer step minus first-order update equals eta^2 (G W2^T)(W1^T G)."""
    rng = np.random.default_rng(seed)
    worst_elem, worst_ratio = 0.0, 0.0
    t0 = time.perf_counter()
    for _ in range(trials):
        d = int(rng.integers(2, 7))
        n = int(rng.integers(5, 21))
        k = int(rng.integers(1, 2 * d + 1))
        w1 = rng.normal(size=(d, k))
        w2 = rng.normal(size=(k, n))
        grad = random_sparse_grad(rng, d, n, int(rng.integers(1, 5)))
        ratios = []
        for eta in etas:
            _, _, collapsed = gf.two_layer_sgd_step(w1, w2, grad, eta)
            residual = collapsed - gf.mlet_effective_update(w1, w2, grad, eta)
            expected = gf.second_order_term(w1, w2, grad, eta)
            worst_elem = max(worst_elem, float(np.max(np.abs(residual - expected))))
            ratios.append(np.linalg.norm(residual) / eta**2)
        ratios = np.array(ratios)
        if ratios.max() > 0:
            spread = float((ratios.max() - ratios.min()) / ratios.max())
            worst_ratio = max(worst_ratio, spread)
    passed = worst_elem <= tol and worst_ratio <= ratio_tol
    return CheckResult("second_order_residual", passed, worst_elem, tol, trials,
                       time.perf_counter() - t0,
                       {"max_ratio_spread": worst_ratio, "ratio_tolerance": ratio_tol,
                        "etas": list(etas)})


def check_basis(seed: int = 2, max_dn: int = 64, tol: float = 1e-10,
                method: str = "lapack") -> CheckResult:
    """Gram matrix of all v_j (x) u_i is the identity, for every d*n <= max_dn."""
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    t0 = time.perf_counter()
    for d in range(1, max_dn + 1):
        for n in range(1, max_dn // d + 1):
            k = int(rng.integers(1, 2 * d + 1))
            w1 = rng.normal(size=(d, k))
            w2 = rng.normal(size=(k, n))
            grad = random_sparse_grad(rng, d, n, min(n, 3))
            view = gf.spectral_view(w1, w2, grad, method=method)
            basis = gf.kronecker_basis(view)
            gram_err = np.max(np.abs(basis.T @ basis - np.eye(d * n)))
            coeff_err = np.max(np.abs(gf.kronecker_coefficients(view, grad) - view.coeffs))
            worst = max(worst, float(gram_err), float(coeff_err))
            count += 1
    return CheckResult("kronecker_basis_orthonormal", worst <= tol, worst, tol, count,
                       time.perf_counter() - t0)


def closed_form_nonzero_count(n: int, d: int, k: int) -> int | None:
    """kn + (d-k)k for k < d, d*n for k >= d; None where k < d but k > n (not covered)."""
    if k >= d:
        return d * n
    if k > n:
        return None
    return k * n + (d - k) * k


def check_census(seed: int = 3, n_max: int = 12, d_max: int = 6, k_max: int = 12) -> CheckResult:
    """Brute-force counts from random full-rank factors vs. the closed forms."""
    rng = np.random.default_rng(seed)
    mismatches, formula_checked, formula_skipped, count = [], 0, 0, 0
    t0 = time.perf_counter()
    for n in range(1, n_max + 1):
        for d in range(1, d_max + 1):
            for k in range(1, k_max + 1):
                brute = gf.brute_force_census(rng.normal(size=(d, k)), rng.normal(size=(k, n)))
                census = gf.factor_census(n, d, k)
                count += 1
                ok = (brute["nonzero_count"] == census.nonzero_count
                      and brute["informative_count"] == census.informative_count
                      and brute["sigma2_active_count"] == census.sigma2_active_count)
                closed = closed_form_nonzero_count(n, d, k)
                if closed is None:
                    formula_skipped += 1
                else:
                    formula_checked += 1
                    ok = ok and closed == brute["nonzero_count"]
                if not ok:
                    mismatches.append([n, d, k])
    identity_cases = 0
    identity_ok = True
    for n in range(2, 101):
        for d in range(2, n + 1):
            for k in range(1, d):
                identity_cases += 1
                identity_ok &= gf.census_identity_check(n, d, k)
    passed = not mismatches and identity_ok
    return CheckResult("factor_census", passed, float(len(mismatches)), 0.0, count,
                       time.perf_counter() - t0,
                       {"mismatches": mismatches[:20],
                        "closed_form_checked": formula_checked,
                        "closed_form_not_applicable": formula_skipped,
                        "identity_cases": identity_cases, "identity_holds": bool(identity_ok)})


def direction_grids(seed: int = 4) -> dict:
    """Classification grids for d=2, n=5 from generic random factors."""
    rng = np.random.default_rng(seed)
    grids = {"single": gf.classify_directions(2, 5, None)}
    for k in (1, 2, 4):
        grids[f"k={k}"] = gf.classify_from_factors(rng.normal(size=(2, k)), rng.normal(size=(k, 5)))
    return grids


def check_direction_grid(seed: int = 4) -> CheckResult:
    t0 = time.perf_counter()
    grids = direction_grids(seed)
    ok = grids["single"] == REFERENCE_GRID[None]
    for k in (1, 2, 4):
        ok &= grids[f"k={k}"] == REFERENCE_GRID[k] == gf.classify_directions(2, 5, k)
    return CheckResult("direction_classification_d2_n5", bool(ok), 0.0 if ok else 1.0, 0.0, 4,
                       time.perf_counter() - t0, {"grids": grids})


def check_sparsity(seed: int = 5, d: int = 8, n: int = 1000, k: int = 32, b: int = 4,
                   eta: float = 0.2) -> CheckResult:
    """Columns changed by one step: at most b for a plain table, all n for the factorized one."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    w = rng.normal(size=(d, n))
    w1 = rng.normal(size=(d, k))
    w2 = rng.normal(size=(k, n))
    grad = random_sparse_grad(rng, d, n, b)
    single_changed = int(np.sum(np.linalg.norm(gf.conventional_update(w, grad, eta) - w, axis=0) > 0))
    _, _, collapsed = gf.two_layer_sgd_step(w1, w2, grad, eta)
    mlet_changed = int(np.sum(np.linalg.norm(collapsed - w1 @ w2, axis=0) > 0))
    passed = single_changed <= b and mlet_changed == n
    return CheckResult("update_sparsity_contrast", passed, 0.0, 0.0, 1, time.perf_counter() - t0,
                       {"single_changed_columns": single_changed,
                        "mlet_changed_columns": mlet_changed, "n": n, "b": b})


def check_svd(trials: int = 200, seed: int = 6, max_dim: int = 32, tol: float = 1e-10,
              method: str = "jacobi") -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(trials):
        m, n = (int(x) for x in rng.integers(1, max_dim + 1, size=2))
        a = rng.normal(size=(m, n))
        res = svd_full(a, method=method)
        worst = max(
            worst,
            float(np.linalg.norm(res.reconstruct() - a) / np.linalg.norm(a)),
            float(np.linalg.norm(res.u.T @ res.u - np.eye(m))),
            float(np.linalg.norm(res.vt @ res.vt.T - np.eye(n))),
        )
    return CheckResult(f"svd_roundtrip_{method}", worst <= tol, worst, tol, trials,
                       time.perf_counter() - t0)


def run_all(trials: int = 100, seed: int = 0, d_range=(2, 6), n_range=(5, 20),
            method: str = "lapack") -> dict:
    if n_range[1] > gf.THEORY_MAX_N:
        raise ShapeError(f"theory checks are capped at n <= {gf.THEORY_MAX_N}")
    checks = [
        check_reweighting(trials, seed, d_range, n_range, method=method),
        check_second_order(seed=seed + 1),
        check_basis(seed=seed + 2, method=method),
        check_census(seed=seed + 3),
        check_direction_grid(seed=seed + 4),
        check_sparsity(seed=seed + 5),
        check_svd(seed=seed + 6),
    ]
    return {
        "passed": all(c.passed for c in checks),
        "checks": [c.to_dict() for c in checks],
    }
