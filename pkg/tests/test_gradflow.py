from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlet import gradflow as gf
from mlet.linalg import ShapeError


def rand_grad(rng, d, n, b):
    return gf.sparse_gradient_from_arrays(rng.integers(0, n, size=b), rng.normal(size=(d, b)), d, n)


def dense_oracle(per_sample, d, n):
    """Sum of g_b e_{C_b}^T built one outer product at a time."""
    out = np.zeros((d, n))
    for c, g in per_sample:
        e = np.zeros(n)
        e[c] = 1.0
        out += np.outer(g, e)
    return out


@st.composite
def factor_case(draw, d_max=6, n_max=20):
    d = draw(st.integers(1, d_max))
    n = draw(st.integers(1, n_max))
    k = draw(st.integers(1, 2 * d))
    b = draw(st.integers(1, 4))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return rng.normal(size=(d, k)), rng.normal(size=(k, n)), rand_grad(rng, d, n, b)


# -- sparse gradients ---------------------------------------------------------

def test_single_sample_gradient_column():
    g = gf.sparse_gradient([(3, [1.0, 2.0])], 2, 5).densify()
    expected = np.zeros((2, 5))
    expected[:, 3] = [1, 2]
    assert np.array_equal(g, expected)


def test_duplicate_indices_sum():
    g = gf.sparse_gradient([(1, [1.0, 2.0]), (1, [0.5, -1.0])], 2, 4)
    assert g.nnz_columns == 1
    assert np.array_equal(g.entries[1], [1.5, 1.0])


def test_batch_touches_at_most_b_columns():
    rng = np.random.default_rng(0)
    for _ in range(50):
        g = rand_grad(rng, 3, 100, 4)
        assert g.nnz_columns <= 4
        assert np.sum(np.any(g.densify() != 0, axis=0)) <= 4


def test_sparse_gradient_matches_outer_product_oracle():
    rng = np.random.default_rng(1)
    samples = [(int(rng.integers(0, 6)), rng.normal(size=3)) for _ in range(10)]
    assert np.allclose(gf.sparse_gradient(samples, 3, 6).densify(), dense_oracle(samples, 3, 6),
                       atol=1e-15)


def test_sparse_gradient_validation():
    with pytest.raises(IndexError):
        gf.sparse_gradient([(5, [1.0])], 1, 5)
    with pytest.raises(ShapeError):
        gf.sparse_gradient([(0, [1.0, 2.0])], 3, 5)


# -- single-layer and first-order factorized updates -------------------------

def test_conventional_update_trivial_cases():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(3, 8))
    g = rand_grad(rng, 3, 8, 2)
    assert np.array_equal(gf.conventional_update(w, g, 0.0), w)
    zero = gf.sparse_gradient([], 3, 8)
    assert np.array_equal(gf.conventional_update(w, zero, 0.3), w)


def test_conventional_update_matches_dense():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 9))
    g = rand_grad(rng, 4, 9, 3)
    assert np.array_equal(gf.conventional_update(w, g, 0.2), w - 0.2 * g.densify())


def test_conventional_update_rejects_negative_eta_and_bad_shape():
    g = gf.sparse_gradient([(0, [1.0])], 1, 3)
    with pytest.raises(ValueError):
        gf.conventional_update(np.zeros((1, 3)), g, -1.0)
    with pytest.raises(ShapeError):
        gf.conventional_update(np.zeros((2, 3)), g, 0.1)


def test_mlet_update_zero_gradient():
    rng = np.random.default_rng(4)
    w1, w2 = rng.normal(size=(3, 5)), rng.normal(size=(5, 7))
    assert np.array_equal(gf.mlet_effective_update(w1, w2, gf.sparse_gradient([], 3, 7), 0.1),
                          w1 @ w2)


def test_mlet_update_orthonormal_factors_double_the_step():
    rng = np.random.default_rng(5)
    d = 3
    w2, _ = np.linalg.qr(rng.normal(size=(d, d)))
    grad = gf.sparse_gradient([(1, [0.5, -1.0, 2.0])], d, d)
    got = gf.mlet_effective_update(np.eye(d), w2, grad, 0.1)
    assert np.allclose(got, w2 - 0.2 * grad.densify(), atol=1e-14)


def test_mlet_update_is_dense_for_one_column_gradient():
    rng = np.random.default_rng(6)
    w1, w2 = rng.normal(size=(3, 5)), rng.normal(size=(5, 7))
    grad = gf.sparse_gradient([(2, rng.normal(size=3))], 3, 7)
    delta = gf.mlet_effective_update(w1, w2, grad, 0.1) - w1 @ w2
    oracle = -0.1 * (w1 @ w1.T @ grad.densify() + grad.densify() @ w2.T @ w2)
    assert np.allclose(delta, oracle, atol=1e-13)
    assert grad.nnz_columns == 1
    assert np.all(np.linalg.norm(delta, axis=0) > 0)


# -- exact two-layer step -----------------------------------------------------

def test_two_layer_step_eta_zero():
    rng = np.random.default_rng(7)
    w1, w2 = rng.normal(size=(2, 3)), rng.normal(size=(3, 5))
    a, b, c = gf.two_layer_sgd_step(w1, w2, rand_grad(rng, 2, 5, 2), 0.0)
    assert np.array_equal(a, w1) and np.array_equal(b, w2) and np.array_equal(c, w1 @ w2)


def test_layer_gradients_match_dense_formulas():
    rng = np.random.default_rng(8)
    w1, w2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 9))
    grad = rand_grad(rng, 3, 9, 3)
    g1, g2 = gf.layer_gradients(w1, w2, grad)
    assert np.allclose(g1, grad.densify() @ w2.T, atol=1e-14)
    assert np.allclose(g2, w1.T @ grad.densify(), atol=1e-14)


def test_second_order_residual_elementwise_and_ratio():
    rng = np.random.default_rng(9)
    w1, w2 = rng.normal(size=(4, 6)), rng.normal(size=(6, 11))
    grad = rand_grad(rng, 4, 11, 3)
    g = grad.densify()
    ratios = []
    for eta in (1e-2, 1e-3, 1e-4):
        _, _, collapsed = gf.two_layer_sgd_step(w1, w2, grad, eta)
        residual = collapsed - gf.mlet_effective_update(w1, w2, grad, eta)
        expected = eta**2 * (g @ w2.T) @ (w1.T @ g)
        assert np.max(np.abs(residual - expected)) <= 1e-12
        ratios.append(np.linalg.norm(residual) / eta**2)
    assert (max(ratios) - min(ratios)) / max(ratios) <= 1e-6


# -- spectral view ------------------------------------------------------------

@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_basis_element_gradient_has_single_coefficient(method):
    rng = np.random.default_rng(10)
    w1, w2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 6))
    probe = gf.spectral_view(w1, w2, gf.sparse_gradient([], 3, 6), method=method)
    g_dense = np.outer(probe.u[:, 0], probe.v[:, 0])
    # a basis element is not column sparse, but the coefficient map is linear in G
    grad = gf.sparse_gradient_from_arrays(np.arange(6), g_dense, 3, 6)
    view = gf.spectral_view(w1, w2, grad, method=method)
    expected = np.zeros((3, 6))
    expected[0, 0] = 1.0
    assert np.allclose(view.coeffs, expected, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(factor_case())
def test_coefficients_reconstruct_gradient(case):
    w1, w2, grad = case
    view = gf.spectral_view(w1, w2, grad)
    g = grad.densify()
    assert np.linalg.norm(view.basis_sum(view.coeffs) - g) <= 1e-9 * max(np.linalg.norm(g), 1e-300)
    assert np.all(view.weights >= 0)
    assert view.sigma1.shape == (grad.d,) and view.sigma2.shape == (grad.n,)


def test_kronecker_gram_identity_2x3():
    rng = np.random.default_rng(11)
    w1, w2 = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
    grad = rand_grad(rng, 2, 3, 2)
    view = gf.spectral_view(w1, w2, grad)
    basis = gf.kronecker_basis(view)
    # independent construction of v_j (x) u_i with column-major vec
    for j in range(3):
        for i in range(2):
            vec = np.outer(view.u[:, i], view.v[:, j]).reshape(-1, order="F")
            assert np.allclose(basis[:, j * 2 + i], vec, atol=1e-15)
    assert np.max(np.abs(basis.T @ basis - np.eye(6))) <= 1e-10
    assert np.allclose(gf.kronecker_coefficients(view, grad), view.coeffs, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(factor_case())
def test_reweighted_update_equals_first_order_update(case):
    w1, w2, grad = case
    w = w1 @ w2
    eta = 0.1
    direct = gf.mlet_effective_update(w1, w2, grad, eta)
    spectral = gf.reweighted_update(gf.spectral_view(w1, w2, grad), w, eta)
    denom = np.linalg.norm(direct - w)
    assert np.linalg.norm(spectral - direct) <= 1e-8 * max(denom, 1e-300)


def test_reweighted_update_unit_sigmas_and_eta_zero():
    rng = np.random.default_rng(12)
    d = 3
    w1, _ = np.linalg.qr(rng.normal(size=(d, d)))
    w2, _ = np.linalg.qr(rng.normal(size=(d, d)))
    grad = rand_grad(rng, d, d, 2)
    view = gf.spectral_view(w1, w2, grad)
    assert np.allclose(view.sigma1, 1) and np.allclose(view.sigma2, 1)
    w = w1 @ w2
    assert np.allclose(gf.reweighted_update(view, w, 0.2), w - 0.4 * grad.densify(), atol=1e-14)
    assert np.array_equal(gf.reweighted_update(view, w, 0.0), w)


def test_spectral_view_caps_n():
    grad = gf.sparse_gradient([], 1, gf.THEORY_MAX_N + 1)
    with pytest.raises(ShapeError):
        gf.spectral_view(np.ones((1, 1)), np.ones((1, gf.THEORY_MAX_N + 1)), grad)


# -- census and classification ------------------------------------------------

@pytest.mark.parametrize("n,d,k,nonzero,zero,informative", [
    (5, 2, 1, 6, 4, 1),
    (5, 2, 2, 10, 0, 4),
    (5, 2, 4, 10, 0, 8),
    (100, 16, 8, 864, 736, 64),
])
def test_factor_census_values(n, d, k, nonzero, zero, informative):
    c = gf.factor_census(n, d, k)
    assert (c.nonzero_count, c.zero_count, c.informative_count) == (nonzero, zero, informative)
    assert c.nonzero_count + c.zero_count == d * n


def test_census_closed_forms_against_brute_force():
    rng = np.random.default_rng(13)
    for n in range(1, 13):
        for d in range(1, 7):
            for k in range(1, 13):
                brute = gf.brute_force_census(rng.normal(size=(d, k)), rng.normal(size=(k, n)))
                c = gf.factor_census(n, d, k)
                assert brute["nonzero_count"] == c.nonzero_count, (n, d, k)
                assert brute["informative_count"] == c.informative_count
                assert brute["sigma2_active_count"] == c.sigma2_active_count == d * min(k, n)
                assert c.informative_count == min(k, d) * min(k, n)
                if k >= d:
                    assert c.nonzero_count == d * n
                elif k <= n:
                    assert c.nonzero_count == k * n + (d - k) * k
                    assert c.zero_count == (n - k) * (d - k)


def test_census_identity():
    assert gf.census_identity_check(5, 2, 1)
    assert gf.census_identity_check(100, 16, 8)
    assert 1600 - 864 == 736 == 92 * 8
    for n in range(2, 101):
        for d in range(2, n + 1):
            for k in range(1, d):
                assert gf.census_identity_check(n, d, k)
    # k = d: both sides vanish
    assert 6 * 9 - (9 + 6 - 6) * 6 == (9 - 6) * (6 - 6) == 0
    with pytest.raises(ValueError):
        gf.census_identity_check(5, 3, 3)


def test_classification_grid_d2_n5():
    B, S, Z = gf.BOTH, gf.SIGMA1_ONLY, gf.ZERO
    assert gf.classify_directions(2, 5, None) == [["1"] * 5] * 2
    assert gf.classify_directions(2, 5, 1) == [[B, S, S, S, S], [Z] * 5]
    assert gf.classify_directions(2, 5, 2) == [[B, B, S, S, S]] * 2
    assert gf.classify_directions(2, 5, 4) == [[B, B, B, B, S]] * 2
    rng = np.random.default_rng(14)
    for k in (1, 2, 4):
        assert gf.classify_from_factors(rng.normal(size=(2, k)), rng.normal(size=(k, 5))) \
            == gf.classify_directions(2, 5, k)
    # informative cells are the BOTH cells: 1, 4, 8
    counts = [sum(row.count(B) for row in gf.classify_directions(2, 5, k)) for k in (1, 2, 4)]
    assert counts == [1, 4, 8]


# -- sparsity contrast ----------------------------------------------------------

def test_sparsity_contrast():
    rng = np.random.default_rng(15)
    d, n, k, b = 8, 1000, 32, 4
    w = rng.normal(size=(d, n))
    w1, w2 = rng.normal(size=(d, k)), rng.normal(size=(k, n))
    grad = rand_grad(rng, d, n, b)
    changed = np.linalg.norm(gf.conventional_update(w, grad, 0.2) - w, axis=0) > 0
    assert changed.sum() <= b
    _, _, collapsed = gf.two_layer_sgd_step(w1, w2, grad, 0.2)
    assert np.all(np.linalg.norm(collapsed - w1 @ w2, axis=0) > 0)
    assert np.all(np.linalg.norm(gf.mlet_effective_update(w1, w2, grad, 0.2) - w1 @ w2, axis=0) > 0)
