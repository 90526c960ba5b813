import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gradplast.errors import GridMismatch, InvalidExponent, TopologyUnsupported
from gradplast.grid import MatrixField, VectorField, inner_product, norm
from gradplast.operators import (OperatorContext, Scheme, curl_mat, curlcurl_mat, default_context,
                                 div_mat, grad_vec, rlaplacian_term, sym)

from conftest import box_grid, periodic_grid, rand_mat, rand_vec, rel


def _mode(grid, m):
    """Phase theta = 2 pi m.x / L and its wavevector."""
    x = np.meshgrid(*grid.coordinates(), indexing="ij")
    k = np.array([2 * np.pi * mi / L for mi, L in zip(m, grid.lengths)])
    return sum(ki * xi for ki, xi in zip(k, x)), k


# ----------------------------------------------------------------- grad_vec
def test_grad_affine_exact_on_box():
    g = box_grid((5, 6, 7), h=(0.2, 0.15, 0.1))
    A = np.array([[1.0, -2.0, 0.5], [0.3, 0.0, 4.0], [-1.0, 2.0, 3.0]])
    x = np.stack(np.meshgrid(*g.coordinates(), indexing="ij"))
    u = VectorField(g, np.einsum("ij,jxyz->ixyz", A, x) + 0.7)
    G = grad_vec(u).values
    assert np.abs(G - A[:, :, None, None, None]).max() < 1e-12


@pytest.mark.parametrize("make", [lambda: box_grid(5), lambda: periodic_grid(6)])
def test_grad_constant_is_zero(make):
    g = make()
    u = VectorField(g, np.broadcast_to(np.array([1.0, -2.0, 3.0])[:, None, None, None], (3,) + g.shape))
    assert np.abs(grad_vec(u).values).max() < 1e-12


def test_grad_sine_mode_spectral():
    g = periodic_grid((8, 8, 16), h=(0.125, 0.25, 0.1))
    th, k = _mode(g, (1, 2, 3))
    amp = np.array([1.0, -0.5, 2.0])
    u = VectorField(g, amp[:, None, None, None] * np.sin(th))
    expect = np.einsum("i,j,xyz->ijxyz", amp, k, np.cos(th))
    assert np.abs(grad_vec(u).values - expect).max() < 1e-12 * np.abs(expect).max()


def test_grad_matches_oracle_matrix(rng):
    for g in (box_grid((4, 5, 6)), periodic_grid((6, 4, 5))):
        u = rand_vec(g, rng)
        G = oracles.grad_matrix(g, 3)
        assert rel(grad_vec(u).values.ravel(), G @ u.values.ravel()) < 1e-13


def test_grid_mismatch(rng):
    u = rand_vec(periodic_grid(4), rng)
    with pytest.raises(GridMismatch):
        grad_vec(u, default_context(periodic_grid(5)))
    with pytest.raises(GridMismatch):
        curl_mat(rand_mat(periodic_grid(4), rng), default_context(periodic_grid(6)))
    with pytest.raises(GridMismatch):
        div_mat(u)


# ---------------------------------------------------------------------- sym
def test_sym_antisymmetric_and_symmetric(rng):
    g = periodic_grid(4)
    F = rng.standard_normal((3, 3) + g.shape)
    A = F - np.swapaxes(F, 0, 1)
    S = F + np.swapaxes(F, 0, 1)
    assert np.all(sym(MatrixField(g, A)).values == 0.0)
    np.testing.assert_array_equal(sym(MatrixField(g, S)).values, S)


def test_sym_self_adjoint_idempotent(rng):
    g = periodic_grid(5)
    F, G = rand_mat(g, rng), rand_mat(g, rng)
    assert abs(inner_product(sym(F), G) - inner_product(F, sym(G))) < 1e-13 * norm(F) * norm(G)
    np.testing.assert_array_equal(sym(sym(F)).values, sym(F).values)


# --------------------------------------------------------------------- curl
def test_curl_of_gradient_vanishes_spectral(rng):
    g = periodic_grid(16)
    w = rand_vec(g, rng)
    p = grad_vec(w)
    assert norm(curl_mat(p)) <= 1e-12 * norm(p)


@pytest.mark.parametrize("make", [lambda: box_grid(5), lambda: periodic_grid(6)])
def test_curl_of_constant_is_zero(make, rng):
    g = make()
    p = MatrixField(g, np.broadcast_to(rng.standard_normal((3, 3, 1, 1, 1)), (3, 3) + g.shape))
    assert np.abs(curl_mat(p).values).max() < 1e-12


def test_curl_single_mode_analytic():
    g = periodic_grid(8)
    th, k = _mode(g, (1, -2, 3))
    B = np.arange(9.0).reshape(3, 3) - 4
    p = MatrixField(g, B[:, :, None, None, None] * np.sin(th))
    # row-wise: curl(b sin(k.x)) = (k x b) cos(k.x)
    expect = np.cross(k[None, :], B)[:, :, None, None, None] * np.cos(th)
    assert np.abs(curl_mat(p).values - expect).max() < 1e-12 * np.abs(expect).max()


def test_curl_matches_oracle_matrix(rng):
    for g in (box_grid((4, 5, 6)), periodic_grid((6, 4, 5))):
        p = rand_mat(g, rng)
        C = oracles.curl_matrix(g)
        assert rel(curl_mat(p).values.ravel(), C @ p.values.ravel()) < 1e-13
        assert rel(curlcurl_mat(p).values.ravel(), C.T @ (C @ p.values.ravel())) < 1e-12


def test_curlcurl_gradient_vanishes(rng):
    g = periodic_grid(8)
    p = grad_vec(rand_vec(g, rng))
    assert norm(curlcurl_mat(p)) <= 1e-11 * norm(p)


@pytest.mark.parametrize("make", [lambda: box_grid(5), lambda: periodic_grid(8)])
def test_curlcurl_adjointness(make, rng):
    g = make()
    p, q = rand_mat(g, rng), rand_mat(g, rng)
    lhs = inner_product(curlcurl_mat(p), q)
    rhs = inner_product(curl_mat(p), curl_mat(q))
    assert abs(lhs - rhs) <= 1e-11 * abs(rhs)
    assert inner_product(curlcurl_mat(p), p) >= 0


def test_curlcurl_equals_curl_curl_periodic(rng):
    g = periodic_grid(6)
    p = rand_mat(g, rng)
    assert rel(curlcurl_mat(p).values, curl_mat(curl_mat(p)).values) < 1e-12


def test_curlcurl_mode_analytic():
    g = periodic_grid(8)
    th, k = _mode(g, (2, 1, -1))
    B = np.array([[1.0, 0.0, 2.0], [0.0, -1.0, 1.0], [3.0, 1.0, 0.0]])
    p = MatrixField(g, B[:, :, None, None, None] * np.sin(th))
    # curl curl (b sin k.x) = -k x (k x b) sin k.x
    expect = -np.cross(k, np.cross(k[None, :], B))[:, :, None, None, None] * np.sin(th)
    assert np.abs(curlcurl_mat(p).values - expect).max() < 1e-12 * np.abs(expect).max()


# ---------------------------------------------------------------------- div
def test_div_of_curlcurl_vanishes(rng):
    g = periodic_grid(8)
    p = rand_mat(g, rng)
    assert norm(div_mat(curlcurl_mat(p))) <= 1e-11 * norm(curlcurl_mat(p))


def test_div_of_constant_is_zero(rng):
    g = box_grid(5)
    S = MatrixField(g, np.broadcast_to(rng.standard_normal((3, 3, 1, 1, 1)), (3, 3) + g.shape))
    assert np.abs(div_mat(S).values).max() < 1e-12


def test_div_grad_adjoint_periodic(rng):
    g = periodic_grid((8, 6, 10))
    S, v = rand_mat(g, rng), rand_vec(g, rng)
    lhs = inner_product(S, grad_vec(v))
    # direct summation oracle for -<div S, v>
    D = oracles.axis_derivatives(g)
    Sv = S.values.reshape(3, 3, -1)
    divS = np.stack([sum(D[j] @ Sv[i, j] for j in range(3)) for i in range(3)])
    rhs = -np.sum(divS * v.values.reshape(3, -1)) * g.cell_volume
    assert abs(lhs - rhs) <= 1e-11 * norm(S) * norm(v)
    assert abs(lhs + inner_product(div_mat(S), v)) <= 1e-11 * norm(S) * norm(v)


# ---------------------------------------------------------------- r-Laplace
def test_rlaplacian_delta_zero(rng):
    g = periodic_grid(4)
    assert np.all(rlaplacian_term(rand_mat(g, rng), 0.0, 1.5).values == 0.0)


def test_rlaplacian_r2_mode():
    g = periodic_grid(8)
    th, k = _mode(g, (1, 1, 2))
    B = np.eye(3)
    mode = B[:, :, None, None, None] * np.cos(th)
    out = rlaplacian_term(MatrixField(g, mode), 0.3, 2.0).values
    expect = 2 * 0.3 * (k @ k) * mode
    assert np.abs(out - expect).max() < 1e-12 * np.abs(expect).max()


@pytest.mark.parametrize("r", [1.3, 1.5, 2.5, 3.0])
@pytest.mark.parametrize("make", [lambda: box_grid(4), lambda: periodic_grid(6)])
def test_rlaplacian_directional_derivative(r, make, rng):
    g = make()
    ctx = OperatorContext(g, smoothing_eps=1e-3)
    p, q = rand_mat(g, rng), rand_mat(g, rng)
    E = lambda a: np.sum(ctx.grad_energy_density(a, 0.7, r)) * g.cell_volume  # noqa: E731
    t = 1e-5
    fd = (E(p.values + t * q.values) - E(p.values - t * q.values)) / (2 * t)
    an = inner_product(rlaplacian_term(p, 0.7, r, ctx), q)
    assert abs(fd - an) <= 1e-6 * abs(an)


@pytest.mark.parametrize("r", [1.2, 1.0, 0.5])
def test_rlaplacian_invalid_exponent(r, rng):
    with pytest.raises(InvalidExponent):
        rlaplacian_term(rand_mat(periodic_grid(4), rng), 0.1, r)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.floats(1.25, 4.0), periodic=st.booleans())
def test_rlaplacian_monotone(seed, r, periodic):
    rng = np.random.default_rng(seed)
    g = periodic_grid(4) if periodic else box_grid(4)
    p, q = rand_mat(g, rng), rand_mat(g, rng, 0.1)
    d = rlaplacian_term(p, 0.5, r) - rlaplacian_term(q, 0.5, r)
    assert inner_product(d, p - q) >= -1e-12 * norm(p - q) * norm(d)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-2, 2), b=st.floats(-2, 2),
       periodic=st.booleans())
def test_linearity(seed, a, b, periodic):
    rng = np.random.default_rng(seed)
    g = periodic_grid(4) if periodic else box_grid(4)
    u, v = rand_vec(g, rng), rand_vec(g, rng)
    p, q = rand_mat(g, rng), rand_mat(g, rng)
    for op, x, y in ((grad_vec, u, v), (sym, p, q), (curl_mat, p, q), (curlcurl_mat, p, q),
                     (div_mat, p, q)):
        lhs = op(a * x + b * y).values
        rhs = a * op(x).values + b * op(y).values
        assert np.abs(lhs - rhs).max() <= 1e-13 * max(1.0, np.abs(rhs).max())


def test_centered_periodic_scheme_matches_stencil(rng):
    g = periodic_grid(6)
    ctx = OperatorContext(g, Scheme.CENTERED)
    u = rand_vec(g, rng)
    G = ctx.grad(u.values)
    for j, h in enumerate(g.spacing):
        ax = 1 + j
        fd = (np.roll(u.values, -1, ax) - np.roll(u.values, 1, ax)) / (2 * h)
        assert np.abs(G[:, j] - fd).max() < 1e-12


def test_spectral_needs_periodic():
    with pytest.raises(TopologyUnsupported):
        OperatorContext(box_grid(4), Scheme.SPECTRAL)
