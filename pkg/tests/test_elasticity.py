import numpy as np
import pytest
import scipy.sparse as sp

import oracles
from gradplast.elasticity import (DisplacementSpace, check_marginal_properties, dual_norm,
                                  korn_constant, marginal_constants, marginal_value, random_samples,
                                  solve_inner)
from gradplast.energies import EnergyConfig, EnergyModel, eval_We, eval_Wp
from gradplast.errors import GridMismatch, NoConvergence
from gradplast.grid import MatrixField, VectorField, inner_product, norm
from gradplast.operators import default_context, grad_vec

from conftest import box_grid, periodic_grid, rand_mat, rand_vec, rel


def _clamped(grid, rng):
    w = rng.standard_normal((3,) + grid.shape) * grid.dirichlet_free
    return VectorField(grid, w)


def test_zero_data_gives_zero():
    g = box_grid(4)
    r = solve_inner(MatrixField.zeros(g), VectorField.zeros(g), EnergyConfig())
    assert r.value == 0.0 and np.all(r.u.values == 0.0) and r.iterations == 0


def test_compatible_plastic_strain_is_relaxed(rng):
    g = box_grid(5)
    w = _clamped(g, rng)
    r = solve_inner(grad_vec(w), VectorField.zeros(g), EnergyConfig())
    assert abs(r.value) <= 1e-10 * norm(w) ** 2
    assert rel(r.u.values, w.values) <= 1e-8


@pytest.mark.parametrize("cfg", [EnergyConfig(), EnergyConfig(mu=0.6, lam=2.0, he_coeff=0.5)])
def test_matches_dense_solve(cfg, rng):
    g = box_grid(4)
    sysm = oracles.QuadraticSystem(g, cfg.mu, cfg.lam, cfg.he_coeff)
    for _ in range(3):
        p, f = rand_mat(g, rng), rand_vec(g, rng)
        u_ref, v_ref = sysm.inner(p.values, f.values)
        r = solve_inner(p, f, cfg)
        assert rel(r.u.values, u_ref) <= 1e-8
        assert abs(r.value - v_ref) <= 1e-8 * abs(v_ref)
        assert r.residual_norm <= 1e-10 * (1 + norm(f))


def test_periodic_dense_solve_on_admissible_space(rng):
    g = periodic_grid((4, 6, 5))
    cfg = EnergyConfig(lam=0.5)
    sysm = oracles.QuadraticSystem(g, cfg.mu, cfg.lam)
    p, f = rand_mat(g, rng), rand_vec(g, rng)
    r = solve_inner(p, f, cfg)
    # projected load pairs with the minimizer exactly as the unprojected one
    b = sysm.dV * f.values.ravel() - sysm.Hup @ p.values.ravel()
    x, *_ = np.linalg.lstsq(sysm.Huu.toarray(), b, rcond=None)
    space = DisplacementSpace(default_context(g))
    x = space.project(x.reshape((3,) + g.shape))
    assert rel(r.u.values, x) <= 1e-8
    assert np.abs(space.project(r.u.values) - r.u.values).max() <= 1e-12 * np.abs(r.u.values).max()


def test_value_below_zero_displacement(rng):
    for g in (box_grid(4), periodic_grid(6)):
        cfg = EnergyConfig(he_coeff=0.2)
        p, f = rand_mat(g, rng), rand_vec(g, rng)
        r = solve_inner(p, f, cfg)
        assert r.value <= eval_We(VectorField.zeros(g), p, cfg)


def test_marginal_value_additive(rng):
    g = box_grid(4)
    cfg = EnergyConfig(delta=0.1, hp_coeff=0.3)
    p, f = rand_mat(g, rng), rand_vec(g, rng)
    assert marginal_value(MatrixField.zeros(g), VectorField.zeros(g), cfg) == pytest.approx(0.0, abs=1e-14)
    assert marginal_value(p, f, cfg) - solve_inner(p, f, cfg).value == pytest.approx(eval_Wp(p, cfg), rel=1e-13)


def test_upper_bound_E1(rng):
    # E_1(p; f) <= C (1 + ||p||^2) with C the upper growth constant of Q
    g = box_grid(4)
    cfg = EnergyConfig(mu=1.0, lam=1.0)
    C = marginal_constants(cfg, default_context(g)).C_up
    for s in (1e-2, 1.0, 1e2):
        p, f = rand_mat(g, rng, s), rand_vec(g, rng, s)
        assert solve_inner(p, f, cfg).value <= C * (1 + norm(p) ** 2)


@pytest.mark.parametrize("cfg", [EnergyConfig(), EnergyConfig(q_saturation=0.8, he_coeff=0.1)])
@pytest.mark.parametrize("make", [lambda: box_grid(4), lambda: periodic_grid(6)])
def test_minimizer_optimality(cfg, make, rng):
    g = make()
    ctx = default_context(g)
    space = DisplacementSpace(ctx)
    m = EnergyModel(cfg, ctx)
    p, f = rand_mat(g, rng), rand_vec(g, rng)
    r = solve_inner(p, f, cfg)
    tol = 1e-10 if cfg.Q.is_quadratic else 1e-8
    assert r.residual_norm <= tol * (1 + norm(f))
    grad = space.project(m.grad_u(r.u.values, p.values) - f.values)
    for _ in range(50):
        v = space.project(rng.standard_normal((3,) + g.shape))
        v /= space.norm(v)
        assert m.pair(grad, v) >= -tol * (1 + norm(f))
        assert m.pair(grad, -v) >= -tol * (1 + norm(f))


def test_unique_from_different_starts(rng):
    g = box_grid(4)
    cfg = EnergyConfig()
    p, f = rand_mat(g, rng), rand_vec(g, rng)
    a = solve_inner(p, f, cfg)
    b = solve_inner(p, f, cfg, u0=rand_vec(g, rng, 10.0))
    assert norm(a.u - b.u) <= 10 * 1e-10 * (1 + norm(f)) / korn_constant(default_context(g))


def test_iteration_cap_raises(rng):
    g = box_grid(4)
    with pytest.raises(NoConvergence):
        solve_inner(rand_mat(g, rng), rand_vec(g, rng), EnergyConfig(), max_iter=2)
    with pytest.raises(NoConvergence):
        solve_inner(rand_mat(g, rng), rand_vec(g, rng), EnergyConfig(q_saturation=1.0), max_iter=2)


def test_grid_mismatch(rng):
    with pytest.raises(GridMismatch):
        solve_inner(rand_mat(box_grid(4), rng), rand_vec(box_grid(5), rng), EnergyConfig())


def test_dual_norm_matches_dense(rng):
    g = box_grid(4)
    f = rand_vec(g, rng)
    free = oracles.u_free(g).astype(bool)
    G = oracles.grad_matrix(g, 3)
    B = (sp.identity(3 * g.n_nodes) + G.T @ G).toarray()[np.ix_(free, free)]
    fr = f.values.ravel()[free]
    ref = np.sqrt(g.cell_volume * fr @ np.linalg.solve(B, fr))
    assert dual_norm(f) == pytest.approx(ref, rel=1e-10)
    # dual pairing bound <f, v> <= ||f||_* ||v||_H1
    space = DisplacementSpace(default_context(g))
    v = VectorField(g, space.project(rng.standard_normal((3,) + g.shape)))
    assert inner_product(f, v) <= dual_norm(f) * space.h1_norm(v.values) * (1 + 1e-12)


def test_dual_norm_periodic_mode():
    g = periodic_grid(8)
    x = np.meshgrid(*g.coordinates(), indexing="ij")
    k = 2 * np.pi * np.array([1.0, 0.0, 2.0])
    f = np.zeros((3,) + g.shape)
    f[1] = np.sin(k[0] * x[0] + k[2] * x[2])
    ref = np.sqrt(0.5 * g.volume / (1 + k @ k))
    assert dual_norm(VectorField(g, f)) == pytest.approx(ref, rel=1e-12)


def test_korn_constant(rng):
    for g in (box_grid(4), periodic_grid(6)):
        ctx = default_context(g)
        k = korn_constant(ctx)
        assert 0 < k < 1
        space = DisplacementSpace(ctx)
        for _ in range(20):
            v = space.project(rng.standard_normal((3,) + g.shape))
            Gv = ctx.grad(v)
            S = 0.5 * (Gv + np.swapaxes(Gv, 0, 1))
            assert np.sum(S * S) * g.cell_volume >= k * space.h1_norm(v) ** 2 * (1 - 1e-10)


def test_property_report_identical_samples(rng):
    g = box_grid(4)
    p, f = rand_mat(g, rng), rand_vec(g, rng)
    rep = check_marginal_properties([(p, p, f, f, 0.3)], EnergyConfig())
    assert abs(rep.convexity_margin[0]) <= 1e-12
    assert abs(rep.perturbation_margin[0]) <= 1e-12
    assert rep.lipschitz_quotient[0] == 0.0
    assert rep.passed


@pytest.mark.parametrize("cfg", [EnergyConfig(), EnergyConfig(q_saturation=0.5, he_coeff=0.2)])
def test_property_report_random(cfg):
    g = box_grid(4)
    rng = np.random.default_rng(7)
    rep = check_marginal_properties(random_samples(g, 15, rng), cfg)
    assert rep.passed, rep.margins
    assert len(rep.convexity_margin) == 15
    assert all(q >= 0 for q in rep.lipschitz_quotient)
