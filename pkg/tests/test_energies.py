import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gradplast.energies import (EnergyConfig, EnergyModel, density_Q, density_R, density_Rstar,
                                energy_breakdown, eval_Q_functional, eval_R_functional,
                                eval_Rstar_functional, eval_We, eval_Wp, grad_E_in_p, grad_Q)
from gradplast.errors import GrowthViolation, InvalidExponent, NonSymmetricInput
from gradplast.grid import MatrixField, VectorField, apply_tangential_mask, inner_product, norm
from gradplast.operators import OperatorContext, curl_mat, default_context, div_mat, grad_vec

from conftest import box_grid, periodic_grid, rand_mat, rand_vec

CONFIGS = [
    EnergyConfig(),
    EnergyConfig(mu=0.7, lam=2.0, visc=3.0, hp_coeff=0.4, he_coeff=0.3, delta=0.2, r=2.0),
    EnergyConfig(delta=0.1, r=1.5),
    EnergyConfig(delta=0.3, r=3.0, hp_coeff=0.1),
    EnergyConfig(q_saturation=0.5, r_quartic=0.7, he_coeff=0.2),
]


def _sym(x):
    return 0.5 * (x + np.swapaxes(x, 0, 1))


# --------------------------------------------------------------------- Q
def test_Q_zero():
    assert density_Q(np.zeros((3, 3))) == 0.0
    assert np.all(grad_Q(np.zeros((3, 3))) == 0.0)


def test_Q_identity():
    cfg = EnergyConfig(mu=1.0, lam=0.0)
    assert density_Q(np.eye(3), cfg) == pytest.approx(3.0, abs=1e-15)
    np.testing.assert_allclose(grad_Q(np.eye(3), cfg), 2 * np.eye(3), atol=1e-15)


def test_Q_default_gradient_formula(rng):
    cfg = EnergyConfig(mu=1.3, lam=0.4)
    e = _sym(rng.standard_normal((3, 3)))
    np.testing.assert_allclose(grad_Q(e, cfg), 2 * 1.3 * e + 0.4 * np.trace(e) * np.eye(3),
                               atol=1e-14)


def test_Q_rejects_nonsymmetric(rng):
    with pytest.raises(NonSymmetricInput):
        density_Q(rng.standard_normal((3, 3)))
    with pytest.raises(NonSymmetricInput):
        grad_Q(rng.standard_normal((3, 3)))


@pytest.mark.parametrize("cfg", CONFIGS)
def test_Q_gradient_finite_difference(cfg, rng):
    for _ in range(10):
        e = _sym(rng.standard_normal((3, 3)))
        d = _sym(rng.standard_normal((3, 3)))
        t = 1e-5
        fd = (density_Q(e + t * d, cfg) - density_Q(e - t * d, cfg)) / (2 * t)
        an = np.sum(grad_Q(e, cfg) * d)
        assert abs(fd - an) <= 1e-8 * max(1.0, abs(an))


# --------------------------------------------------------------------- R
def test_R_legendre_pair_unit():
    q = np.arange(9.0).reshape(3, 3)
    assert density_R(q) == pytest.approx(0.5 * np.sum(q * q))
    assert density_Rstar(q) == pytest.approx(0.5 * np.sum(q * q))
    assert density_R(q) + density_Rstar(q) == pytest.approx(np.sum(q * q), rel=1e-15)
    assert density_R(np.zeros((3, 3))) == 0.0 and density_Rstar(np.zeros((3, 3))) == 0.0


@pytest.mark.parametrize("cfg", [EnergyConfig(visc=2.5), EnergyConfig(visc=0.8, r_quartic=1.5)])
def test_fenchel_young_random(cfg, rng):
    q = rng.standard_normal((3, 3, 1000)) * 10.0 ** rng.uniform(-2, 2, 1000)
    s = rng.standard_normal((3, 3, 1000)) * 10.0 ** rng.uniform(-2, 2, 1000)
    gap = density_R(q, cfg) + density_Rstar(s, cfg) - np.sum(q * s, axis=(0, 1))
    assert gap.min() >= -1e-12 * (1 + np.abs(np.sum(q * s, axis=(0, 1)))).max()
    # equality at the subgradient s = R'(q)
    sq = cfg.R.grad(q)
    eq = density_R(q, cfg) + density_Rstar(sq, cfg) - np.sum(q * sq, axis=(0, 1))
    assert np.abs(eq).max() <= 1e-10 * (1 + np.sum(q * sq, axis=(0, 1))).max()


def test_rstar_gradient_inverts_R_gradient(rng):
    cfg = EnergyConfig(visc=0.8, r_quartic=1.5)
    q = rng.standard_normal((3, 3, 50)) * 3
    np.testing.assert_allclose(cfg.R.conj_grad(cfg.R.grad(q)), q, rtol=1e-11, atol=1e-12)


# ---------------------------------------------------------------- growth
@pytest.mark.parametrize("cfg", CONFIGS)
def test_growth_sandwich(cfg, rng):
    x = rng.standard_normal((3, 3, 10_000)) * 10.0 ** rng.uniform(-4, 4, 10_000)
    e = _sym(x)
    n2e, n2 = np.sum(e * e, axis=(0, 1)), np.sum(x * x, axis=(0, 1))
    Q, R = cfg.Q, cfg.R
    r = 1e-12
    assert np.all(Q.value(e) >= Q.lower * n2e * (1 - r)) and np.all(Q.value(e) <= Q.upper * n2e * (1 + r))
    assert np.all(R.value(x) >= R.lower * n2 * (1 - r)) and np.all(R.value(x) <= R.upper * n2 * (1 + r))
    assert np.all(R.conj(x) >= R.conj_lower * n2 * (1 - r))
    assert np.all(R.conj(x) <= R.conj_upper * n2 * (1 + r))


def test_declared_growth_checked_at_construction():
    class Bad:
        lower, upper, conj_lower, conj_upper = 1.0, 1.0, 0.5, 0.5
        value = staticmethod(lambda q: 0.1 * np.sum(q * q, axis=(0, 1)))
        conj = staticmethod(lambda s: 0.5 * np.sum(s * s, axis=(0, 1)))
    with pytest.raises(GrowthViolation):
        EnergyConfig(r_density=Bad())


@pytest.mark.parametrize("kwargs", [dict(mu=0.0), dict(visc=-1.0), dict(lam=-0.1),
                                    dict(hp_coeff=-1.0), dict(delta=-0.1)])
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        EnergyConfig(**kwargs)


def test_config_rejects_exponent():
    with pytest.raises(InvalidExponent):
        EnergyConfig(r=1.2)


# ------------------------------------------------------------- convexity
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.01, 0.99), which=st.integers(0, 4))
def test_density_convexity(seed, lam, which):
    cfg = CONFIGS[which]
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 3, 3, 64)) * 10.0 ** rng.uniform(-2, 2, (2, 1, 1, 64))
    mid = lam * x + (1 - lam) * y
    for F, a, b, m in ((cfg.Q.value, _sym(x), _sym(y), _sym(mid)), (cfg.R.value, x, y, mid),
                       (cfg.R.conj, x, y, mid)):
        scale = 1 + np.abs(F(a)) + np.abs(F(b))
        assert np.all(F(m) <= lam * F(a) + (1 - lam) * F(b) + 1e-12 * scale)


# -------------------------------------------------------- functionals
def test_We_zero_and_accommodation(rng):
    g = box_grid(5)
    cfg = EnergyConfig()
    assert eval_We(VectorField.zeros(g), MatrixField.zeros(g), cfg) == 0.0
    u = rand_vec(g, rng)
    assert eval_We(u, grad_vec(u), cfg) == 0.0


@pytest.mark.parametrize("cfg", CONFIGS)
def test_We_direct_summation(cfg, rng):
    g = box_grid((4, 5, 4))
    u, p = rand_vec(g, rng), rand_mat(g, rng)
    G = (oracles.grad_matrix(g, 3) @ u.values.ravel()).reshape((3, 3, -1))
    total = 0.0
    for n in range(g.n_nodes):
        e = _sym(G[:, :, n] - p.values.reshape(3, 3, -1)[:, :, n])
        E = _sym(G[:, :, n])
        x = np.sum(e * e)
        q = cfg.mu * x + 0.5 * cfg.lam * np.trace(e) ** 2 + 0.5 * cfg.q_saturation * x * x / (1 + x)
        total += q + 0.5 * cfg.he_coeff * np.sum(E * E)
    total *= g.cell_volume
    assert abs(eval_We(u, p, cfg) - total) <= 1e-12 * total


def test_Wp_zero_with_smoothing():
    g = periodic_grid(4)
    for cfg in CONFIGS:
        assert abs(eval_Wp(MatrixField.zeros(g), cfg)) <= 1e-10


def test_Wp_gradient_field_has_no_curl_energy(rng):
    g = periodic_grid(8)
    p = grad_vec(rand_vec(g, rng))
    assert eval_Wp(p, EnergyConfig()) <= 1e-11 * norm(p) ** 2


def test_Wp_mode_analytic():
    g = periodic_grid(8)
    x = np.meshgrid(*g.coordinates(), indexing="ij")
    k = 2 * np.pi * np.array([1.0, 2.0, -1.0])
    th = sum(ki * xi for ki, xi in zip(k, x))
    B = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, -1.0], [1.0, 0.0, 3.0]])
    p = MatrixField(g, B[:, :, None, None, None] * np.sin(th))
    expect = 0.5 * np.sum(np.cross(k[None, :], B) ** 2) * g.volume
    assert abs(eval_Wp(p, EnergyConfig()) - expect) <= 1e-10 * expect


def test_R_functionals(rng):
    g = box_grid(4)
    cfg = EnergyConfig(visc=2.0)
    q = rand_mat(g, rng)
    assert eval_R_functional(MatrixField.zeros(g), cfg) == 0.0
    S = 2.0 * q
    lhs = eval_R_functional(q, cfg) + eval_Rstar_functional(S, cfg)
    assert abs(lhs - inner_product(S, q)) <= 1e-12 * lhs
    direct = np.sum(q.values ** 2) * g.cell_volume
    assert abs(eval_R_functional(q, cfg) - direct) <= 1e-12 * direct
    assert abs(eval_Rstar_functional(q, cfg) - direct / 4) <= 1e-12 * direct
    S2 = rand_mat(g, rng)
    assert eval_R_functional(q, cfg) + eval_Rstar_functional(S2, cfg) >= inner_product(S2, q)
    e = rand_mat(g, rng)
    assert eval_Q_functional(e, cfg) >= 0


def test_energy_breakdown_total(rng):
    g = box_grid(5)
    cfg = CONFIGS[1]
    u, p, f = rand_vec(g, rng), apply_tangential_mask(rand_mat(g, rng)), rand_vec(g, rng)
    ev = energy_breakdown(u, p, f, cfg)
    assert ev.total == pytest.approx(ev.elastic + ev.plastic_hp + ev.plastic_curl
                                     + ev.plastic_grad - ev.load_work, rel=1e-15)
    assert min(ev.elastic, ev.plastic_hp, ev.plastic_curl, ev.plastic_grad) >= 0
    assert ev.elastic == pytest.approx(eval_We(u, p, cfg), rel=1e-14)
    assert ev.plastic == pytest.approx(eval_Wp(p, cfg), rel=1e-14)
    assert ev.load_work == pytest.approx(inner_product(f, u), rel=1e-14)


# ------------------------------------------------------------- gradients
def test_grad_E_zero():
    g = periodic_grid(4)
    assert np.all(grad_E_in_p(VectorField.zeros(g), MatrixField.zeros(g), EnergyConfig()).values == 0)


@pytest.mark.parametrize("cfg", CONFIGS)
@pytest.mark.parametrize("make", [lambda: box_grid(4), lambda: periodic_grid(6)])
def test_grad_E_directional_derivative(cfg, make, rng):
    g = make()
    ctx = OperatorContext(g, smoothing_eps=1e-3)
    u, p, q = rand_vec(g, rng), rand_mat(g, rng), rand_mat(g, rng)
    W = lambda a: eval_We(u, a, cfg, ctx) + eval_Wp(a, cfg, ctx)  # noqa: E731
    t = 1e-5
    fd = (W(p + t * q) - W(p - t * q)) / (2 * t)
    an = inner_product(grad_E_in_p(u, p, cfg, ctx), q)
    assert abs(fd - an) <= 1e-6 * abs(an)


@pytest.mark.parametrize("cfg", CONFIGS)
def test_grad_u_and_hessian_finite_difference(cfg, rng):
    g = box_grid(4)
    ctx = OperatorContext(g, smoothing_eps=1e-3)
    m = EnergyModel(cfg, ctx)
    u, p = rng.standard_normal((3,) + g.shape), rng.standard_normal((3, 3) + g.shape)
    du, dp = rng.standard_normal((3,) + g.shape), rng.standard_normal((3, 3) + g.shape)
    t = 1e-5
    fd = (m.elastic(u + t * du, p) - m.elastic(u - t * du, p)) / (2 * t)
    an = m.pair(m.grad_u(u, p), du)
    assert abs(fd - an) <= 1e-6 * abs(an)
    Hu, Hp = m.hess(u, p, du, dp)
    fdu = (m.grad_u(u + t * du, p + t * dp) - m.grad_u(u - t * du, p - t * dp)) / (2 * t)
    fdp = (m.grad_p(u + t * du, p + t * dp) - m.grad_p(u - t * du, p - t * dp)) / (2 * t)
    assert np.linalg.norm(fdu - Hu) <= 1e-6 * np.linalg.norm(Hu)
    assert np.linalg.norm(fdp - Hp) <= 1e-6 * np.linalg.norm(Hp)


def test_hardening_derivatives():
    cfg = EnergyConfig(hp_coeff=0.6, he_coeff=0.4)
    g = periodic_grid(4)
    m = EnergyModel(cfg, default_context(g))
    p = np.ones((3, 3) + g.shape)
    # H_p'(p) = h p for a constant field (curl and gradient terms vanish)
    np.testing.assert_allclose(m.grad_p(np.zeros((3,) + g.shape), p),
                               0.6 * p - cfg.Q.grad(-p), atol=1e-13)


def test_div_of_back_stress_without_gradient_terms(rng):
    g = periodic_grid(8)
    cfg = EnergyConfig()
    u, p = rand_vec(g, rng), rand_mat(g, rng)
    G = grad_E_in_p(u, p, cfg)
    sigma = cfg.Q.grad(_sym(grad_vec(u).values - p.values))
    residual = div_mat(G + MatrixField(g, sigma))
    assert norm(residual) <= 1e-10 * norm(G)


def test_quadratic_energy_positive_semidefinite(rng):
    cfg = EnergyConfig(hp_coeff=0.0, he_coeff=0.0, delta=0.1)
    g = box_grid(4)
    sysm = oracles.QuadraticSystem(g, cfg.mu, cfg.lam, 0.0, 0.0, 0.1)
    worst = np.inf
    for _ in range(1000):
        u, p = rand_vec(g, rng), apply_tangential_mask(rand_mat(g, rng))
        w = eval_We(u, p, cfg) + eval_Wp(p, cfg)
        worst = min(worst, w)
        assert w >= 0
    # the energy is the oracle quadratic form
    u, p = rand_vec(g, rng).values.ravel(), rand_mat(g, rng).values.ravel()
    full = 0.5 * (u @ (sysm.Huu @ u) + 2 * u @ (sysm.Hup @ p) + p @ (sysm.Hpp @ p))
    U, P = VectorField(g, u.reshape((3,) + g.shape)), MatrixField(g, p.reshape((3, 3) + g.shape))
    assert abs(eval_We(U, P, cfg) + eval_Wp(P, cfg) - full) <= 1e-12 * full
    assert worst > 0


def test_curl_energy_is_curl_norm(rng):
    g = box_grid(5)
    p = apply_tangential_mask(rand_mat(g, rng))
    assert eval_Wp(p, EnergyConfig()) == pytest.approx(norm(curl_mat(p)) ** 2, rel=1e-13)
