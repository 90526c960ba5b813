"""Energy and dissipation densities and their integrated functionals.

Densities act pointwise on arrays of shape ``(3, 3, ...)``.  The defaults
are the quadratic forms

    Q(e)   = mu |e|^2 + lam/2 tr(e)^2
    R(q)   = a/2 |q|^2,          R*(s) = |s|^2 / (2a)
    H_p(p) = h/2 |p|^2,          H_e(E) = g/2 |E|^2

and two convex non-quadratic variants add ``b/2 * chi(|x|^2)`` with
``chi(x) = x^2 / (1 + x)``, which is quartic near zero and linear in ``x``
at infinity, so quadratic growth is kept.

:class:`EnergyModel` bundles the integrated functionals and the first and
second derivatives the solvers need.  All gradients are L2 gradients with
respect to the nodal inner product of :mod:`gradplast.grid`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Protocol

import numpy as np

from .errors import GrowthViolation, GridMismatch, NonSymmetricInput
from .grid import MatrixField, VectorField
from .operators import R_MIN, OperatorContext, default_context, sym_array

__all__ = [
    "IsotropicQ",
    "ViscousR",
    "Density",
    "EnergyConfig",
    "EnergyValue",
    "EnergyModel",
    "density_Q",
    "grad_Q",
    "density_R",
    "density_Rstar",
    "eval_We",
    "eval_Wp",
    "eval_Q_functional",
    "eval_R_functional",
    "eval_Rstar_functional",
    "energy_breakdown",
    "grad_E_in_p",
]


def _sq(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=(0, 1))


def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x * y, axis=(0, 1))


def _chi(x):
    return x * x / (1.0 + x)


def _chi1(x):
    return (x * x + 2.0 * x) / (1.0 + x) ** 2


def _chi2(x):
    return 2.0 / (1.0 + x) ** 3


class Density(Protocol):
    """What a plug-in density must provide (arrays are ``(3, 3, ...)``)."""

    lower: float
    upper: float

    def value(self, x: np.ndarray) -> np.ndarray: ...

    def grad(self, x: np.ndarray) -> np.ndarray: ...

    def hess(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray: ...


class IsotropicQ:
    """``mu |e|^2 + lam/2 tr(e)^2 + b/2 chi(|e|^2)`` on symmetric matrices."""

    def __init__(self, mu: float, lam: float, saturation: float = 0.0):
        self.mu, self.lam, self.b = float(mu), float(lam), float(saturation)
        self.lower = self.mu
        self.upper = self.mu + 1.5 * self.lam + 0.5 * self.b
        # |grad Q(e)| <= slope |e|
        self.slope = 2 * self.mu + 3 * self.lam + self.b
        self.is_quadratic = self.b == 0.0

    @property
    def reference_lame(self) -> tuple[float, float]:
        return self.mu, self.lam

    def value(self, e):
        tr = np.trace(e, axis1=0, axis2=1)
        out = self.mu * _sq(e) + 0.5 * self.lam * tr * tr
        if self.b:
            out = out + 0.5 * self.b * _chi(_sq(e))
        return out

    def grad(self, e):
        tr = np.trace(e, axis1=0, axis2=1)
        out = 2 * self.mu * e + self.lam * tr * np.eye(3).reshape((3, 3) + (1,) * (e.ndim - 2))
        if self.b:
            out = out + self.b * _chi1(_sq(e)) * e
        return out

    def hess(self, e, de):
        out = self.grad_linear(de)
        if self.b:
            x = _sq(e)
            out = out + self.b * (_chi1(x) * de + 2 * _chi2(x) * _dot(e, de) * e)
        return out

    def grad_linear(self, e):
        tr = np.trace(e, axis1=0, axis2=1)
        return 2 * self.mu * e + self.lam * tr * np.eye(3).reshape((3, 3) + (1,) * (e.ndim - 2))


class ViscousR:
    """Dissipation ``a/2 |q|^2 + b/2 chi(|q|^2)`` with its convex conjugate.

    ``R*`` has a closed form only for ``b = 0``; otherwise the radial
    Legendre transform is solved by safeguarded Newton on the bracket
    ``[|s|/(a+b), |s|/a]``.
    """

    def __init__(self, visc: float, quartic: float = 0.0):
        self.a, self.b = float(visc), float(quartic)
        self.lower = 0.5 * self.a
        self.upper = 0.5 * (self.a + self.b)
        self.conj_lower = 0.5 / (self.a + self.b)
        self.conj_upper = 0.5 / self.a
        self.is_quadratic = self.b == 0.0

    @property
    def reference_visc(self) -> float:
        return self.a

    def _radial(self, t):
        return 0.5 * self.a * t * t + 0.5 * self.b * _chi(t * t)

    def _radial1(self, t):
        return t * (self.a + self.b * _chi1(t * t))

    def _radial2(self, t):
        x = t * t
        return self.a + self.b * (_chi1(x) + 4 * x * _chi2(x))

    def value(self, q):
        return self._radial(np.sqrt(_sq(q)))

    def grad(self, q):
        if not self.b:
            return self.a * q
        return (self.a + self.b * _chi1(_sq(q))) * q

    def hess(self, q, dq):
        if not self.b:
            return self.a * dq
        x = _sq(q)
        return (self.a + self.b * _chi1(x)) * dq + 2 * self.b * _chi2(x) * _dot(q, dq) * q

    def _conj_radius(self, s):
        """Maximizer t of ``s t - psi(t)`` for ``s >= 0``."""
        lo = s / (self.a + self.b)
        hi = s / self.a
        t = 0.5 * (lo + hi)
        for _ in range(60):
            f = self._radial1(t) - s
            step = f / self._radial2(t)
            t_new = t - step
            lo = np.where(f > 0, lo, t)
            hi = np.where(f > 0, t, hi)
            bad = (t_new <= lo) | (t_new >= hi)
            t_new = np.where(bad, 0.5 * (lo + hi), t_new)
            if np.all(np.abs(t_new - t) <= 1e-15 * (1 + np.abs(t))):
                t = t_new
                break
            t = t_new
        return t

    def conj(self, s):
        r = np.sqrt(_sq(s))
        if not self.b:
            return r * r / (2 * self.a)
        t = self._conj_radius(r)
        return r * t - self._radial(t)

    def conj_grad(self, s):
        if not self.b:
            return s / self.a
        r = np.sqrt(_sq(s))
        t = self._conj_radius(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, t / np.where(r > 0, r, 1.0), 1.0 / (self.a))
        return scale * s


def _sample_matrices(rng, n, symmetric):
    x = rng.standard_normal((3, 3, n)) * 10.0 ** rng.uniform(-4, 4, size=n)
    return sym_array(x) if symmetric else x


@dataclass(frozen=True)
class EnergyConfig:
    """Material parameters.  Units: mu, lam, hp_coeff, he_coeff stress;
    visc stress * time; delta stress * length^r."""

    mu: float = 1.0
    lam: float = 1.0
    visc: float = 1.0
    hp_coeff: float = 0.0
    he_coeff: float = 0.0
    delta: float = 0.0
    r: float = 2.0
    q_saturation: float = 0.0
    r_quartic: float = 0.0
    q_density: Optional[Density] = field(default=None, compare=False)
    r_density: Optional[Density] = field(default=None, compare=False)
    growth_samples: int = field(default=2000, compare=False)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.visc > 0:
            raise ValueError("visc must be positive")
        for name in ("lam", "hp_coeff", "he_coeff", "delta", "q_saturation", "r_quartic"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.r > R_MIN:
            from .errors import InvalidExponent
            raise InvalidExponent(f"r must exceed 6/5, got {self.r}")
        if self.growth_samples:
            self.check_growth(self.growth_samples)

    @cached_property
    def Q(self):
        return self.q_density or IsotropicQ(self.mu, self.lam, self.q_saturation)

    @cached_property
    def R(self):
        return self.r_density or ViscousR(self.visc, self.r_quartic)

    @property
    def c_R(self) -> float:
        return self.R.lower

    @property
    def growth_constants(self) -> tuple[float, float]:
        """Joint (c, C) for Q, R and R*."""
        R = self.R
        c = min(self.Q.lower, R.lower, R.conj_lower)
        C = max(self.Q.upper, R.upper, R.conj_upper)
        return c, C

    @property
    def is_quadratic(self) -> bool:
        return (getattr(self.Q, "is_quadratic", False) and getattr(self.R, "is_quadratic", False)
                and (self.delta == 0 or self.r == 2))

    @property
    def delta_zero_regime(self) -> bool:
        return self.delta == 0 and self.hp_coeff == 0 and self.he_coeff == 0

    def check_growth(self, n: int = 10_000, seed: int = 12345) -> None:
        """Sample the quadratic growth sandwich of Q, R and R*."""
        rng = np.random.default_rng(seed)
        e = _sample_matrices(rng, n, True)
        q = _sample_matrices(rng, n, False)
        rel = 1e-12
        checks = [
            ("Q", self.Q.value(e), _sq(e), self.Q.lower, self.Q.upper),
            ("R", self.R.value(q), _sq(q), self.R.lower, self.R.upper),
            ("R*", self.R.conj(q), _sq(q), self.R.conj_lower, self.R.conj_upper),
        ]
        for name, val, n2, c, C in checks:
            if np.any(val < c * n2 * (1 - rel)) or np.any(val > C * n2 * (1 + rel)):
                raise GrowthViolation(f"{name} violates c|x|^2 <= {name} <= C|x|^2 with c={c}, C={C}")


@dataclass(frozen=True)
class EnergyValue:
    elastic: float
    plastic_hp: float
    plastic_curl: float
    plastic_grad: float
    load_work: float

    @property
    def plastic(self) -> float:
        return self.plastic_hp + self.plastic_curl + self.plastic_grad

    @property
    def stored(self) -> float:
        """W(grad u, p) = W_e + W_p (no load term)."""
        return self.elastic + self.plastic

    @property
    def total(self) -> float:
        return self.elastic + self.plastic - self.load_work


class EnergyModel:
    """Array-level functionals and derivatives for one (config, grid) pair."""

    def __init__(self, cfg: EnergyConfig, ctx: OperatorContext):
        self.cfg = cfg
        self.ctx = ctx
        self.dV = ctx.grid.cell_volume

    def integrate(self, density: np.ndarray) -> float:
        return float(np.sum(density)) * self.dV

    def pair(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.vdot(a, b)) * self.dV

    # ------------------------------------------------------------- energies
    def strains(self, u, p):
        Gu = self.ctx.grad(u)
        return sym_array(Gu - p), sym_array(Gu)

    def elastic(self, u, p) -> float:
        e, E = self.strains(u, p)
        dens = self.cfg.Q.value(e)
        if self.cfg.he_coeff:
            dens = dens + 0.5 * self.cfg.he_coeff * _sq(E)
        return self.integrate(dens)

    def plastic_parts(self, p) -> tuple[float, float, float]:
        cfg = self.cfg
        hp = 0.5 * cfg.hp_coeff * self.integrate(_sq(p)) if cfg.hp_coeff else 0.0
        curl = self.integrate(_sq(self.ctx.curl(p)))
        grad = self.integrate(self.ctx.grad_energy_density(p, cfg.delta, cfg.r)) if cfg.delta else 0.0
        return hp, curl, grad

    def plastic(self, p) -> float:
        return sum(self.plastic_parts(p))

    def dissipation(self, q) -> float:
        return self.integrate(self.cfg.R.value(q))

    def dissipation_conj(self, s) -> float:
        return self.integrate(self.cfg.R.conj(s))

    # ---------------------------------------------------------- derivatives
    def stress(self, u, p):
        """Returns (Q'(e), H_e'(sym grad u))."""
        e, E = self.strains(u, p)
        return self.cfg.Q.grad(e), self.cfg.he_coeff * E

    def grad_u(self, u, p) -> np.ndarray:
        """L2 gradient of W_e in u (without load)."""
        s, t = self.stress(u, p)
        return self.ctx.grad_adjoint(s + t)

    def grad_p(self, u, p) -> np.ndarray:
        """L2 gradient of W(grad u, .) at p."""
        cfg = self.cfg
        s, _ = self.stress(u, p)
        out = -s + 2.0 * self.ctx.curlcurl(p)
        if cfg.hp_coeff:
            out = out + cfg.hp_coeff * p
        if cfg.delta:
            out = out + self.ctx.rlap(p, cfg.delta, cfg.r)
        return out

    def hess_uu(self, u, p, du) -> np.ndarray:
        e, _ = self.strains(u, p)
        dE = sym_array(self.ctx.grad(du))
        return self.ctx.grad_adjoint(self.cfg.Q.hess(e, dE) + self.cfg.he_coeff * dE)

    def hess(self, u, p, du, dp, lagged: bool = False):
        """Hessian of W(grad u, p) applied to (du, dp).

        ``lagged`` selects the lagged-diffusivity approximation of the
        gradient term (see :meth:`OperatorContext.rlap_hessian`).
        """
        cfg = self.cfg
        e, _ = self.strains(u, p)
        dE = sym_array(self.ctx.grad(du))
        dQ = cfg.Q.hess(e, dE - sym_array(dp))
        hu = self.ctx.grad_adjoint(dQ + cfg.he_coeff * dE)
        hp = -dQ + 2.0 * self.ctx.curlcurl(dp)
        if cfg.hp_coeff:
            hp = hp + cfg.hp_coeff * dp
        if cfg.delta:
            hp = hp + self.ctx.rlap_hessian(p, dp, cfg.delta, cfg.r, lagged)
        return hu, hp


_models: dict = {}


def _model(cfg: EnergyConfig, ctx: Optional[OperatorContext], *fields) -> EnergyModel:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatch("fields live on different grids")
    if ctx is None:
        ctx = default_context(grid)
    else:
        ctx.check(*fields)
    return EnergyModel(cfg, ctx)


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[:2] != (3, 3):
        raise ValueError("expected a 3x3 matrix or an array of shape (3, 3, ...)")
    return x


def _scalar(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


def density_Q(e, cfg: Optional[EnergyConfig] = None):
    """Q at a symmetric matrix (or an array of them)."""
    cfg = cfg or EnergyConfig()
    e = _as_matrix(e)
    if not np.allclose(e, np.swapaxes(e, 0, 1), rtol=0, atol=1e-12 * (1 + np.abs(e).max())):
        raise NonSymmetricInput("Q is defined on symmetric matrices")
    return _scalar(cfg.Q.value(e))


def grad_Q(e, cfg: Optional[EnergyConfig] = None) -> np.ndarray:
    cfg = cfg or EnergyConfig()
    e = _as_matrix(e)
    if not np.allclose(e, np.swapaxes(e, 0, 1), rtol=0, atol=1e-12 * (1 + np.abs(e).max())):
        raise NonSymmetricInput("Q is defined on symmetric matrices")
    return cfg.Q.grad(e)


def density_R(q, cfg: Optional[EnergyConfig] = None):
    cfg = cfg or EnergyConfig()
    return _scalar(cfg.R.value(_as_matrix(q)))


def density_Rstar(s, cfg: Optional[EnergyConfig] = None):
    cfg = cfg or EnergyConfig()
    return _scalar(cfg.R.conj(_as_matrix(s)))


def eval_We(u: VectorField, p: MatrixField, cfg: EnergyConfig,
            ctx: Optional[OperatorContext] = None) -> float:
    """Elastic energy: integral of Q(sym(grad u - p)) + H_e(sym grad u)."""
    return _model(cfg, ctx, u, p).elastic(u.values, p.values)


def eval_Wp(p: MatrixField, cfg: EnergyConfig, ctx: Optional[OperatorContext] = None) -> float:
    """Plastic energy: integral of H_p(p) + |curl p|^2 + delta (smoothed) |grad p|^r."""
    return _model(cfg, ctx, p).plastic(p.values)


def eval_Q_functional(e: MatrixField, cfg: EnergyConfig) -> float:
    return _model(cfg, None, e).integrate(cfg.Q.value(sym_array(e.values)))


def eval_R_functional(q: MatrixField, cfg: EnergyConfig) -> float:
    return _model(cfg, None, q).dissipation(q.values)


def eval_Rstar_functional(S: MatrixField, cfg: EnergyConfig) -> float:
    return _model(cfg, None, S).dissipation_conj(S.values)


def energy_breakdown(u: VectorField, p: MatrixField, f: VectorField, cfg: EnergyConfig,
                     ctx: Optional[OperatorContext] = None) -> EnergyValue:
    m = _model(cfg, ctx, u, p, f)
    hp, curl, grad = m.plastic_parts(p.values)
    return EnergyValue(m.elastic(u.values, p.values), hp, curl, grad, m.pair(f.values, u.values))


def grad_E_in_p(u: VectorField, p: MatrixField, cfg: EnergyConfig,
                ctx: Optional[OperatorContext] = None) -> MatrixField:
    """L2 gradient of p -> W(grad u, p); the back-stress is its negative when
    u is the elastic minimizer for p."""
    m = _model(cfg, ctx, u, p)
    return MatrixField(p.grid, m.grad_p(u.values, p.values))
