"""Inner elastic minimization and the marginal energy.

For fixed plastic strain ``p`` and load ``f`` the displacement minimizes

    J(u) = W_e(grad u, p) - <f, u>

over admissible displacements: zero on the Dirichlet face of a box, or
orthogonal to the discrete kernel of the gradient on a torus (the constant
mode and, for even node counts, the Nyquist corner modes).  On a torus only
the part of the load seen by admissible displacements enters, so loads are
projected with the same operator.

The module also provides the discrete H1 and dual H^-1 norms, the discrete
Korn constant, and a property harness for the marginal energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg, lobpcg

from . import _fourier
from .energies import EnergyConfig, EnergyModel
from .errors import GridMismatch, NoConvergence
from .grid import Grid, MatrixField, VectorField
from .operators import OperatorContext, default_context, sym_array

__all__ = [
    "InnerSolveResult",
    "PropertyReport",
    "DisplacementSpace",
    "solve_inner",
    "marginal_value",
    "h1_norm",
    "dual_norm",
    "korn_constant",
    "marginal_constants",
    "check_marginal_properties",
    "random_samples",
]


class DisplacementSpace:
    """Projection onto admissible displacements and the matching load space."""

    def __init__(self, ctx: OperatorContext):
        self.ctx = ctx
        self.grid = ctx.grid
        self.dV = self.grid.cell_volume
        if not self.grid.periodic:
            self._free = self.grid.dirichlet_free.astype(float)

    def project(self, u: np.ndarray) -> np.ndarray:
        if self.grid.periodic:
            U = self.ctx.fft(u)
            U[..., self.ctx.kernel_modes] = 0.0
            return self.ctx.ifft(U)
        return u * self._free

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(np.vdot(a, a) * self.dV))

    def h1_operator(self, v: np.ndarray) -> np.ndarray:
        """``(I + grad^T grad) v`` restricted to the admissible space."""
        return self.project(v + self.ctx.grad_adjoint(self.ctx.grad(v)))

    def h1_norm(self, u: np.ndarray) -> float:
        Gu = self.ctx.grad(u)
        return float(np.sqrt((np.vdot(u, u) + np.vdot(Gu, Gu)) * self.dV))

    def dual_norm(self, f: np.ndarray) -> float:
        """``sup <f, v> / ||v||_H1`` over admissible ``v``."""
        b = self.project(f)
        if not np.any(b):
            return 0.0
        if self.grid.periodic:
            B = self.ctx.fft(b)
            X = B / (1.0 + self.ctx.k2)
            x = self.ctx.ifft(X)
        else:
            x = _cg(self.h1_operator, b, atol=1e-13 * np.linalg.norm(b), maxiter=20 * b.size)
        return float(np.sqrt(max(np.vdot(b, x), 0.0) * self.dV))


def _cg(apply, b, atol, maxiter, x0=None, M=None):
    shape = b.shape
    n = b.size
    A = LinearOperator((n, n), matvec=lambda x: apply(x.reshape(shape)).ravel(), dtype=float)
    Mop = None
    if M is not None:
        Mop = LinearOperator((n, n), matvec=lambda x: M(x.reshape(shape)).ravel(), dtype=float)
    x, info = cg(A, b.ravel(), x0=None if x0 is None else x0.ravel(), rtol=0.0, atol=atol,
                 maxiter=maxiter, M=Mop)
    if info != 0:
        raise NoConvergence(f"conjugate gradients did not converge in {maxiter} iterations")
    return x.reshape(shape)


@dataclass(frozen=True)
class InnerSolveResult:
    u: VectorField
    value: float
    residual_norm: float
    iterations: int


class InnerSolver:
    """Reusable inner solver for one (config, grid) pair."""

    def __init__(self, cfg: EnergyConfig, ctx: OperatorContext):
        self.cfg = cfg
        self.ctx = ctx
        self.model = EnergyModel(cfg, ctx)
        self.space = DisplacementSpace(ctx)
        self.quadratic = bool(getattr(cfg.Q, "is_quadratic", False))
        self._precond = None
        self._chol = None
        if ctx.grid.periodic:
            mu, lam = getattr(cfg.Q, "reference_lame", (cfg.Q.lower, 0.0))
            H = _fourier.elastic_block(ctx, mu, lam, cfg.he_coeff)
            self._precond = _fourier.BlockSolver(ctx, H)

    def default_tol(self) -> float:
        return 1e-10 if self.quadratic else 1e-8

    def objective(self, u, p, f) -> float:
        return self.model.elastic(u, p) - self.model.pair(f, u)

    def gradient(self, u, p, f) -> np.ndarray:
        return self.space.project(self.model.grad_u(u, p) - f)

    def solve(self, p: np.ndarray, f: np.ndarray, tol: Optional[float] = None,
              u0: Optional[np.ndarray] = None, max_iter: Optional[int] = None) -> tuple:
        """Returns ``(u, value, residual_norm, iterations)`` on arrays."""
        tol = self.default_tol() if tol is None else tol
        f = self.space.project(f)
        n_dof = f.size
        max_iter = 10 * n_dof if max_iter is None else max_iter
        target = tol * (1.0 + self.space.norm(f))
        u = np.zeros_like(f) if u0 is None else self.space.project(np.asarray(u0, dtype=float))
        if self.quadratic:
            u, it = self._solve_cg(p, f, u, target, max_iter)
        else:
            u, it = self._solve_bb(p, f, u, target, max_iter)
        res = self.space.norm(self.gradient(u, p, f))
        return u, self.objective(u, p, f), res, it

    def _solve_cg(self, p, f, u, target, max_iter):
        g0 = self.gradient(u, p, f)
        if self.space.norm(g0) <= target:
            return u, 0

        def apply(v):
            return self.space.project(self.model.hess_uu(u, p, self.space.project(v)))

        M = self._precond.solve if self._precond is not None else None
        count = [0]

        def counted(v):
            count[0] += 1
            return apply(v)

        atol = target / np.sqrt(self.space.dV)
        du = _cg(counted, -g0, atol=atol, maxiter=max_iter, M=M)
        return u + self.space.project(du), count[0]

    def _reference(self, v):
        """Elastic operator of the quadratic part of Q (plus H_e)."""
        E = sym_array(self.ctx.grad(self.space.project(v)))
        lin = getattr(self.cfg.Q, "grad_linear", None)
        s = lin(E) if lin is not None else 2.0 * self.cfg.Q.lower * E
        return self.space.project(self.ctx.grad_adjoint(s + self.cfg.he_coeff * E))

    def _precondition(self, g):
        if self._precond is not None:
            return self._precond.solve(g)
        if self._chol is None and g.size <= 3 * _DENSE_LIMIT:
            idx = np.flatnonzero(np.broadcast_to(self.ctx.grid.dirichlet_free, g.shape))
            I = np.zeros((idx.size,) + g.shape)
            I.reshape(idx.size, -1)[np.arange(idx.size), idx] = 1.0
            A = np.stack([self._reference(e).ravel()[idx] for e in I], axis=1)
            self._chol = (idx, cho_factor(0.5 * (A + A.T)))
        if self._chol is not None:
            idx, fac = self._chol
            out = np.zeros(g.size)
            out[idx] = cho_solve(fac, g.ravel()[idx])
            return out.reshape(g.shape)
        return _cg(self._reference, g, atol=1e-10 * np.linalg.norm(g), maxiter=10 * g.size)

    def _solve_bb(self, p, f, u, target, max_iter):
        # Gradient descent in the metric of the reference quadratic operator,
        # which bounds the Hessian of Q from below independently of h.
        J = self.objective(u, p, f)
        g = self.gradient(u, p, f)
        step = 1.0
        for it in range(1, max_iter + 1):
            if self.space.norm(g) <= target:
                return u, it - 1
            d = -self._precondition(g)
            slope = self.model.pair(g, d)
            t = step
            while True:
                u_new = u + t * d
                J_new = self.objective(u_new, p, f)
                if J_new <= J + 1e-4 * t * slope or t < 1e-300:
                    break
                t *= 0.5
            g_new = self.gradient(u_new, p, f)
            s, y = u_new - u, g_new - g
            sy = self.model.pair(s, y)
            step = self.model.pair(s, self._reference(s)) / sy if sy > 0 else 1.0
            u, g, J = u_new, g_new, J_new
        raise NoConvergence(f"inner gradient descent did not converge in {max_iter} iterations")


def _solver(cfg: EnergyConfig, grid: Grid, ctx: Optional[OperatorContext]) -> InnerSolver:
    ctx = default_context(grid) if ctx is None else ctx
    key = (id(cfg), id(ctx))
    s = _SOLVERS.get(key)
    if s is None or s.cfg is not cfg or s.ctx is not ctx:
        s = InnerSolver(cfg, ctx)
        if len(_SOLVERS) > 16:
            _SOLVERS.clear()
        _SOLVERS[key] = s
    return s


_SOLVERS: dict = {}
_DENSE_LIMIT = 1000  # nodes up to which box preconditioners are factorized densely


def _check_pair(p: MatrixField, f: VectorField, ctx: Optional[OperatorContext]):
    if p.grid != f.grid:
        raise GridMismatch("p and f live on different grids")
    if ctx is not None:
        ctx.check(p, f)


def solve_inner(p: MatrixField, f: VectorField, cfg: EnergyConfig, tol: Optional[float] = None,
                ctx: Optional[OperatorContext] = None, u0: Optional[VectorField] = None,
                max_iter: Optional[int] = None) -> InnerSolveResult:
    """Minimize ``W_e(grad u, p) - <f, u>`` over admissible ``u``.

    Quadratic ``Q`` uses conjugate gradients on the elastic operator (with
    an exact Fourier preconditioner on periodic grids); otherwise gradient
    descent with Barzilai-Borwein steps and Armijo backtracking.  Success
    means the L2 norm of the gradient is at most ``tol * (1 + ||f||)``.
    """
    _check_pair(p, f, ctx)
    s = _solver(cfg, p.grid, ctx)
    u, value, res, it = s.solve(p.values, f.values, tol, None if u0 is None else u0.values, max_iter)
    return InnerSolveResult(VectorField(p.grid, u, dirichlet_zero=not p.grid.periodic),
                            value, res, it)


def marginal_value(p: MatrixField, f: VectorField, cfg: EnergyConfig, tol: Optional[float] = None,
                   ctx: Optional[OperatorContext] = None) -> float:
    """``E(p; f) = E_1(p; f) + W_p(p)``."""
    s = _solver(cfg, p.grid, ctx)
    return solve_inner(p, f, cfg, tol, ctx).value + s.model.plastic(p.values)


def h1_norm(u: VectorField, ctx: Optional[OperatorContext] = None) -> float:
    ctx = default_context(u.grid) if ctx is None else ctx
    return DisplacementSpace(ctx).h1_norm(u.values)


def dual_norm(f: VectorField, ctx: Optional[OperatorContext] = None) -> float:
    """Dual norm of a load with respect to the discrete H1 norm."""
    ctx = default_context(f.grid) if ctx is None else ctx
    return DisplacementSpace(ctx).dual_norm(f.values)


def korn_constant(ctx: OperatorContext) -> float:
    """Largest ``k`` with ``||sym grad v||^2 >= k ||v||_H1^2`` on admissible ``v``."""
    grid = ctx.grid
    if grid.periodic:
        k2 = ctx.k2[~ctx.kernel_modes]
        k2min = float(k2.min())
        # for a mode a exp(ik.x): |sym(a k^T)|^2 >= |k|^2 |a|^2 / 2 (a orthogonal to k)
        return 0.5 * k2min / (1.0 + k2min)
    space = DisplacementSpace(ctx)
    free = np.broadcast_to(grid.dirichlet_free, (3,) + grid.shape).ravel()
    idx = np.flatnonzero(free)
    shape = (3,) + grid.shape

    def embed(x):
        v = np.zeros(int(np.prod(shape)))
        v[idx] = x
        return v.reshape(shape)

    def A(x):
        v = embed(x)
        return ctx.grad_adjoint(sym_array(ctx.grad(v))).ravel()[idx]

    def B(x):
        return space.h1_operator(embed(x)).ravel()[idx]

    n = idx.size
    if n <= 3000:
        I = np.eye(n)
        Am = np.column_stack([A(I[:, j]) for j in range(n)])
        Bm = np.column_stack([B(I[:, j]) for j in range(n)])
        from scipy.linalg import eigh
        w = eigh(0.5 * (Am + Am.T), 0.5 * (Bm + Bm.T), eigvals_only=True, subset_by_index=[0, 0])
        return float(w[0])
    rng = np.random.default_rng(0)
    X = rng.standard_normal((n, 4))
    Aop = LinearOperator((n, n), matvec=A, dtype=float)
    Bop = LinearOperator((n, n), matvec=B, dtype=float)
    w, _ = lobpcg(Aop, X, B=Bop, largest=False, tol=1e-8, maxiter=500)
    return float(np.min(w))


@dataclass(frozen=True)
class MarginalConstants:
    """Constants of the marginal-energy estimates for one configuration.

    ``c_Q``, ``C_Q``: growth of Q.  ``korn``: discrete Korn constant.
    ``C_min``: minimizer bound ``||u||_H1 <= C_min (1 + ||p|| + ||f||_-1)``.
    ``slope``: ``|Q'(e)| <= slope |e|``.
    """

    c_Q: float
    C_Q: float
    korn: float
    C_min: float
    slope: float

    @property
    def C_up(self) -> float:
        return self.C_Q

    def coercivity(self, lam: float) -> tuple[float, float]:
        """``(c_lam, C_lam)`` in ``E_1 >= W_e/2 + c_lam ||u||^2 - lam ||p||^2 - C_lam ||f||^2``."""
        mu = 2 * lam / self.c_Q
        A = self.c_Q * mu * self.korn / (2 * (1 + mu))
        return 0.5 * A, 0.5 / A

    def lipschitz(self, lam0: float) -> float:
        """Lipschitz bound on the ball ``||f||+||g||+||p||+||q|| <= lam0``."""
        Lam = self.C_min * (1 + lam0)
        return self.slope * (Lam + lam0) + Lam


def marginal_constants(cfg: EnergyConfig, ctx: OperatorContext) -> MarginalConstants:
    c, C = cfg.Q.lower, cfg.Q.upper
    kappa = korn_constant(ctx)
    alpha = 0.5 * c * kappa
    C_min = max(1.0 / alpha, np.sqrt((C + c) / alpha))
    slope = getattr(cfg.Q, "slope", 4.0 * C)
    return MarginalConstants(c, C, kappa, float(C_min), float(slope))


@dataclass
class PropertyReport:
    """Per-sample gaps of the marginal-energy properties.

    Sign convention: every ``*_margin`` entry must be ``>= -tol`` for the
    property to hold.
    """

    convexity_margin: list = field(default_factory=list)
    upper_bound_margin: list = field(default_factory=list)
    coercivity_margin: list = field(default_factory=list)
    minimizer_bound_margin: list = field(default_factory=list)
    perturbation_margin: list = field(default_factory=list)
    lipschitz_margin: list = field(default_factory=list)
    lipschitz_quotient: list = field(default_factory=list)
    constants: Optional[MarginalConstants] = None
    tol: float = 1e-8

    def worst(self, name: str) -> float:
        vals = getattr(self, name)
        return float(min(vals)) if vals else 0.0

    @property
    def margins(self) -> dict:
        return {k: self.worst(k) for k in (
            "convexity_margin", "upper_bound_margin", "coercivity_margin",
            "minimizer_bound_margin", "perturbation_margin", "lipschitz_margin")}

    @property
    def passed(self) -> bool:
        return all(v >= -self.tol for v in self.margins.values())


def random_samples(grid: Grid, n: int, rng: np.random.Generator, scale: float = 1.0) -> list:
    """Random ``(p, q, f, g, lam)`` tuples for :func:`check_marginal_properties`."""
    out = []
    shape = grid.shape
    for _ in range(n):
        s = scale * 10.0 ** rng.uniform(-1, 1)
        p = MatrixField(grid, s * rng.standard_normal((3, 3) + shape))
        q = MatrixField(grid, s * rng.standard_normal((3, 3) + shape))
        f = VectorField(grid, s * rng.standard_normal((3,) + shape))
        g = VectorField(grid, s * rng.standard_normal((3,) + shape))
        out.append((p, q, f, g, float(rng.uniform(0.05, 0.95))))
    return out


def check_marginal_properties(samples: Iterable[Sequence], cfg: EnergyConfig,
                              ctx: Optional[OperatorContext] = None, tol: float = 1e-8,
                              coercivity_lam: float = 0.5,
                              constants: Optional[MarginalConstants] = None) -> PropertyReport:
    """Evaluate convexity, growth, minimizer, load-perturbation and Lipschitz
    properties of ``E_1`` on each ``(p, q, f, g[, lam])`` sample.

    Margins are scaled so they are comparable with ``tol``: convexity and
    perturbation gaps are divided by ``1 + |E_1|`` scales, the bounds are
    reported as ``1 - lhs / rhs``.
    """
    samples = list(samples)
    report = PropertyReport(tol=tol)
    if not samples:
        return report
    grid = samples[0][0].grid
    ctx = default_context(grid) if ctx is None else ctx
    solver = _solver(cfg, grid, ctx)
    space = solver.space
    consts = constants or marginal_constants(cfg, ctx)
    report.constants = consts
    c_lam, C_lam = consts.coercivity(coercivity_lam)
    stol = min(solver.default_tol(), 1e-10) if solver.quadratic else solver.default_tol()
    nrm = space.norm

    def E1(p, f):
        u, val, _, _ = solver.solve(p, f, stol)
        return u, val

    for smp in samples:
        p, q, f, g = (x.values for x in smp[:4])
        lam = smp[4] if len(smp) > 4 else 0.5
        up, Epf = E1(p, f)
        uq, Eqf = E1(q, f)
        ug, Epg = E1(p, g)
        uqg, Eqg = E1(q, g)
        um, Em = E1(lam * p + (1 - lam) * q, f)
        scale = 1.0 + abs(Epf) + abs(Eqf)
        report.convexity_margin.append((lam * Epf + (1 - lam) * Eqf - Em) / scale)

        P = nrm(p)
        report.upper_bound_margin.append(1.0 - Epf / (consts.C_up * (1 + P * P)))

        Fd = space.dual_norm(f)
        We = solver.model.elastic(up, p)
        H1 = space.h1_norm(up)
        lower = 0.5 * We + c_lam * H1 ** 2 - coercivity_lam * P ** 2 - C_lam * Fd ** 2
        report.coercivity_margin.append((Epf - lower) / (1.0 + abs(Epf) + abs(lower)))

        report.minimizer_bound_margin.append(1.0 - H1 / (consts.C_min * (1 + P + Fd)))

        pert = Epf - Epg + solver.model.pair(space.project(f - g), ug)
        report.perturbation_margin.append(-pert / (1.0 + abs(Epf) + abs(Epg)))

        dist = nrm(p - q) + space.dual_norm(f - g)
        if dist > 0:
            quot = abs(Epf - Eqg) / dist
            lam0 = Fd + space.dual_norm(g) + P + nrm(q)
            bound = consts.lipschitz(lam0)
            report.lipschitz_quotient.append(quot)
            report.lipschitz_margin.append(1.0 - quot / bound)
        else:
            report.lipschitz_quotient.append(0.0)
            report.lipschitz_margin.append(1.0 if Epf == Eqg else -np.inf)
    return report
