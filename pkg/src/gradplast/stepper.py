"""Incremental time stepping for the visco-plastic evolution.

Each step minimizes jointly over ``(u, p)``

    G_k(u, p) = W_e(grad u, p) - <f_k, u> + W_p(p) + tau * R((p - p_prev) / tau)

which is equivalent to minimizing ``E(p; f_k) + tau R((p - p_prev)/tau)``
over ``p`` alone.  The back-stress is read off the flow rule,
``Sigma_k = R'((p_k - p_prev) / tau)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import _fourier
from .elasticity import DisplacementSpace, InnerSolver
from .energies import EnergyConfig, EnergyModel
from .errors import (ConfigError, ConfigMismatch, IncompleteTrajectory, InvalidN,
                     NoConvergence, TauTooLarge)
from .grid import Grid, MatrixField, VectorField, tangential_keep_mask
from .operators import OperatorContext, default_context

__all__ = [
    "LoadSchedule",
    "DiscreteLoads",
    "StepResult",
    "StepProblem",
    "TrajectoryRecord",
    "InterpolantBundle",
    "discretize_loads",
    "incremental_step",
    "run",
    "interpolants",
    "shift_metric",
    "time_shift_table",
    "divergence_certificate",
    "equilibrium",
]

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(5)


# ------------------------------------------------------------------- loads
@dataclass(frozen=True)
class LoadSchedule:
    """A body force ``f(t)`` on a grid for ``t`` in ``[0, T]``.

    ``evaluator`` maps a time to an array of shape ``(3, nx, ny, nz)``.
    ``knots`` lists the breakpoints of a piecewise-smooth schedule (used to
    split quadrature intervals); ``kind`` is ``"analytic"`` or
    ``"tabulated"``.
    """

    evaluator: Callable[[float], np.ndarray]
    T: float
    grid: Grid
    kind: str = "analytic"
    knots: tuple = ()

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("the time horizon T must be positive")

    def __call__(self, t: float) -> VectorField:
        return VectorField(self.grid, self.values(t))

    def values(self, t: float) -> np.ndarray:
        v = np.asarray(self.evaluator(float(t)), dtype=float)
        if v.shape != (3,) + self.grid.shape:
            raise ConfigError(f"load has shape {v.shape}, expected {(3,) + self.grid.shape}")
        return v

    @classmethod
    def separable(cls, grid: Grid, shape: np.ndarray, profile: Callable[[float], float],
                  T: float) -> "LoadSchedule":
        """``f(t, x) = profile(t) * shape(x)``."""
        shape = np.array(shape, dtype=float)
        return cls(lambda t: profile(t) * shape, T, grid)

    @classmethod
    def tabulated(cls, grid: Grid, times: Sequence[float], values: np.ndarray,
                  T: Optional[float] = None) -> "LoadSchedule":
        """Piecewise-linear interpolation of snapshots ``values[i]`` at ``times[i]``."""
        times = np.asarray(times, dtype=float)
        values = np.array(values, dtype=float)
        T = float(times[-1]) if T is None else float(T)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ConfigError("tabulated load times must be strictly increasing")
        if times[0] > 0 or times[-1] < T:
            raise ConfigError("tabulated load knots must cover [0, T]")
        if values.shape != (times.size, 3) + grid.shape:
            raise ConfigError("tabulated load values have the wrong shape")

        def ev(t):
            i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
            w = (t - times[i]) / (times[i + 1] - times[i])
            return (1 - w) * values[i] + w * values[i + 1]

        return cls(ev, T, grid, "tabulated", tuple(times.tolist()))


@dataclass(frozen=True)
class DiscreteLoads:
    """Time-averaged loads ``f_0 .. f_N`` and the load bound ``Lambda_f``.

    ``values`` has shape ``(N + 1, 3, nx, ny, nz)``; on periodic grids the
    loads are restricted to the part seen by admissible displacements.
    ``Lambda_parts`` holds the three squared contributions of ``Lambda_f^2``.
    """

    N: int
    tau: float
    T: float
    grid: Grid
    values: np.ndarray
    Lambda_f: float
    Lambda_parts: tuple

    @property
    def loads(self) -> list:
        return [VectorField(self.grid, v) for v in self.values]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)


def _interval_average(schedule: LoadSchedule, a: float, b: float) -> np.ndarray:
    cuts = [a] + [t for t in schedule.knots if a < t < b] + [b]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for x, w in zip(_GAUSS_X, _GAUSS_W):
            total = total + (w * half) * schedule.values(mid + half * x)
    return total / (b - a)


def discretize_loads(schedule: LoadSchedule, N: int,
                     ctx: Optional[OperatorContext] = None) -> DiscreteLoads:
    """``f_0 = f_1 = f(0)`` and ``f_k`` the average of ``f`` over ``(t_{k-1}, t_k)``."""
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)) or N < 2:
        raise InvalidN(f"N must be an integer >= 2, got {N!r}")
    N = int(N)
    ctx = default_context(schedule.grid) if ctx is None else ctx
    space = DisplacementSpace(ctx)
    tau = schedule.T / N
    f = np.empty((N + 1, 3) + schedule.grid.shape)
    f[0] = f[1] = schedule.values(0.0)
    for k in range(2, N + 1):
        f[k] = _interval_average(schedule, (k - 1) * tau, k * tau)
    for k in range(N + 1):
        f[k] = space.project(f[k])
    f.setflags(write=False)
    l2 = sum(tau * space.norm(fk) ** 2 for fk in f)
    dual_max = max(space.dual_norm(fk) ** 2 for fk in f[1:])
    rate = sum(tau * space.dual_norm((f[k] - f[k - 1]) / tau) ** 2 for k in range(1, N + 1))
    return DiscreteLoads(N, tau, schedule.T, schedule.grid, f,
                         float(math.sqrt(l2 + dual_max + rate)), (l2, dual_max, rate))


# -------------------------------------------------------------- one step
@dataclass(frozen=True)
class StepResult:
    p: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    diagnostics: dict


class StepProblem:
    """Joint ``(u, p)`` minimization of the incremental functional."""

    def __init__(self, cfg: EnergyConfig, ctx: OperatorContext):
        self.cfg = cfg
        self.ctx = ctx
        self.model = EnergyModel(cfg, ctx)
        self.space = DisplacementSpace(ctx)
        self.inner = InnerSolver(cfg, ctx)
        self.dV = ctx.grid.cell_volume
        self.periodic = ctx.grid.periodic
        self.mask = None if self.periodic else tangential_keep_mask(ctx.grid).astype(float)
        self.quadratic = cfg.is_quadratic
        # Newton oscillates on |x|^r for r < 2; the lagged operator does not
        self.lagged = bool(cfg.delta) and cfg.r < 2
        self._precond_cache = {}

    # ------------------------------------------------------------ helpers
    def mask_p(self, p: np.ndarray) -> np.ndarray:
        return p if self.mask is None else p * self.mask

    def norm2(self, a: np.ndarray) -> float:
        return float(np.vdot(a, a)) * self.dV

    def default_tol(self) -> float:
        return 1e-10 if self.quadratic else 1e-8

    def objective(self, u, p, f, p_prev, tau):
        m = self.model
        val = m.elastic(u, p) - m.pair(f, u) + m.plastic(p)
        if tau is not None:
            val += tau * m.dissipation((p - p_prev) / tau)
        return val

    def gradient(self, u, p, f, p_prev, tau):
        m = self.model
        gu = self.space.project(m.grad_u(u, p) - f)
        gp = m.grad_p(u, p)
        if tau is not None:
            gp = gp + self.cfg.R.grad((p - p_prev) / tau)
        return gu, self.mask_p(gp)

    def hessp(self, u, p, p_prev, tau, du, dp):
        du = self.space.project(du)
        dp = self.mask_p(dp)
        hu, hp = self.model.hess(u, p, du, dp, lagged=self.lagged)
        if tau is not None:
            hp = hp + self.cfg.R.hess((p - p_prev) / tau, dp) / tau
        return self.space.project(hu), self.mask_p(hp)

    def _preconditioner(self, p, p_prev, tau):
        if not self.periodic:
            return None
        cfg = self.cfg
        mu, lam = getattr(cfg.Q, "reference_lame", (cfg.Q.lower, 0.0))
        if cfg.delta:
            grad_coeff = cfg.delta * float(np.mean(self.ctx.rlap_modulus(p, cfg.r)))
        else:
            grad_coeff = 0.0
        a = getattr(cfg.R, "reference_visc", 2 * cfg.R.lower)
        vt = 0.0 if tau is None else a / tau
        key = (round(grad_coeff, 12), vt)
        if key not in self._precond_cache:
            if len(self._precond_cache) > 8:
                self._precond_cache.clear()
            H = _fourier.joint_block(self.ctx, mu, lam, cfg.he_coeff, cfg.hp_coeff, grad_coeff, vt)
            self._precond_cache[key] = _fourier.BlockSolver(self.ctx, H)
        return self._precond_cache[key]

    # -------------------------------------------------------------- solve
    def solve(self, p_prev: np.ndarray, f: np.ndarray, tau: Optional[float],
              tol: Optional[float] = None, u0: Optional[np.ndarray] = None,
              p0: Optional[np.ndarray] = None, max_newton: int = 100) -> StepResult:
        """Minimize the incremental functional; ``tau=None`` drops dissipation."""
        tol = self.default_tol() if tol is None else tol
        f = self.space.project(f)
        p_prev = self.mask_p(p_prev)
        u = np.zeros_like(f) if u0 is None else self.space.project(u0)
        p = p_prev.copy() if p0 is None else self.mask_p(np.array(p0, dtype=float))
        target = tol * (1.0 + math.sqrt(self.norm2(f)))
        nu = f.size
        cg_total = 0
        newton = 0
        history = []
        gu, gp = self.gradient(u, p, f, p_prev, tau)
        gnorm = math.sqrt(self.norm2(gu) + self.norm2(gp))
        obj = self.objective(u, p, f, p_prev, tau)
        # stop with headroom so the displacement polish cannot push us over
        while gnorm > 0.5 * target:
            if newton >= max_newton:
                exc = NoConvergence(f"Newton iteration stalled at gradient norm {gnorm:.3e}")
                exc.history = history
                raise exc
            newton += 1
            forcing = 0.0 if self.quadratic else min(0.1, math.sqrt(gnorm))
            atol = max(forcing * gnorm, 0.5 * target) / math.sqrt(self.dV)
            du, dp, its = self._newton_direction(u, p, p_prev, tau, gu, gp, atol, nu)
            cg_total += its
            slope = float(np.vdot(gu, du) + np.vdot(gp, dp)) * self.dV
            if self.quadratic:
                u, p = u + du, p + dp
            else:
                t = 1.0
                while True:
                    u_t, p_t = u + t * du, p + t * dp
                    obj_t = self.objective(u_t, p_t, f, p_prev, tau)
                    if obj_t <= obj + 1e-4 * t * slope:
                        break
                    if abs(obj_t - obj) <= 1e-14 * (1 + abs(obj)):
                        # objective differences are below round-off; rely on the gradient
                        gu_t, gp_t = self.gradient(u_t, p_t, f, p_prev, tau)
                        if self.norm2(gu_t) + self.norm2(gp_t) < gnorm ** 2:
                            break
                    t *= 0.5
                    if t < 1e-12:
                        raise NoConvergence("line search failed in the incremental step")
                u, p, obj = u_t, p_t, obj_t
            gu, gp = self.gradient(u, p, f, p_prev, tau)
            gnorm = math.sqrt(self.norm2(gu) + self.norm2(gp))
            history.append((gnorm, its))
            if self.quadratic:
                obj = self.objective(u, p, f, p_prev, tau)
        # polish the displacement for the accepted plastic strain
        u, _, _, inner_its = self.inner.solve(p, f, 0.1 * tol, u0=u)
        sigma = (self.cfg.R.grad((p - p_prev) / tau) if tau is not None else np.zeros_like(p))
        gW = self.mask_p(self.model.grad_p(u, p))
        diag = {
            "newton_iterations": newton,
            "cg_iterations": cg_total,
            "inner_iterations": inner_its,
            "gradient_norm": gnorm,
            "target": target,
            "stationarity": math.sqrt(self.norm2(sigma + gW)) / (1.0 + math.sqrt(self.norm2(f))),
        }
        return StepResult(p, sigma, u, diag)

    def _newton_direction(self, u, p, p_prev, tau, gu, gp, atol, nu):
        shape_u, shape_p = gu.shape, gp.shape

        def split(x):
            return x[:nu].reshape(shape_u), x[nu:].reshape(shape_p)

        def matvec(x):
            a, b = split(x)
            hu, hp = self.hessp(u, p, p_prev, tau, a, b)
            count[0] += 1
            return np.concatenate([hu.ravel(), hp.ravel()])

        count = [0]
        n = nu + gp.size
        A = LinearOperator((n, n), matvec=matvec, dtype=float)
        M = None
        pre = self._preconditioner(p, p_prev, tau)
        if pre is not None:
            def msolve(x):
                a, b = split(x)
                y = pre.solve(np.concatenate([a, b.reshape((9,) + a.shape[1:])]))
                ya = self.space.project(y[:3])
                yb = self.mask_p(y[3:].reshape(shape_p))
                return np.concatenate([ya.ravel(), yb.ravel()])
            M = LinearOperator((n, n), matvec=msolve, dtype=float)
        b = -np.concatenate([gu.ravel(), gp.ravel()])
        x, info = cg(A, b, rtol=0.0, atol=atol, maxiter=10 * n, M=M)
        if info != 0 and self.quadratic:
            raise NoConvergence("conjugate gradients did not converge in the incremental step")
        du, dp = split(x)
        return self.space.project(du), self.mask_p(dp), count[0]


_PROBLEMS: dict = {}


def _problem(cfg: EnergyConfig, ctx: OperatorContext) -> StepProblem:
    key = (id(cfg), id(ctx))
    pr = _PROBLEMS.get(key)
    if pr is None or pr.cfg is not cfg or pr.ctx is not ctx:
        if len(_PROBLEMS) > 8:
            _PROBLEMS.clear()
        pr = StepProblem(cfg, ctx)
        _PROBLEMS[key] = pr
    return pr


def _check_tau(tau: float, cfg: EnergyConfig) -> None:
    if not tau < cfg.c_R:
        raise TauTooLarge(f"time step tau={tau:g} must be below c_R={cfg.c_R:g}")


def incremental_step(p_prev: MatrixField, f_k: VectorField, tau: float, cfg: EnergyConfig,
                     tol: Optional[float] = None, ctx: Optional[OperatorContext] = None,
                     u_guess: Optional[VectorField] = None):
    """One minimizing-movement step.

    Returns ``(p_k, Sigma_k, u_k, diagnostics)``.  The diagnostics contain
    the Newton and CG iteration counts, the final joint gradient norm and
    the stationarity residual ``||Sigma_k + dE/dp(p_k)|| / (1 + ||f_k||)``.
    """
    _check_tau(tau, cfg)
    ctx = default_context(p_prev.grid) if ctx is None else ctx
    ctx.check(p_prev, f_k)
    pr = _problem(cfg, ctx)
    res = pr.solve(p_prev.values, f_k.values, tau, tol,
                   None if u_guess is None else u_guess.values)
    g = p_prev.grid
    box = not g.periodic
    return (MatrixField(g, res.p, tangential_zero=box), MatrixField(g, res.sigma),
            VectorField(g, res.u, dirichlet_zero=box), res.diagnostics)


# ------------------------------------------------------------- trajectory
LEDGER_FIELDS = (
    "k", "t", "energy", "elastic", "plastic_hp", "plastic_curl", "plastic_grad", "load_work",
    "dissipation", "dissipation_conj", "fenchel_gap", "stationarity", "energy_slack",
    "gradient_norm", "newton_iterations", "cg_iterations",
)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Discrete trajectory ``(t_k, p_k, Sigma_k, u_k, f_k)`` with its ledger.

    ``p``, ``sigma``, ``u`` are stacked read-only arrays indexed by ``k``;
    ``sigma[0]`` is zero by convention.  ``ledger`` holds one dict per step
    with keys :data:`LEDGER_FIELDS`.  ``failure`` is ``None`` for a complete
    run, otherwise the error message and the arrays stop at the last
    accepted step.
    """

    grid: Grid
    cfg: EnergyConfig
    loads: DiscreteLoads
    p: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    ledger: tuple
    tol: float
    projection_distance: float
    failure: Optional[str] = None

    @property
    def N(self) -> int:
        return self.loads.N

    @property
    def tau(self) -> float:
        return self.loads.tau

    @property
    def times(self) -> np.ndarray:
        return self.loads.times[: self.p.shape[0]]

    @property
    def f(self) -> np.ndarray:
        return self.loads.values

    @property
    def complete(self) -> bool:
        return self.failure is None and self.p.shape[0] == self.N + 1

    def p_field(self, k: int) -> MatrixField:
        return MatrixField(self.grid, self.p[k])

    def sigma_field(self, k: int) -> MatrixField:
        return MatrixField(self.grid, self.sigma[k])

    def u_field(self, k: int) -> VectorField:
        return VectorField(self.grid, self.u[k])

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.ledger], dtype=float)

    @property
    def stored_energy(self) -> np.ndarray:
        """``W(grad u_k, p_k)`` per step."""
        return (self.column("elastic") + self.column("plastic_hp")
                + self.column("plastic_curl") + self.column("plastic_grad"))

    @property
    def apriori_quantity(self) -> float:
        """``max_k W(grad u_k, p_k) + sum_k tau (R + R*)``."""
        diss = self.column("dissipation") + self.column("dissipation_conj")
        return float(np.max(self.stored_energy) + np.sum(diss))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _energy_row(pr: StepProblem, k, t, u, p, f):
    m = pr.model
    el = m.elastic(u, p)
    hp, curl, grad = m.plastic_parts(p)
    work = m.pair(f, u)
    return {"k": k, "t": t, "energy": el + hp + curl + grad - work, "elastic": el,
            "plastic_hp": hp, "plastic_curl": curl, "plastic_grad": grad, "load_work": work}


def run(schedule: Union[LoadSchedule, DiscreteLoads], p0: MatrixField, N: Optional[int],
        cfg: EnergyConfig, tol: Optional[float] = None,
        ctx: Optional[OperatorContext] = None) -> TrajectoryRecord:
    """Run the scheme on ``[0, T]`` with ``N`` steps.

    ``schedule`` may be a :class:`LoadSchedule` (discretized here) or an
    already discretized :class:`DiscreteLoads`.  A solver failure does not
    raise: the partial trajectory is returned with ``failure`` set.
    """
    if isinstance(schedule, DiscreteLoads):
        loads = schedule
        if N is not None and N != loads.N:
            raise InvalidN("N disagrees with the discretized loads")
    else:
        loads = discretize_loads(schedule, N, ctx)
    grid = loads.grid
    if p0.grid != grid:
        from .errors import GridMismatch
        raise GridMismatch("initial plastic strain lives on another grid")
    _check_tau(loads.tau, cfg)
    ctx = default_context(grid) if ctx is None else ctx
    pr = _problem(cfg, ctx)
    tol = pr.default_tol() if tol is None else tol
    tau = loads.tau
    f = loads.values

    p_init = pr.mask_p(np.array(p0.values, dtype=float))
    proj = math.sqrt(pr.norm2(p_init - p0.values))
    u_init, _, _, _ = pr.inner.solve(p_init, f[0], None)
    ps, sigmas, us, ledger = [p_init], [np.zeros_like(p_init)], [u_init], []
    row = _energy_row(pr, 0, 0.0, u_init, p_init, f[0])
    row.update(dissipation=0.0, dissipation_conj=0.0, fenchel_gap=0.0, stationarity=0.0,
               energy_slack=0.0, gradient_norm=0.0, newton_iterations=0, cg_iterations=0)
    ledger.append(row)
    failure = None
    for k in range(1, loads.N + 1):
        try:
            res = pr.solve(ps[-1], f[k], tau, tol, u0=us[-1], p0=ps[-1])
        except NoConvergence as exc:
            failure = f"step {k}: {exc}"
            break
        q = (res.p - ps[-1]) / tau
        dR = tau * pr.model.dissipation(q)
        dRs = tau * pr.model.dissipation_conj(res.sigma)
        gap = dR + dRs - tau * pr.model.pair(res.sigma, q)
        row = _energy_row(pr, k, k * tau, res.u, res.p, f[k])
        prev = ledger[-1]["energy"]
        rhs = prev - pr.model.pair(f[k] - f[k - 1], us[-1])
        row.update(dissipation=dR, dissipation_conj=dRs, fenchel_gap=gap,
                   stationarity=res.diagnostics["stationarity"],
                   energy_slack=row["energy"] + dR + dRs - rhs,
                   gradient_norm=res.diagnostics["gradient_norm"],
                   newton_iterations=res.diagnostics["newton_iterations"],
                   cg_iterations=res.diagnostics["cg_iterations"])
        ledger.append(row)
        ps.append(res.p)
        sigmas.append(res.sigma)
        us.append(res.u)
    return TrajectoryRecord(grid, cfg, loads, _freeze(np.stack(ps)), _freeze(np.stack(sigmas)),
                            _freeze(np.stack(us)), tuple(ledger), tol, proj, failure)


def equilibrium(f: VectorField, cfg: EnergyConfig, tol: Optional[float] = None,
                ctx: Optional[OperatorContext] = None) -> tuple[MatrixField, VectorField]:
    """Minimizer ``p`` of ``E(.; f)`` with its displacement; needs ``hp_coeff > 0``."""
    if not cfg.hp_coeff > 0:
        raise ConfigError("the equilibrium preset needs hp_coeff > 0 for coercivity in p")
    ctx = default_context(f.grid) if ctx is None else ctx
    pr = _problem(cfg, ctx)
    zero = np.zeros((3, 3) + f.grid.shape)
    res = pr.solve(zero, f.values, None, tol)
    return MatrixField(f.grid, res.p), VectorField(f.grid, res.u)


# ------------------------------------------------------------ interpolants
class InterpolantBundle:
    """Piecewise-constant (left-continuous) and piecewise-affine interpolants.

    ``p_bar(t) = p_k`` on ``(t_{k-1}, t_k]`` with ``p_bar(0) = p_0``;
    ``p_hat`` is affine between nodes; ``f_hat`` blends ``f_k`` and
    ``f_{k+1}`` on ``[t_{k-1}, t_k]`` with ``f_{N+1} = f_N``.
    """

    def __init__(self, traj: TrajectoryRecord):
        if not traj.complete:
            raise IncompleteTrajectory("interpolants need a complete trajectory")
        self.traj = traj
        self.tau = traj.tau
        self.N = traj.N
        self.grid = traj.grid

    def _check_t(self, t: float) -> None:
        if not -1e-12 <= t <= self.traj.loads.T * (1 + 1e-12):
            raise ValueError(f"time {t} outside [0, T]")

    def index_bar(self, t: float) -> int:
        """``k`` with ``t`` in ``(t_{k-1}, t_k]``; ``0`` at ``t = 0``."""
        self._check_t(t)
        if t <= 0:
            return 0
        k = math.ceil(t / self.tau - 1e-9)
        return int(min(max(k, 1), self.N))

    def _affine(self, t: float):
        self._check_t(t)
        s = min(max(t / self.tau, 0.0), float(self.N))
        k = min(max(math.ceil(s - 1e-12), 1), self.N)
        return k, s - (k - 1)

    def p_bar(self, t: float) -> MatrixField:
        return self.traj.p_field(self.index_bar(t))

    def sigma_bar(self, t: float) -> MatrixField:
        return self.traj.sigma_field(self.index_bar(t))

    def u_bar(self, t: float) -> VectorField:
        return self.traj.u_field(self.index_bar(t))

    def f_bar(self, t: float) -> VectorField:
        return VectorField(self.grid, self.traj.f[self.index_bar(t)])

    def p_hat(self, t: float) -> MatrixField:
        k, mu = self._affine(t)
        p = self.traj.p
        return MatrixField(self.grid, (1 - mu) * p[k - 1] + mu * p[k])

    def p_hat_rate(self, t: float) -> MatrixField:
        """Derivative of ``p_hat`` on the open interval containing ``t``."""
        k, _ = self._affine(t)
        p = self.traj.p
        return MatrixField(self.grid, (p[k] - p[k - 1]) / self.tau)

    def f_hat(self, t: float) -> VectorField:
        k, mu = self._affine(t)
        f = self.traj.f
        nxt = f[min(k + 1, self.N)]
        return VectorField(self.grid, (1 - mu) * f[k] + mu * nxt)


def interpolants(traj: TrajectoryRecord) -> InterpolantBundle:
    return InterpolantBundle(traj)


def shift_metric(traj: TrajectoryRecord, rho: float) -> float:
    """``int_0^{T - rho} ||p_bar(t + rho) - p_bar(t)||^2 dt``, exactly."""
    if not traj.complete:
        raise IncompleteTrajectory("shift metric needs a complete trajectory")
    T, tau, N = traj.loads.T, traj.tau, traj.N
    if not 0 <= rho < T:
        raise ValueError("rho must lie in [0, T)")
    nodes = np.linspace(0.0, T, N + 1)
    cuts = np.unique(np.concatenate([nodes, nodes - rho]))
    cuts = cuts[(cuts >= 0) & (cuts <= T - rho)]
    cuts = np.unique(np.concatenate([[0.0, T - rho], cuts]))
    dV = traj.grid.cell_volume
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 1e-14 * T:
            continue
        m = 0.5 * (a + b)
        k1 = min(max(math.ceil(m / tau), 1), N)
        k2 = min(max(math.ceil((m + rho) / tau), 1), N)
        if k1 != k2:
            d = traj.p[k2] - traj.p[k1]
            total += (b - a) * float(np.vdot(d, d)) * dV
    return total


def time_shift_table(traj: TrajectoryRecord, shifts: Optional[Sequence[int]] = None) -> list:
    """Rows ``(rho, metric, metric / rho^2)`` for ``rho = j tau``."""
    if shifts is None:
        shifts = sorted({1, 2, 4, 8, 16, 32} & set(range(1, traj.N)))
    rows = []
    dV = traj.grid.cell_volume
    for j in shifts:
        d = traj.p[1 + j:] - traj.p[1:traj.N + 1 - j]
        metric = traj.tau * float(np.sum(d * d)) * dV
        rho = j * traj.tau
        rows.append((rho, metric, metric / rho ** 2))
    return rows


def divergence_certificate(traj: TrajectoryRecord, cfg: Optional[EnergyConfig] = None,
                           ctx: Optional[OperatorContext] = None) -> np.ndarray:
    """``||div Sigma_k + f_k|| / (1 + ||f_k||)`` for ``k = 1..N``.

    Only meaningful without gradient and hardening terms on a periodic grid.
    """
    cfg = traj.cfg if cfg is None else cfg
    if not cfg.delta_zero_regime:
        raise ConfigMismatch("the divergence identity needs delta = 0 and H_e = H_p = 0")
    if not traj.grid.periodic:
        raise ConfigMismatch("the divergence identity is certified on periodic grids only")
    ctx = default_context(traj.grid) if ctx is None else ctx
    dV = traj.grid.cell_volume
    out = []
    for k in range(1, traj.sigma.shape[0]):
        r = ctx.div(traj.sigma[k]) + traj.f[k]
        out.append(math.sqrt(float(np.vdot(r, r)) * dV)
                   / (1.0 + math.sqrt(float(np.vdot(traj.f[k], traj.f[k])) * dV)))
    return np.array(out)
