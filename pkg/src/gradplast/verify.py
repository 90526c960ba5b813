"""Certificate audit of computed trajectories and time-refinement studies.

:func:`audit` recomputes every certificate from the stored fields (it does
not trust the solver's own diagnostics), so a tampered trajectory is caught.
:data:`REPORT_FIELDS` states in words which inequality each report entry
measures.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .elasticity import check_marginal_properties, random_samples
from .errors import ConfigMismatch, IncompleteTrajectory, InvalidN
from .energies import EnergyConfig
from .operators import OperatorContext, default_context
from .stepper import (LoadSchedule, TrajectoryRecord, _problem,
                      divergence_certificate, run, time_shift_table)

__all__ = [
    "Tolerances",
    "CertificateReport",
    "StudyReport",
    "REPORT_FIELDS",
    "audit",
    "refinement_study",
    "cauchy_distance",
    "sabotage",
    "audit_directions",
]

REPORT_FIELDS = {
    "stationarity": "norm of Sigma_k plus the p-gradient of the marginal energy at p_k, "
                    "divided by 1 + ||f_k||; zero when -Sigma_k is the gradient of E(.; f_k)",
    "inner_residual": "norm of the displacement optimality residual at (u_k, p_k, f_k), "
                      "divided by 1 + ||f_k||; zero when u_k minimizes the elastic problem",
    "energy_slack": "one-step energy inequality: E(p_k;f_k) + tau R + tau R* minus "
                    "E(p_{k-1};f_{k-1}) + <f_k - f_{k-1}, u_{k-1}>, divided by 1 + |E(p_{k-1})|; "
                    "must be <= 0",
    "energy_violation": "positive part of energy_slack",
    "integrated_slack": "summed energy inequality up to t_k with the shifted load derivative: "
                        "E(p_k) - E(p_0) + sum tau (R + R*) + sum <f_{j+1} - f_j, u_j>, "
                        "minus the boundary allowance |<f_{k+1} - f_k, u_k>|; must be <= 0",
    "fenchel_gap": "tau (R(q_k) + R*(Sigma_k) - <Sigma_k, q_k>) with q_k the plastic rate, "
                   "relative to tau (R + R*); zero when Sigma_k is the flow-rule stress",
    "divergence": "||div Sigma_k + f_k|| / (1 + ||f_k||); zero when the back-stress balances "
                  "the load (only without gradient and hardening terms)",
    "subgradient_worst": "most negative value of E(eta; f_k) - E(p_k; f_k) - <-Sigma_k, eta - p_k> "
                         "over sampled eta and all steps; must be >= 0",
    "subgradient_per_step": "most negative subgradient gap at each step",
    "g_integral": "sum over steps of tau times the sampled subgradient violation, the "
                  "integrated error of the approximate back-stress condition",
    "apriori": "max_k W(grad u_k, p_k) + sum_k tau (R + R*); bounded independently of N",
    "apriori_history": "apriori values for the trajectories of a refinement family",
    "time_shift": "rows (rho, int ||p_bar(t + rho) - p_bar(t)||^2 dt, ratio to rho^2)",
    "shift_constant": "largest ratio of the time-shift metric to rho^2",
    "Lambda_f": "load bound combining L2, dual and dual-rate norms of the averaged loads",
    "projection_distance": "L2 distance moved when projecting p_0 into the state space",
    "marginal": "worst margins of the marginal-energy properties (convexity, upper bound, "
                "coercivity, minimizer bound, load perturbation, Lipschitz); must be >= -tol",
}

_META = {"N", "tau", "seed", "tolerances", "checks", "passed"}


@dataclass(frozen=True)
class Tolerances:
    stationarity: float = 1e-8
    inner: float = 1e-8
    energy: float = 1e-8
    fenchel: float = 1e-8
    divergence: float = 1e-6
    subgradient: float = 1e-7
    marginal: float = 1e-8

    @classmethod
    def relaxed(cls, value: float = 1e-6) -> "Tolerances":
        return cls(*(value,) * 4, divergence=max(value, 1e-6), subgradient=max(value, 1e-7),
                   marginal=value)


@dataclass
class CertificateReport:
    N: int
    tau: float
    seed: int
    tolerances: dict
    stationarity: list
    inner_residual: list
    energy_slack: list
    energy_violation: list
    integrated_slack: list
    fenchel_gap: list
    divergence: Optional[list]
    subgradient_worst: float
    subgradient_per_step: list
    g_integral: float
    apriori: float
    apriori_history: list
    time_shift: list
    shift_constant: float
    Lambda_f: float
    projection_distance: float
    marginal: Optional[dict] = None
    checks: dict = field(default_factory=dict)
    passed: bool = False

    def evaluate(self, tolerances: Optional[Union[Tolerances, dict]] = None) -> dict:
        """Recompute pass/fail from the stored residuals."""
        tol = self.tolerances if tolerances is None else (
            asdict(tolerances) if isinstance(tolerances, Tolerances) else dict(tolerances))
        checks = {
            "stationarity": max(self.stationarity, default=0.0) <= tol["stationarity"],
            "inner_residual": max(self.inner_residual, default=0.0) <= tol["inner"],
            "energy_inequality": max(self.energy_violation, default=0.0) <= tol["energy"],
            "integrated_energy": max(self.integrated_slack, default=0.0) <= tol["energy"],
            "fenchel": max(self.fenchel_gap, default=0.0) <= tol["fenchel"],
            "subgradient": self.subgradient_worst >= -tol["subgradient"],
            "apriori": bool(np.isfinite(self.apriori)),
        }
        if self.divergence is not None:
            checks["divergence"] = max(self.divergence, default=0.0) <= tol["divergence"]
        if self.marginal is not None:
            checks["marginal"] = min(self.marginal.values()) >= -tol["marginal"]
        return checks

    def finalize(self) -> "CertificateReport":
        self.checks = self.evaluate()
        self.passed = all(self.checks.values())
        return self

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "CertificateReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def audit_directions(ctx: OperatorContext, n_random: int, n_structured: int,
                     rng: np.random.Generator, mask=None) -> np.ndarray:
    """Unit-norm sampling directions in the plastic state space.

    Gaussian fields, then a cycle of gradient fields, curl fields and single
    Fourier modes with random matrix amplitudes.
    """
    grid = ctx.grid
    shape = grid.shape
    dV = grid.cell_volume
    out = []
    for _ in range(n_random):
        out.append(rng.standard_normal((3, 3) + shape))
    coords = grid.coordinates()
    L = grid.lengths
    for i in range(n_structured):
        kind = i % 3
        if kind == 0:
            d = ctx.grad(rng.standard_normal((3,) + shape))
        elif kind == 1:
            d = ctx.curl(rng.standard_normal((3, 3) + shape))
        else:
            m = rng.integers(0, 3, size=3)
            phase = sum(2 * np.pi * m[a] * coords[a] / L[a] for a in range(3)) + rng.uniform(0, 2 * np.pi)
            d = rng.standard_normal((3, 3, 1, 1, 1)) * np.cos(phase)
        out.append(d)
    dirs = []
    for d in out:
        d = np.broadcast_to(d, (3, 3) + shape).astype(float)
        if mask is not None:
            d = d * mask
        nrm = math.sqrt(float(np.vdot(d, d)) * dV)
        if nrm > 0:
            dirs.append(d / nrm)
    return np.array(dirs)


def audit(traj: TrajectoryRecord, cfg: Optional[EnergyConfig] = None,
          tolerances: Optional[Tolerances] = None, seed: int = 0, n_random: int = 50,
          n_structured: int = 50, marginal_samples: int = 0,
          apriori_history: Optional[Sequence[float]] = None,
          ctx: Optional[OperatorContext] = None) -> CertificateReport:
    """Evaluate all certificates of a complete trajectory."""
    if not traj.complete:
        raise IncompleteTrajectory(traj.failure or "trajectory is incomplete")
    cfg = traj.cfg if cfg is None else cfg
    tolerances = tolerances or Tolerances()
    ctx = default_context(traj.grid) if ctx is None else ctx
    pr = _problem(cfg, ctx)
    m = pr.model
    inner = pr.inner
    N, tau = traj.N, traj.tau
    P, S, U, F = traj.p, traj.sigma, traj.u, traj.f
    rng = np.random.default_rng(seed)
    itol = inner.default_tol()

    def fnorm(a):
        return math.sqrt(pr.norm2(a))

    def energy(u, p, f):
        return m.elastic(u, p) - m.pair(f, u) + m.plastic(p)

    E = [energy(U[k], P[k], F[k]) for k in range(N + 1)]
    stat, inres, slack, viol, integ, gap = [], [], [], [], [], []
    dsum = 0.0
    work = 0.0
    for k in range(1, N + 1):
        scale = 1.0 + fnorm(F[k])
        gW = pr.mask_p(m.grad_p(U[k], P[k]))
        stat.append(fnorm(S[k] + gW) / scale)
        inres.append(fnorm(inner.gradient(U[k], P[k], F[k])) / scale)
        q = (P[k] - P[k - 1]) / tau
        dR = tau * m.dissipation(q)
        dRs = tau * m.dissipation_conj(S[k])
        g = dR + dRs - tau * m.pair(S[k], q)
        denom = dR + dRs
        gap.append(max(g, 0.0) / denom if denom > 0 else max(g, 0.0))
        rhs = E[k - 1] - m.pair(F[k] - F[k - 1], U[k - 1])
        s = (E[k] + dR + dRs - rhs) / (1.0 + abs(E[k - 1]))
        slack.append(s)
        viol.append(max(s, 0.0))
        dsum += dR + dRs
        f_next = F[min(k + 1, N)]
        shift_work = m.pair(f_next - F[k], U[k])
        work += shift_work
        lhs = E[k] - E[0] + dsum
        integ.append((lhs + work - abs(shift_work)) / (1.0 + abs(E[0]) + abs(E[k])))

    # sampled subgradient inequality for -Sigma_k in the subdifferential of E(.; f_k)
    dirs = audit_directions(ctx, n_random, n_structured, rng, pr.mask)
    exps = rng.uniform(-3.0, 0.0, size=(N, len(dirs)))
    per_step = []
    for k in range(1, N + 1):
        scale = 1.0 + fnorm(P[k])
        worst = math.inf
        for j, d in enumerate(dirs):
            eta = P[k] + scale * 10.0 ** exps[k - 1, j] * d
            u_eta, e1, _, _ = inner.solve(eta, F[k], itol, u0=U[k])
            val = e1 + m.plastic(eta) - E[k] + m.pair(S[k], eta - P[k])
            worst = min(worst, val)
        per_step.append(worst if dirs.size else 0.0)
    sub_worst = min(per_step, default=0.0)
    g_int = float(sum(tau * max(0.0, -w) for w in per_step))

    try:
        div = divergence_certificate(traj, cfg, ctx).tolist()
    except ConfigMismatch:
        div = None

    shifts = [list(r) for r in time_shift_table(traj)]
    shift_c = max((r[2] for r in shifts), default=0.0)
    apriori = traj.apriori_quantity
    hist = [apriori] if apriori_history is None else list(apriori_history)

    marginal = None
    if marginal_samples:
        samples = random_samples(traj.grid, marginal_samples, rng)
        marginal = check_marginal_properties(samples, cfg, ctx, tolerances.marginal).margins

    rep = CertificateReport(
        N=N, tau=tau, seed=seed, tolerances=asdict(tolerances), stationarity=stat,
        inner_residual=inres, energy_slack=slack, energy_violation=viol, integrated_slack=integ,
        fenchel_gap=gap, divergence=div, subgradient_worst=float(sub_worst),
        subgradient_per_step=per_step, g_integral=g_int, apriori=apriori, apriori_history=hist,
        time_shift=shifts, shift_constant=float(shift_c), Lambda_f=traj.loads.Lambda_f,
        projection_distance=traj.projection_distance, marginal=marginal,
    )
    return rep.finalize()


def sabotage(traj: TrajectoryRecord, rel: float = 0.01, seed: int = 0,
             what: str = "sigma") -> TrajectoryRecord:
    """Copy of ``traj`` with ``Sigma_k`` (or ``p_k``) perturbed by ``rel`` in norm."""
    rng = np.random.default_rng(seed)
    src = traj.sigma if what == "sigma" else traj.p
    out = np.array(src)
    for k in range(1, out.shape[0]):
        noise = rng.standard_normal(out[k].shape)
        nk = np.linalg.norm(out[k])
        if nk > 0:
            out[k] = out[k] + rel * nk / np.linalg.norm(noise) * noise
    out.setflags(write=False)
    return replace(traj, **{"sigma" if what == "sigma" else "p": out})


# ------------------------------------------------------------ refinement
def _affine_knots(traj: TrajectoryRecord):
    return np.linspace(0.0, traj.loads.T, traj.N + 1), traj.p


def _affine_eval(t, knots, vals):
    k = min(max(int(np.searchsorted(knots, t, side="right")), 1), len(knots) - 1)
    a, b = knots[k - 1], knots[k]
    w = (t - a) / (b - a)
    return (1 - w) * vals[k - 1] + w * vals[k]


def cauchy_distance(a: TrajectoryRecord, b: TrajectoryRecord) -> float:
    """``||p_hat^a - p_hat^b||`` in ``L2(0, T; L2)``, exact for piecewise-affine data."""
    if a.grid != b.grid or not math.isclose(a.loads.T, b.loads.T):
        raise ConfigMismatch("trajectories must share grid and horizon")
    ka, va = _affine_knots(a)
    kb, vb = _affine_knots(b)
    knots = np.unique(np.concatenate([ka, kb]))
    dV = a.grid.cell_volume
    total = 0.0
    prev = _affine_eval(knots[0], ka, va) - _affine_eval(knots[0], kb, vb)
    for lo, hi in zip(knots[:-1], knots[1:]):
        # evaluate just inside the interval to pick the right affine pieces
        da = _affine_eval(hi, ka, va) - _affine_eval(hi, kb, vb)
        total += (hi - lo) * (float(np.vdot(prev, prev)) + float(np.vdot(prev, da))
                              + float(np.vdot(da, da))) / 3.0 * dV
        prev = da
    return math.sqrt(total)


@dataclass
class StudyReport:
    levels: list
    cauchy: list
    ratios: list
    apriori: list
    apriori_ratio: float
    shift_constants: list
    shift_ratio: float
    g_integrals: list
    Lambda_f: list
    noise_floor: float
    monotone: bool
    min_ratio: float
    passed: bool
    seed: int = 0
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def refinement_study(schedule: LoadSchedule, p0, cfg: EnergyConfig, N_list: Sequence[int],
                     tol: Optional[float] = None, ctx: Optional[OperatorContext] = None,
                     min_ratio: float = 1.3, seed: int = 0, n_directions: int = 10,
                     return_trajectories: bool = False):
    """Runs the scheme for each ``N`` and compares consecutive levels.

    A Cauchy distance counts as decreasing if it is smaller than its
    predecessor by ``min_ratio`` or lies below the noise floor set by the
    solver tolerance.
    """
    N_list = [int(n) for n in N_list]
    if len(N_list) < 2:
        raise InvalidN("a refinement study needs at least two levels")
    if any(n < 2 for n in N_list) or any(b <= a for a, b in zip(N_list[:-1], N_list[1:])):
        raise InvalidN("levels must be strictly increasing integers >= 2")
    ctx = default_context(schedule.grid) if ctx is None else ctx
    trajs = []
    failures = []
    for n in N_list:
        tr = run(schedule, p0, n, cfg, tol, ctx)
        if tr.failure:
            failures.append(f"N={n}: {tr.failure}")
        trajs.append(tr)
    if failures:
        rep = StudyReport(N_list, [], [], [], math.nan, [], math.nan, [], [], 0.0, False, min_ratio,
                          False, seed, failures)
        return (rep, trajs) if return_trajectories else rep
    cauchy = [cauchy_distance(a, b) for a, b in zip(trajs[:-1], trajs[1:])]
    ratios = [a / b if b > 0 else math.inf for a, b in zip(cauchy[:-1], cauchy[1:])]
    tol_used = _problem(cfg, ctx).default_tol() if tol is None else tol
    scale = 1.0 + max(math.sqrt(float(np.vdot(p, p)) * schedule.grid.cell_volume)
                      for p in trajs[-1].p)
    floor = 100.0 * tol_used * scale * math.sqrt(schedule.T)
    ok = all(b <= floor or (a > b and a >= min_ratio * b) for a, b in zip(cauchy[:-1], cauchy[1:]))
    apri = [t.apriori_quantity for t in trajs]
    shifts = [max((r[2] for r in time_shift_table(t)), default=0.0) for t in trajs]
    g_int = []
    for t in trajs:
        r = audit(t, cfg, seed=seed, n_random=n_directions, n_structured=n_directions,
                  apriori_history=apri, ctx=ctx)
        g_int.append(r.g_integral)

    def spread(v):
        v = [x for x in v if x > 0]
        return max(v) / min(v) if v else 1.0

    rep = StudyReport(
        levels=N_list, cauchy=cauchy, ratios=ratios, apriori=apri, apriori_ratio=spread(apri),
        shift_constants=shifts, shift_ratio=spread(shifts), g_integrals=g_int,
        Lambda_f=[t.loads.Lambda_f for t in trajs], noise_floor=floor, monotone=ok,
        min_ratio=min_ratio, passed=ok, seed=seed,
    )
    return (rep, trajs) if return_trajectories else rep
