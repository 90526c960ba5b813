"""Command-line front end.

    gradplast run SCENARIO [--out DIR] [--seed S] [--tol X]
    gradplast study SCENARIO --levels 8,16,32 [--out DIR] [--seed S] [--tol X]
    gradplast decompose FIELD [--out DIR] [--spacing HX,HY,HZ]

Exit codes: 0 pass, 1 configuration or usage error, 2 solver failure,
3 certificate failure.  ``GRADPLAST_THREADS`` caps BLAS/FFT thread pools.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from .errors import (ConfigError, GradPlastError, NoConvergence, SnapshotFormatError,
                     TauTooLarge, TopologyUnsupported)
from .grid import MatrixField, inner_product, read_snapshot, write_snapshot
from .helmholtz import decompose
from .scenario import Scenario, load_scenario
from .stepper import LEDGER_FIELDS, TrajectoryRecord, run
from .verify import Tolerances, audit, refinement_study

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CERT = 0, 1, 2, 3

CSV_EXTRA = ("inner_residual", "subgradient_gap", "divergence")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gradplast", description="Strain-gradient visco-plasticity solver and audits")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("run", "study"):
        p = sub.add_parser(name, help=f"{name} a scenario file")
        p.add_argument("scenario")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides the scenario seed)")
        p.add_argument("--tol", type=float, help="solver tolerance (overrides solver.tol)")
        if name == "study":
            p.add_argument("--levels", help="comma-separated step counts, e.g. 8,16,32")
    p = sub.add_parser("decompose", help="Helmholtz-decompose a matrix field snapshot")
    p.add_argument("field")
    p.add_argument("--out", default=".", help="directory for phi/psi/mean snapshots")
    p.add_argument("--spacing", help="grid spacing hx,hy,hz (default 1/n per axis)")
    return ap


def _apply_overrides(sc: Scenario, args) -> Scenario:
    d = sc.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.tol is not None:
        d["solver"]["tol"] = args.tol
    out = Scenario(d, sc.base_dir)
    out.out_dir = Path(args.out) if args.out else sc.resolve(d["output"]["dir"])
    return out


def _tolerances(sc: Scenario) -> Tolerances:
    relaxed = float(sc["audit"]["relaxed"])
    return Tolerances.relaxed(relaxed) if relaxed > 0 else Tolerances()


def _setup(sc: Scenario):
    grid = sc.build_grid()
    ctx = sc.build_context(grid)
    cfg = sc.build_energy()
    schedule = sc.build_schedule(grid)
    p0 = sc.build_initial(grid, cfg, schedule, ctx)
    return grid, ctx, cfg, schedule, p0


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_ledger(path: Path, traj: TrajectoryRecord, report=None) -> None:
    extras = {name: [math.nan] * len(traj.ledger) for name in CSV_EXTRA}
    if report is not None:
        for k in range(1, len(traj.ledger)):
            extras["inner_residual"][k] = report.inner_residual[k - 1]
            extras["subgradient_gap"][k] = report.subgradient_per_step[k - 1]
            if report.divergence is not None:
                extras["divergence"][k] = report.divergence[k - 1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_FIELDS + CSV_EXTRA)
        for i, row in enumerate(traj.ledger):
            w.writerow([_fmt(row[c]) for c in LEDGER_FIELDS]
                       + [_fmt(extras[c][i]) for c in CSV_EXTRA])


def _write_snapshots(out: Path, traj: TrajectoryRecord) -> None:
    snap = out / "snapshots"
    snap.mkdir(parents=True, exist_ok=True)
    for k in range(traj.p.shape[0]):
        write_snapshot(snap / f"p_{k:04d}.gpf", traj.p_field(k))
        write_snapshot(snap / f"sigma_{k:04d}.gpf", traj.sigma_field(k))
        write_snapshot(snap / f"u_{k:04d}.gpf", traj.u_field(k))


def cmd_run(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    grid, ctx, cfg, schedule, p0 = _setup(sc)
    out = sc.out_dir
    out.mkdir(parents=True, exist_ok=True)
    traj = run(schedule, p0, sc.N, cfg, sc.tol, ctx)
    if sc["output"]["snapshots"]:
        _write_snapshots(out, traj)
    if traj.failure:
        write_ledger(out / "ledger.csv", traj)
        print(f"solver failure: {traj.failure}", file=sys.stderr)
        return EXIT_SOLVER
    a = sc["audit"]
    rep = audit(traj, cfg, _tolerances(sc), seed=sc.seed, n_random=int(a["n_random"]),
                n_structured=int(a["n_structured"]), marginal_samples=int(a["marginal_samples"]),
                ctx=ctx)
    write_ledger(out / "ledger.csv", traj, rep)
    rep.to_json(out / "audit.json")
    for name, ok in rep.checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_CERT


def _levels(text: Optional[str], sc: Scenario) -> list:
    if text is None:
        lv = sc["study"].get("levels")
        if lv is None:
            raise ConfigError("no levels given (use --levels or study.levels)")
        return list(lv)
    try:
        lv = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --levels value {text!r}") from exc
    return lv


def cmd_study(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    levels = _levels(args.levels, sc)
    if len(levels) < 2:
        raise ConfigError("a study needs at least two levels")
    grid, ctx, cfg, schedule, p0 = _setup(sc)
    out = sc.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rep = refinement_study(schedule, p0, cfg, levels, sc.tol, ctx, seed=sc.seed)
    rep.to_json(out / "study.json")
    if rep.failures:
        for f in rep.failures:
            print(f"solver failure: {f}", file=sys.stderr)
        return EXIT_SOLVER
    for (a, b), d in zip(zip(levels[:-1], levels[1:]), rep.cauchy):
        print(f"cauchy N={a}->{b}: {d:.6e}")
    print(f"monotone: {'pass' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_CERT


def cmd_decompose(args) -> int:
    spacing = None
    if args.spacing:
        try:
            spacing = tuple(float(x) for x in args.spacing.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad --spacing value {args.spacing!r}") from exc
        if len(spacing) != 3:
            raise ConfigError("--spacing needs three values")
    q = read_snapshot(args.field, spacing)
    if not isinstance(q, MatrixField):
        raise ConfigError("decompose expects a matrix field snapshot")
    parts = decompose(q)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.field).stem
    write_snapshot(out / f"{stem}_phi.gpf", parts.phi)
    write_snapshot(out / f"{stem}_psi.gpf", parts.psi)
    write_snapshot(out / f"{stem}_mean.gpf", parts.mean)
    diff = parts.reconstruct() - q
    qn = math.sqrt(inner_product(q, q))
    err = math.sqrt(inner_product(diff, diff)) / qn if qn > 0 else 0.0
    print(f"reconstruction error: {err:.3e}")
    return EXIT_OK


def _threads():
    n = os.environ.get("GRADPLAST_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        n = int(n)
    except ValueError:
        raise ConfigError(f"GRADPLAST_THREADS must be an integer, got {n!r}") from None
    return threadpool_limits(n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"run": cmd_run, "study": cmd_study, "decompose": cmd_decompose}
    try:
        with _threads():
            return handlers[args.command](args)
    except TauTooLarge as exc:
        print(f"TauTooLarge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NoConvergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (TopologyUnsupported, SnapshotFormatError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, GradPlastError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
