import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gradplast.grid import GridSpec, MatrixField, VectorField, make_grid  # noqa: E402
from gradplast.operators import default_context  # noqa: E402
from gradplast.scenario import load_scenario  # noqa: E402
from gradplast.stepper import run  # noqa: E402
from gradplast.verify import audit  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def periodic_grid(n=8, h=None):
    n = (n,) * 3 if np.isscalar(n) else tuple(n)
    h = tuple(1.0 / k for k in n) if h is None else h
    return make_grid(GridSpec(n, h, "periodic"))


def box_grid(n=4, h=None, face="x_min"):
    n = (n,) * 3 if np.isscalar(n) else tuple(n)
    h = tuple(1.0 / k for k in n) if h is None else h
    return make_grid(GridSpec(n, h, "box", face))


def rand_vec(grid, rng, scale=1.0):
    return VectorField(grid, scale * rng.standard_normal((3,) + grid.shape))


def rand_mat(grid, rng, scale=1.0):
    return MatrixField(grid, scale * rng.standard_normal((3, 3) + grid.shape))


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = np.linalg.norm((a - b).ravel())
    s = max(np.linalg.norm(b.ravel()), np.finfo(float).tiny)
    return d / s


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ramp():
    """Ramp-load quadratic scenario on the periodic 8^3 grid, N = 32."""
    sc = load_scenario(SCENARIOS / "ramp_quadratic.toml")
    grid = sc.build_grid()
    ctx = sc.build_context(grid)
    cfg = sc.build_energy()
    schedule = sc.build_schedule(grid)
    p0 = sc.build_initial(grid, cfg, schedule, ctx)
    traj = run(schedule, p0, sc.N, cfg, sc.tol, ctx)
    return dict(sc=sc, grid=grid, ctx=ctx, cfg=cfg, schedule=schedule, p0=p0, traj=traj)


@pytest.fixture(scope="session")
def ramp_report(ramp):
    return audit(ramp["traj"], ramp["cfg"], seed=0, ctx=ramp["ctx"])


@pytest.fixture(scope="session")
def ctx8():
    return default_context(periodic_grid(8))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
