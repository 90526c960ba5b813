"""Scenario files: a TOML document describing one simulation.

Sections and keys (units in brackets, all optional unless noted)::

    seed = 0

    [grid]
    n = [8, 8, 8]                 # nodes per axis (>= 4)
    h = [0.125, 0.125, 0.125]     # spacing [length]
    topology = "periodic"         # "periodic" | "box"
    dirichlet_face = "x_min"      # box only

    [energy]
    mu = 1.0            # [stress]
    lam = 1.0           # [stress]
    visc = 1.0          # [stress * time]
    hp_coeff = 0.0      # [stress]
    he_coeff = 0.0      # [stress]
    delta = 0.0         # [stress * length^r]
    r = 2.0             # exponent > 6/5
    q_saturation = 0.0  # [stress]
    r_quartic = 0.0     # [stress * time]
    smoothing_eps = 1e-8

    [load]
    profile = "ramp"    # "zero" | "constant" | "ramp" | "sine" | "tabulated"
    pattern = "sines"   # "sines" | "uniform"
    amplitude = 1.0     # [force / volume]
    direction = [1.0, 0.0, 0.0]   # uniform pattern only
    period = 1.0        # sine profile [time]
    file = "loads.npz"  # tabulated profile: arrays "times" and "values"

    [initial]
    kind = "zero"       # "zero" | "file" | "mode" | "random" | "equilibrium"
    amplitude = 0.0
    mode = [1, 0, 0]
    matrix = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
    file = "p0.gpf"

    [time]
    T = 1.0             # [time], required
    N = 32              # steps, required

    [solver]
    tol = 1e-10

    [audit]
    delta_zero_certificate = false
    n_random = 50
    n_structured = 50
    marginal_samples = 0
    relaxed = 0.0       # > 0 relaxes every tolerance to this value

    [output]
    dir = "out"
    snapshots = false

Relative file paths are resolved against the scenario file's directory.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from .energies import EnergyConfig
from .errors import ConfigError, GradPlastError, SnapshotFormatError
from .grid import GridSpec, MatrixField, make_grid, read_snapshot
from .operators import OperatorContext
from .stepper import LoadSchedule, equilibrium

__all__ = ["Scenario", "load_scenario", "parse_scenario", "dump_scenario", "DEFAULTS"]

DEFAULTS = {
    "seed": 0,
    "grid": {"n": [8, 8, 8], "h": [0.125, 0.125, 0.125], "topology": "periodic"},
    "energy": {"mu": 1.0, "lam": 1.0, "visc": 1.0, "hp_coeff": 0.0, "he_coeff": 0.0,
               "delta": 0.0, "r": 2.0, "q_saturation": 0.0, "r_quartic": 0.0,
               "smoothing_eps": 1e-8},
    "load": {"profile": "ramp", "pattern": "sines", "amplitude": 1.0,
             "direction": [1.0, 0.0, 0.0], "period": 1.0},
    "initial": {"kind": "zero", "amplitude": 0.0, "mode": [1, 0, 0],
                "matrix": [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]},
    "time": {},
    "solver": {},
    "audit": {"delta_zero_certificate": False, "n_random": 50, "n_structured": 50,
              "marginal_samples": 0, "relaxed": 0.0},
    "output": {"dir": "out", "snapshots": False},
}
_OPTIONAL = {
    "grid": {"dirichlet_face"},
    "load": {"file"},
    "initial": {"file"},
    "time": {"T", "N"},
    "solver": {"tol"},
    "study": {"levels"},
}
_PROFILES = {"zero", "constant", "ramp", "sine", "tabulated"}
_INITIAL = {"zero", "file", "mode", "random", "equilibrium"}


def _merge(raw: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    out.setdefault("study", {})
    for key, val in raw.items():
        if key == "seed":
            out["seed"] = val
            continue
        if key not in out:
            raise ConfigError(f"unknown section [{key}]")
        if not isinstance(val, dict):
            raise ConfigError(f"[{key}] must be a table")
        allowed = set(DEFAULTS.get(key, {})) | _OPTIONAL.get(key, set())
        for k, v in val.items():
            if k not in allowed:
                raise ConfigError(f"unknown key {key}.{k}")
            out[key][k] = v
    return out


@dataclass
class Scenario:
    """Validated scenario tree plus the directory used to resolve files."""

    data: dict
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    def __post_init__(self):
        self.data = _merge(self.data)
        self._validate()

    # ------------------------------------------------------------ access
    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def N(self) -> int:
        return int(self.data["time"]["N"])

    @property
    def T(self) -> float:
        return float(self.data["time"]["T"])

    @property
    def tol(self) -> Optional[float]:
        t = self.data["solver"].get("tol")
        return None if t is None else float(t)

    def resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    # -------------------------------------------------------- validation
    def _validate(self):
        d = self.data
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ConfigError("seed must be an integer")
        t = d["time"]
        if "T" not in t or "N" not in t:
            raise ConfigError("[time] needs T and N")
        if not isinstance(t["N"], int) or isinstance(t["N"], bool):
            raise ConfigError("time.N must be an integer")
        if not _is_number(t["T"]) or not t["T"] > 0:
            raise ConfigError("time.T must be a positive number")
        g = d["grid"]
        if not (_vec(g["n"], int) and _vec(g["h"], (int, float))):
            raise ConfigError("grid.n and grid.h must be lists of three numbers")
        if d["load"]["profile"] not in _PROFILES:
            raise ConfigError(f"load.profile must be one of {sorted(_PROFILES)}")
        if d["load"]["pattern"] not in {"sines", "uniform"}:
            raise ConfigError("load.pattern must be 'sines' or 'uniform'")
        if d["load"]["profile"] == "tabulated":
            self._need_file("load")
        if d["initial"]["kind"] not in _INITIAL:
            raise ConfigError(f"initial.kind must be one of {sorted(_INITIAL)}")
        if d["initial"]["kind"] == "file":
            self._need_file("initial")
        for k, v in d["energy"].items():
            if not _is_number(v):
                raise ConfigError(f"energy.{k} must be a number")
        e = d["energy"]
        if d["audit"]["delta_zero_certificate"] and (e["delta"] or e["hp_coeff"] or e["he_coeff"]):
            raise ConfigError("the delta-zero certificate needs delta = hp_coeff = he_coeff = 0")
        levels = d["study"].get("levels")
        if levels is not None and not _vec(levels, int, None):
            raise ConfigError("study.levels must be a list of integers")

    def _need_file(self, section: str):
        name = self.data[section].get("file")
        if not name:
            raise ConfigError(f"[{section}] needs a file")
        if not self.resolve(name).is_file():
            raise ConfigError(f"{section}.file not found: {self.resolve(name)}")

    # ---------------------------------------------------------- builders
    def build_grid(self):
        g = self.data["grid"]
        try:
            return make_grid(GridSpec(tuple(g["n"]), tuple(float(x) for x in g["h"]),
                                      g["topology"], g.get("dirichlet_face")))
        except GradPlastError as exc:
            raise ConfigError(str(exc)) from exc

    def build_context(self, grid) -> OperatorContext:
        return OperatorContext(grid, smoothing_eps=float(self.data["energy"]["smoothing_eps"]))

    def build_energy(self) -> EnergyConfig:
        e = {k: float(v) for k, v in self.data["energy"].items() if k != "smoothing_eps"}
        try:
            return EnergyConfig(**e)
        except (GradPlastError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def load_pattern(self, grid) -> np.ndarray:
        ld = self.data["load"]
        A = float(ld["amplitude"])
        if ld["pattern"] == "uniform":
            d = np.asarray(ld["direction"], dtype=float).reshape(3, 1, 1, 1)
            return A * np.broadcast_to(d, (3,) + grid.shape).copy()
        x, y, z = grid.coordinates()
        Lx, Ly, Lz = grid.lengths
        comps = np.broadcast_arrays(np.sin(2 * np.pi * y / Ly), np.sin(2 * np.pi * z / Lz),
                                    np.sin(2 * np.pi * x / Lx))
        return A * np.stack(comps)

    def build_schedule(self, grid) -> LoadSchedule:
        ld = self.data["load"]
        T = self.T
        prof = ld["profile"]
        if prof == "tabulated":
            try:
                with np.load(self.resolve(ld["file"])) as npz:
                    times, values = npz["times"], npz["values"]
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"cannot read tabulated load: {exc}") from exc
            return LoadSchedule.tabulated(grid, times, values, T)
        shape = self.load_pattern(grid)
        period = float(ld["period"])
        profiles = {
            "zero": lambda t: 0.0,
            "constant": lambda t: 1.0,
            "ramp": lambda t: t / T,
            "sine": lambda t: math.sin(2 * math.pi * t / period),
        }
        return LoadSchedule.separable(grid, shape, profiles[prof], T)

    def build_initial(self, grid, cfg: EnergyConfig, schedule: LoadSchedule,
                      ctx: Optional[OperatorContext] = None) -> MatrixField:
        ini = self.data["initial"]
        kind = ini["kind"]
        A = float(ini["amplitude"])
        if kind == "zero":
            return MatrixField.zeros(grid)
        if kind == "file":
            try:
                f = read_snapshot(self.resolve(ini["file"]), grid.spacing)
            except SnapshotFormatError as exc:
                raise ConfigError(str(exc)) from exc
            if f.grid != grid or not isinstance(f, MatrixField):
                raise ConfigError("initial file does not match the grid or is not a matrix field")
            return f
        if kind == "random":
            rng = np.random.default_rng(self.seed)
            return MatrixField(grid, A * rng.standard_normal((3, 3) + grid.shape))
        if kind == "mode":
            x = grid.coordinates()
            L = grid.lengths
            m = ini["mode"]
            phase = sum(2 * np.pi * m[a] * x[a] / L[a] for a in range(3))
            M = np.asarray(ini["matrix"], dtype=float).reshape(3, 3, 1, 1, 1)
            return MatrixField(grid, A * M * np.sin(phase))
        try:
            p, _ = equilibrium(schedule(0.0), cfg, self.tol, ctx)
        except GradPlastError as exc:
            raise ConfigError(str(exc)) from exc
        return p

    # ------------------------------------------------------ serialization
    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _vec(v, types, length: Optional[int] = 3) -> bool:
    if not isinstance(v, list) or (length is not None and len(v) != length):
        return False
    return all(isinstance(x, types) and not isinstance(x, bool) for x in v)


def parse_scenario(text: str, base_dir: Union[str, Path, None] = None) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return Scenario(raw, Path(base_dir) if base_dir is not None else Path.cwd())


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text, path.resolve().parent)


def dump_scenario(sc: Scenario, path: Union[str, Path]) -> None:
    Path(path).write_text(sc.to_toml())
