"""Structured grids on a box or a 3-torus, and the fields living on them.

A :class:`Grid` is a uniform tensor-product lattice of ``nx * ny * nz``
nodes.  Every node carries the quadrature weight ``hx * hy * hz`` and all
integrals are nodal sums; on the torus this is exact for trigonometric
polynomials, on the box it is a first-order rule.

``Box`` grids put node ``i`` at ``i * h`` along each axis and clamp the
displacement to zero on one designated face layer.  ``Periodic`` grids put
node ``i`` at ``i * h`` on a torus of side ``n * h``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import ClassVar, Optional, Union

import numpy as np

from .errors import GridMismatch, InvalidSpec, SnapshotFormatError

__all__ = [
    "Topology",
    "Face",
    "GridSpec",
    "Grid",
    "make_grid",
    "Field",
    "ScalarField",
    "VectorField",
    "MatrixField",
    "inner_product",
    "norm",
    "apply_tangential_mask",
    "tangential_keep_mask",
    "write_snapshot",
    "read_snapshot",
]


class Topology(str, enum.Enum):
    BOX = "box"
    PERIODIC = "periodic"


class Face(str, enum.Enum):
    X_MIN = "x_min"
    X_MAX = "x_max"
    Y_MIN = "y_min"
    Y_MAX = "y_max"
    Z_MIN = "z_min"
    Z_MAX = "z_max"

    @property
    def axis(self) -> int:
        return "xyz".index(self.value[0])

    @property
    def side(self) -> int:
        """0 for the ``*_min`` face, -1 for ``*_max``."""
        return 0 if self.value.endswith("min") else -1

    @property
    def normal(self) -> np.ndarray:
        nu = np.zeros(3)
        nu[self.axis] = -1.0 if self.side == 0 else 1.0
        return nu


@dataclass(frozen=True)
class GridSpec:
    """User-facing description of a grid, validated by :func:`make_grid`."""

    n: tuple[int, int, int]
    h: tuple[float, float, float]
    topology: Union[Topology, str] = Topology.PERIODIC
    dirichlet_face: Optional[Union[Face, str]] = None


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    nz: int
    hx: float
    hy: float
    hz: float
    topology: Topology
    dirichlet_face: Optional[Face] = None

    def __post_init__(self):
        for n in (self.nx, self.ny, self.nz):
            if int(n) != n or n < 4:
                raise InvalidSpec(f"node counts must be integers >= 4, got {self.shape}")
        for h in (self.hx, self.hy, self.hz):
            if not np.isfinite(h) or h <= 0:
                raise InvalidSpec(f"spacings must be positive, got {self.spacing}")
        if self.topology is Topology.BOX and self.dirichlet_face is None:
            raise InvalidSpec("a box grid needs exactly one dirichlet_face")
        if self.topology is Topology.PERIODIC and self.dirichlet_face is not None:
            raise InvalidSpec("a periodic grid has no dirichlet_face")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.hx, self.hy, self.hz)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy * self.hz

    @property
    def volume(self) -> float:
        return self.n_nodes * self.cell_volume

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.nx * self.hx, self.ny * self.hy, self.nz * self.hz)

    @property
    def periodic(self) -> bool:
        return self.topology is Topology.PERIODIC

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Node coordinates as three broadcastable ``ij``-indexed arrays."""
        axes = [np.arange(n) * h for n, h in zip(self.shape, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij", sparse=True))

    @cached_property
    def dirichlet_free(self) -> np.ndarray:
        """Boolean node mask, False on the clamped face layer."""
        free = np.ones(self.shape, dtype=bool)
        if self.dirichlet_face is not None:
            index = [slice(None)] * 3
            index[self.dirichlet_face.axis] = self.dirichlet_face.side
            free[tuple(index)] = False
        free.setflags(write=False)
        return free

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        """Bool array (3, nx, ny, nz): node lies on a face normal to axis a."""
        on = np.zeros((3,) + self.shape, dtype=bool)
        if self.topology is Topology.BOX:
            for a in range(3):
                index = [slice(None)] * 3
                for side in (0, -1):
                    index[a] = side
                    on[(a,) + tuple(index)] = True
        on.setflags(write=False)
        return on


def make_grid(spec: GridSpec) -> Grid:
    """Validate a :class:`GridSpec` and build the grid."""
    try:
        topology = Topology(spec.topology)
    except ValueError as exc:
        raise InvalidSpec(f"unknown topology {spec.topology!r}") from exc
    face = None
    if spec.dirichlet_face is not None:
        try:
            face = Face(spec.dirichlet_face)
        except ValueError as exc:
            raise InvalidSpec(f"unknown face {spec.dirichlet_face!r}") from exc
    if len(spec.n) != 3 or len(spec.h) != 3:
        raise InvalidSpec("n and h need three entries each")
    n = tuple(spec.n)
    if any(int(k) != k for k in n):
        raise InvalidSpec(f"node counts must be integers, got {n}")
    return Grid(int(n[0]), int(n[1]), int(n[2]),
                float(spec.h[0]), float(spec.h[1]), float(spec.h[2]),
                topology, face)


class Field:
    """Node values of a rank-0/1/2 tensor field on a grid.

    The value array has shape ``comp_shape + grid.shape`` and is read-only;
    arithmetic returns new fields.
    """

    comp_shape: ClassVar[tuple[int, ...]] = ()

    def __init__(self, grid: Grid, values, *, tangential_zero: bool = False,
                 dirichlet_zero: bool = False):
        arr = np.array(values, dtype=float)
        expected = self.comp_shape + grid.shape
        if arr.shape != expected:
            raise GridMismatch(f"{type(self).__name__} needs shape {expected}, got {arr.shape}")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr
        self.tangential_zero = tangential_zero
        self.dirichlet_zero = dirichlet_zero

    @property
    def rank(self) -> int:
        return len(self.comp_shape)

    @classmethod
    def zeros(cls, grid: Grid, **flags):
        return cls(grid, np.zeros(cls.comp_shape + grid.shape), **flags)

    def _check(self, other: "Field") -> None:
        if not isinstance(other, Field) or other.grid != self.grid or other.rank != self.rank:
            raise GridMismatch("fields must share grid and rank")

    def _wrap(self, values, other: Optional["Field"] = None):
        tz = self.tangential_zero and (other is None or other.tangential_zero)
        dz = self.dirichlet_zero and (other is None or other.dirichlet_zero)
        return type(self)(self.grid, values, tangential_zero=tz, dirichlet_zero=dz)

    def __add__(self, other):
        self._check(other)
        return self._wrap(self.values + other.values, other)

    def __sub__(self, other):
        self._check(other)
        return self._wrap(self.values - other.values, other)

    def __mul__(self, alpha):
        if isinstance(alpha, Field):
            return NotImplemented
        return self._wrap(float(alpha) * self.values)

    __rmul__ = __mul__

    def __truediv__(self, alpha):
        return self._wrap(self.values / float(alpha))

    def __neg__(self):
        return self._wrap(-self.values)

    def __repr__(self):
        return f"{type(self).__name__}(grid={self.grid.shape}, topology={self.grid.topology.value})"


class ScalarField(Field):
    comp_shape = ()


class VectorField(Field):
    comp_shape = (3,)


class MatrixField(Field):
    comp_shape = (3, 3)


_RANK_CLASSES = {0: ScalarField, 1: VectorField, 2: MatrixField}


def inner_product(a: Field, b: Field) -> float:
    """Discrete L2 pairing: nodal sum of the pointwise contraction times cell volume."""
    a._check(b)
    return float(np.vdot(a.values, b.values)) * a.grid.cell_volume


def norm(a: Field) -> float:
    return float(np.sqrt(inner_product(a, a)))


def tangential_keep_mask(grid: Grid) -> np.ndarray:
    """0/1 array (3, 3, nx, ny, nz) selecting the matrix entries that survive.

    On a face with normal along axis ``a`` only column ``a`` of every row is
    normal; the other two columns are tangential and get zeroed.  At edges
    and corners the conditions of all adjacent faces apply at once, so only
    entries normal to every adjacent face survive (none, at an edge).
    """
    keep = np.ones((3, 3) + grid.shape)
    if grid.topology is Topology.PERIODIC:
        return keep
    on = grid.boundary_normals
    for a in range(3):
        for j in range(3):
            if j != a:
                keep[:, j][:, on[a]] = 0.0
    return keep


def apply_tangential_mask(p: MatrixField) -> MatrixField:
    """Zero the tangential part of every row on the box boundary.

    No-op on periodic grids.  The mask is a coordinate projection, so it is
    idempotent, linear and a contraction in the L2 norm.
    """
    if p.grid.topology is Topology.PERIODIC:
        return MatrixField(p.grid, p.values, tangential_zero=True)
    return MatrixField(p.grid, p.values * tangential_keep_mask(p.grid), tangential_zero=True)


# Snapshot format: 32-byte little-endian header then row-major float64 payload
# of shape comp_shape + (nx, ny, nz).
# magic "GPF1", u32 rank, u32 nx, u32 ny, u32 nz, u32 float64 flag (=1),
# u32 topology code (0 periodic, 1 + face index for box), u32 reserved.
_HEADER = struct.Struct("<4s7I")
_MAGIC = b"GPF1"
_FACES = list(Face)


def write_snapshot(path: Union[str, Path], field: Field) -> None:
    g = field.grid
    code = 0 if g.periodic else 1 + _FACES.index(g.dirichlet_face)
    header = _HEADER.pack(_MAGIC, field.rank, g.nx, g.ny, g.nz, 1, code, 0)
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_snapshot(path: Union[str, Path], spacing: Optional[tuple[float, float, float]] = None) -> Field:
    """Read a snapshot.  The format does not store spacing; it defaults to a
    unit-length domain (``h = 1/n`` per axis)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SnapshotFormatError(f"{path}: file shorter than the 32-byte header")
    magic, rank, nx, ny, nz, f64, code, _ = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {magic!r}")
    if f64 != 1:
        raise SnapshotFormatError(f"{path}: only float64 payloads are supported")
    if rank not in _RANK_CLASSES:
        raise SnapshotFormatError(f"{path}: unsupported rank {rank}")
    if code > len(_FACES):
        raise SnapshotFormatError(f"{path}: unknown topology code {code}")
    cls = _RANK_CLASSES[rank]
    shape = cls.comp_shape + (nx, ny, nz)
    count = int(np.prod(shape))
    if len(data) != _HEADER.size + 8 * count:
        raise SnapshotFormatError(
            f"{path}: payload has {len(data) - _HEADER.size} bytes, expected {8 * count}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=count).reshape(shape)
    if spacing is None:
        spacing = (1.0 / nx, 1.0 / ny, 1.0 / nz)
    try:
        if code == 0:
            grid = Grid(nx, ny, nz, *spacing, Topology.PERIODIC)
        else:
            grid = Grid(nx, ny, nz, *spacing, Topology.BOX, _FACES[code - 1])
    except InvalidSpec as exc:
        raise SnapshotFormatError(f"{path}: {exc}") from exc
    return cls(grid, values)
