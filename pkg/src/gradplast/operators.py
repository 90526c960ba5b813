"""Discrete differential operators on grid fields.

Arrays carry their tensor components first and the three spatial axes
last, e.g. a matrix field has shape ``(3, 3, nx, ny, nz)``.  ``grad``
appends a derivative axis in front of the spatial axes, so for a vector
field ``grad(u)[i, j] = d_j u_i``.

Two backends:

* periodic grids differentiate in Fourier space, either spectrally or with
  the symbol ``sin(k h) / h`` of centered differences;
* box grids apply dense 1-D centered-difference matrices (second-order
  one-sided at the ends) along each axis.

On the torus both backends make every first-order operator skew-adjoint,
so ``div`` is exactly ``-grad^T`` and ``curl`` is self-adjoint.  On the box
these identities only hold up to boundary terms; the energy gradients
therefore use the exact transposes (``grad_adjoint``, ``curl_adjoint``)
rather than ``div`` and ``curl``.

Wavenumbers whose derivative vanishes on the grid (the zero mode and, for
even ``n``, the Nyquist mode of every axis) are kernel modes of all
operators.
"""

from __future__ import annotations

import enum
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import GridMismatch, InvalidExponent, TopologyUnsupported
from .grid import Field, Grid, MatrixField, VectorField

__all__ = [
    "Scheme",
    "OperatorContext",
    "default_context",
    "sym_array",
    "grad_vec",
    "sym",
    "curl_mat",
    "curlcurl_mat",
    "div_mat",
    "rlaplacian_term",
    "R_MIN",
]

R_MIN = 6.0 / 5.0
_SPATIAL = (-3, -2, -1)


class Scheme(str, enum.Enum):
    SPECTRAL = "spectral"
    CENTERED = "centered"


def sym_array(F: np.ndarray) -> np.ndarray:
    return 0.5 * (F + np.swapaxes(F, 0, 1))


def _centered_matrix(n: int, h: float) -> np.ndarray:
    D = np.zeros((n, n))
    idx = np.arange(1, n - 1)
    D[idx, idx - 1] = -0.5 / h
    D[idx, idx + 1] = 0.5 / h
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D


class OperatorContext:
    """Grid plus discretization choices shared by all operators."""

    def __init__(self, grid: Grid, scheme: Optional[Scheme | str] = None,
                 smoothing_eps: float = 1e-8):
        if scheme is None:
            scheme = Scheme.SPECTRAL if grid.periodic else Scheme.CENTERED
        scheme = Scheme(scheme)
        if scheme is Scheme.SPECTRAL and not grid.periodic:
            raise TopologyUnsupported("the spectral scheme needs a periodic grid")
        if not smoothing_eps > 0:
            raise ValueError("smoothing_eps must be positive")
        self.grid = grid
        self.scheme = scheme
        self.smoothing_eps = float(smoothing_eps)
        self.shape = grid.shape
        if grid.periodic:
            self._setup_fourier()
        else:
            self._D = [_centered_matrix(n, h) for n, h in zip(grid.shape, grid.spacing)]

    # ------------------------------------------------------------------ setup
    def _setup_fourier(self):
        ks = []
        for axis, (n, h) in enumerate(zip(self.grid.shape, self.grid.spacing)):
            if axis == 2:
                k = 2 * np.pi * np.fft.rfftfreq(n, d=h)
            else:
                k = 2 * np.pi * np.fft.fftfreq(n, d=h)
            if self.scheme is Scheme.CENTERED:
                k = np.sin(k * h) / h
            if n % 2 == 0:
                k[n // 2 if axis < 2 else -1] = 0.0
            shape = [1, 1, 1]
            shape[axis] = k.size
            ks.append(k.reshape(shape))
        spec_shape = (self.shape[0], self.shape[1], self.shape[2] // 2 + 1)
        self.wavevector = np.stack([np.broadcast_to(k, spec_shape) for k in ks])
        self._ik = 1j * self.wavevector
        self.k2 = np.sum(self.wavevector ** 2, axis=0)
        self.kernel_modes = self.k2 == 0.0

    # ------------------------------------------------------------- transforms
    def fft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(a, axes=_SPATIAL)

    def ifft(self, A: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(A, s=self.shape, axes=_SPATIAL)

    # ----------------------------------------------------- first-order blocks
    def _box_deriv(self, a: np.ndarray, axis: int, adjoint: bool = False) -> np.ndarray:
        D = self._D[axis].T if adjoint else self._D[axis]
        ax = a.ndim - 3 + axis
        return np.moveaxis(np.tensordot(D, a, axes=([1], [ax])), 0, ax)

    def partial(self, a: np.ndarray, axis: int) -> np.ndarray:
        """Derivative along one spatial axis."""
        if self.grid.periodic:
            return self.ifft(self.fft(a) * self._ik[axis])
        return self._box_deriv(a, axis)

    def grad(self, a: np.ndarray) -> np.ndarray:
        if self.grid.periodic:
            A = self.fft(a)
            return self.ifft(A[..., None, :, :, :] * self._ik)
        return np.stack([self._box_deriv(a, j) for j in range(3)], axis=a.ndim - 3)

    def grad_adjoint(self, S: np.ndarray) -> np.ndarray:
        """Exact L2 adjoint of :meth:`grad`; contracts the derivative axis."""
        if self.grid.periodic:
            Sh = self.fft(S)
            return self.ifft(-np.sum(Sh * self._ik, axis=S.ndim - 4))
        ax = S.ndim - 4
        return sum(self._box_deriv(np.take(S, j, axis=ax), j, adjoint=True) for j in range(3))

    def div(self, S: np.ndarray) -> np.ndarray:
        """Strong divergence over the last component axis: sum_j d_j S[..., j]."""
        if self.grid.periodic:
            return -self.grad_adjoint(S)
        ax = S.ndim - 4
        return sum(self._box_deriv(np.take(S, j, axis=ax), j) for j in range(3))

    def _curl_from(self, d, v: np.ndarray) -> np.ndarray:
        # (curl v)_i = eps_ijk d_j v_k over the last component axis
        ax = v.ndim - 4
        c = lambda k: np.take(v, k, axis=ax)  # noqa: E731
        out = [d(c(2), 1) - d(c(1), 2), d(c(0), 2) - d(c(2), 0), d(c(1), 0) - d(c(0), 1)]
        return np.stack(out, axis=ax)

    def curl(self, v: np.ndarray) -> np.ndarray:
        """Row-wise curl: acts on the last component axis of ``v``."""
        if self.grid.periodic:
            V = self.fft(v)
            ik = self._ik
            ax = v.ndim - 4
            c = lambda k: np.take(V, k, axis=ax)  # noqa: E731
            out = [ik[1] * c(2) - ik[2] * c(1), ik[2] * c(0) - ik[0] * c(2),
                   ik[0] * c(1) - ik[1] * c(0)]
            return self.ifft(np.stack(out, axis=ax))
        return self._curl_from(self._box_deriv, v)

    def curl_adjoint(self, w: np.ndarray) -> np.ndarray:
        if self.grid.periodic:
            return self.curl(w)
        return self._curl_from(lambda a, j: -self._box_deriv(a, j, adjoint=True), w)

    def curlcurl(self, p: np.ndarray) -> np.ndarray:
        return self.curl_adjoint(self.curl(p))

    # -------------------------------------------------------- r-Laplacian term
    @staticmethod
    def _check_exponent(r: float) -> None:
        if not r > R_MIN:
            raise InvalidExponent(f"gradient exponent r must exceed 6/5, got {r}")

    def grad_energy_density(self, p: np.ndarray, delta: float, r: float,
                            G: Optional[np.ndarray] = None) -> np.ndarray:
        """Pointwise delta * ((|grad p|^2 + eps^2)^(r/2) - eps^r); exact delta |grad p|^2 at r = 2."""
        self._check_exponent(r)
        if delta == 0:
            return np.zeros(self.shape)
        if G is None:
            G = self.grad(p)
        s2 = np.sum(G * G, axis=tuple(range(G.ndim - 3)))
        if r == 2:
            return delta * s2
        eps = self.smoothing_eps
        return delta * ((s2 + eps * eps) ** (0.5 * r) - eps ** r)

    def rlap(self, p: np.ndarray, delta: float, r: float) -> np.ndarray:
        """L2 gradient of the integrated smoothed density: delta * grad^T(m(|grad p|) grad p)."""
        self._check_exponent(r)
        if delta == 0:
            return np.zeros_like(p)
        G = self.grad(p)
        if r == 2:
            return 2.0 * delta * self.grad_adjoint(G)
        s2 = np.sum(G * G, axis=tuple(range(G.ndim - 3)))
        eps = self.smoothing_eps
        m = r * (s2 + eps * eps) ** (0.5 * (r - 2))
        return delta * self.grad_adjoint(m * G)

    def rlap_hessian(self, p: np.ndarray, dp: np.ndarray, delta: float, r: float,
                     lagged: bool = False) -> np.ndarray:
        """Second derivative of the smoothed term at ``p`` applied to ``dp``.

        ``lagged=True`` freezes the modulus and drops the curvature term
        (lagged diffusivity); for ``r < 2`` this majorizes the true Hessian.
        """
        if delta == 0:
            return np.zeros_like(dp)
        dG = self.grad(dp)
        if r == 2:
            return 2.0 * delta * self.grad_adjoint(dG)
        G = self.grad(p)
        red = tuple(range(G.ndim - 3))
        w = np.sum(G * G, axis=red) + self.smoothing_eps ** 2
        m = r * w ** (0.5 * (r - 2))
        if lagged:
            return delta * self.grad_adjoint(m * dG)
        m2 = r * (r - 2) * w ** (0.5 * (r - 4))
        H = m * dG + (m2 * np.sum(G * dG, axis=red)) * G
        return delta * self.grad_adjoint(H)

    def rlap_modulus(self, p: np.ndarray, r: float) -> np.ndarray:
        """Pointwise m(|grad p|) = r (|grad p|^2 + eps^2)^((r-2)/2)."""
        if r == 2:
            return np.full(self.shape, 2.0)
        G = self.grad(p)
        s2 = np.sum(G * G, axis=tuple(range(G.ndim - 3)))
        return r * (s2 + self.smoothing_eps ** 2) ** (0.5 * (r - 2))

    # --------------------------------------------------------------- helpers
    def check(self, *fields: Field) -> None:
        for f in fields:
            if f.grid != self.grid:
                raise GridMismatch("field grid differs from the operator grid")


@lru_cache(maxsize=32)
def default_context(grid: Grid) -> OperatorContext:
    return OperatorContext(grid)


def _ctx(field: Field, ctx: Optional[OperatorContext]) -> OperatorContext:
    if ctx is None:
        return default_context(field.grid)
    ctx.check(field)
    return ctx


def _expect(field: Field, cls) -> None:
    if not isinstance(field, cls):
        raise GridMismatch(f"expected {cls.__name__}, got {type(field).__name__}")


def grad_vec(u: VectorField, ctx: Optional[OperatorContext] = None) -> MatrixField:
    """Displacement gradient, ``(grad u)[i, j] = d_j u_i``."""
    _expect(u, VectorField)
    return MatrixField(u.grid, _ctx(u, ctx).grad(u.values))


def sym(F: MatrixField) -> MatrixField:
    _expect(F, MatrixField)
    return MatrixField(F.grid, sym_array(F.values))


def curl_mat(p: MatrixField, ctx: Optional[OperatorContext] = None) -> MatrixField:
    """Row-wise curl, right-handed: ``(curl v)_i = eps_ijk d_j v_k`` per row."""
    _expect(p, MatrixField)
    return MatrixField(p.grid, _ctx(p, ctx).curl(p.values))


def curlcurl_mat(p: MatrixField, ctx: Optional[OperatorContext] = None) -> MatrixField:
    """``curl^T curl p``; equals ``curl(curl p)`` on periodic grids.

    ``<curlcurl p, q> = <curl p, curl q>`` holds on every topology.
    """
    _expect(p, MatrixField)
    return MatrixField(p.grid, _ctx(p, ctx).curlcurl(p.values))


def div_mat(S: MatrixField, ctx: Optional[OperatorContext] = None) -> VectorField:
    """Row-wise divergence ``(div S)_i = sum_j d_j S_ij``."""
    _expect(S, MatrixField)
    return VectorField(S.grid, _ctx(S, ctx).div(S.values))


def rlaplacian_term(p: MatrixField, delta: float, r: float,
                    ctx: Optional[OperatorContext] = None) -> MatrixField:
    """``-delta div(m(|grad p|) grad p)`` with ``m(s) = r (s^2 + eps^2)^((r-2)/2)``.

    This is the L2 gradient of ``delta * (|grad p|^2 + eps^2)^(r/2)``; at
    ``r = 2`` it is exactly ``-2 delta lap p``.
    """
    _expect(p, MatrixField)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    c = _ctx(p, ctx)
    c._check_exponent(r)
    return MatrixField(p.grid, c.rlap(p.values, delta, r))
