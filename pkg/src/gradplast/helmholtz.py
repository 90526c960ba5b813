"""Row-wise Helmholtz decomposition on the periodic torus.

Each row ``q_i`` of a matrix field splits as

    q_i = grad(phi_i) + curl(psi_i) + mean_i

with ``div psi_i = 0``.  The ``mean`` part collects every mode annihilated
by the discrete derivative: the constant mode and, for even node counts,
the Nyquist modes.  Both potentials carry the zero-mean gauge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GridMismatch, LengthMismatch, TopologyUnsupported
from .grid import MatrixField, VectorField
from .operators import OperatorContext, Scheme, default_context

__all__ = ["HelmholtzParts", "PairingReport", "decompose", "divcurl_pairing_audit"]


@dataclass(frozen=True)
class HelmholtzParts:
    phi: VectorField
    psi: MatrixField
    mean: MatrixField
    grad_part: MatrixField
    curl_part: MatrixField

    def reconstruct(self) -> MatrixField:
        return self.grad_part + self.curl_part + self.mean


def _context(q: MatrixField, ctx: Optional[OperatorContext]) -> OperatorContext:
    if not q.grid.periodic:
        raise TopologyUnsupported("the Helmholtz decomposition is implemented on periodic grids")
    if ctx is None:
        ctx = default_context(q.grid)
    elif ctx.grid != q.grid:
        raise GridMismatch("field grid differs from the operator grid")
    if ctx.scheme is not Scheme.SPECTRAL:
        raise TopologyUnsupported("the Helmholtz decomposition needs the spectral scheme")
    return ctx


def decompose(q: MatrixField, ctx: Optional[OperatorContext] = None) -> HelmholtzParts:
    """Split ``q`` into gradient, divergence-free curl and kernel parts."""
    if not isinstance(q, MatrixField):
        raise GridMismatch("decompose expects a MatrixField")
    ctx = _context(q, ctx)
    k = ctx.wavevector
    ik = ctx._ik
    ker = ctx.kernel_modes
    k2 = np.where(ker, 1.0, ctx.k2)

    Q = ctx.fft(q.values)  # (3, 3, modes): row i, column j
    Qmean = np.where(ker, Q, 0.0)
    Qk = np.where(ker, 0.0, Q)
    kdotq = np.einsum("jxyz,ijxyz->ixyz", k, Qk)
    Phi = -1j * kdotq / k2
    Grad = np.einsum("ixyz,jxyz->ijxyz", Phi, ik)
    C = Qk - Grad
    Psi = np.cross(ik, C, axisb=1, axisa=0, axisc=1) / k2
    Curl = np.cross(ik, Psi, axisb=1, axisa=0, axisc=1)
    g = q.grid
    return HelmholtzParts(
        phi=VectorField(g, ctx.ifft(Phi)),
        psi=MatrixField(g, ctx.ifft(Psi)),
        mean=MatrixField(g, ctx.ifft(Qmean)),
        grad_part=MatrixField(g, ctx.ifft(Grad)),
        curl_part=MatrixField(g, ctx.ifft(Curl)),
    )


@dataclass
class PairingReport:
    """Weighted pairings ``sum_k dt theta_k <S_k, p_k>`` per refinement level."""

    pairings: list = field(default_factory=list)
    cauchy: list = field(default_factory=list)
    div_bounds: list = field(default_factory=list)
    curl_bounds: list = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        c = self.cauchy
        return all(b < a or b == a == 0.0 for a, b in zip(c[:-1], c[1:]))


def _is_single_level(seq) -> bool:
    return len(seq) == 0 or isinstance(seq[0], MatrixField)


def divcurl_pairing_audit(S_seq: Sequence, p_seq: Sequence, weights: Sequence,
                          dts: Optional[Sequence[float]] = None,
                          ctx: Optional[OperatorContext] = None) -> PairingReport:
    """Time-weighted pairings of back-stress and plastic strain sequences.

    Pass one level as lists of fields (``weights`` a list of numbers) or a
    refinement family as lists of such lists.  ``dts`` are the time steps
    per level (default ``1 / len``).  Cauchy differences are taken between
    consecutive levels; ``div_bounds`` and ``curl_bounds`` are
    ``max_k ||div S_k||`` and ``max_k ||curl p_k||`` per level.
    """
    if _is_single_level(S_seq):
        S_seq, p_seq, weights = [S_seq], [p_seq], [weights]
        dts = None if dts is None else [dts] if np.ndim(dts) == 0 else dts
    if not (len(S_seq) == len(p_seq) == len(weights)):
        raise LengthMismatch("as many S, p and weight sequences are needed")
    if dts is not None and len(dts) != len(S_seq):
        raise LengthMismatch("one time step per level is needed")
    rep = PairingReport()
    for lvl, (S, P, w) in enumerate(zip(S_seq, p_seq, weights)):
        if not (len(S) == len(P) == len(w)):
            raise LengthMismatch(f"level {lvl}: sequences have lengths {len(S)}, {len(P)}, {len(w)}")
        if len(S) == 0:
            rep.pairings.append(0.0)
            rep.div_bounds.append(0.0)
            rep.curl_bounds.append(0.0)
            continue
        grid = S[0].grid
        for a in list(S) + list(P):
            if a.grid != grid:
                raise GridMismatch("all fields must share one grid")
        c = default_context(grid) if ctx is None else ctx
        dt = (1.0 / len(S)) if dts is None else float(dts[lvl])
        dV = grid.cell_volume
        total = 0.0
        dmax = cmax = 0.0
        for Sk, pk, wk in zip(S, P, w):
            total += dt * float(wk) * float(np.vdot(Sk.values, pk.values)) * dV
            d = c.div(Sk.values)
            cu = c.curl(pk.values)
            dmax = max(dmax, math.sqrt(float(np.vdot(d, d)) * dV))
            cmax = max(cmax, math.sqrt(float(np.vdot(cu, cu)) * dV))
        rep.pairings.append(total)
        rep.div_bounds.append(dmax)
        rep.curl_bounds.append(cmax)
    rep.cauchy = [abs(b - a) for a, b in zip(rep.pairings[:-1], rep.pairings[1:])]
    return rep
