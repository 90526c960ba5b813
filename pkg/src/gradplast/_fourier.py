"""Per-mode Fourier symbols of the constant-coefficient quadratic operators.

On a periodic grid the quadratic elastic and plastic forms are block
diagonal in Fourier space.  The blocks built here give exact solvers for
the all-quadratic problems and preconditioners otherwise.  Unknowns per
mode are ``u_hat`` (3 entries) followed by ``p_hat`` (9 entries, row-major).
"""

from __future__ import annotations

import numpy as np

from .operators import OperatorContext

_LEVI = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    _LEVI[_i, _j, _k] = 1.0
    _LEVI[_i, _k, _j] = -1.0


def _sym9() -> np.ndarray:
    S = np.zeros((9, 9))
    for i in range(3):
        for j in range(3):
            S[3 * i + j, 3 * i + j] += 0.5
            S[3 * i + j, 3 * j + i] += 0.5
    return S


def _stiffness9(mu: float, lam: float) -> np.ndarray:
    tr = np.zeros(9)
    tr[[0, 4, 8]] = 1.0
    return 2 * mu * np.eye(9) + lam * np.outer(tr, tr)


def mode_operators(ctx: OperatorContext):
    """Stacked per-mode matrices ``G`` (9x3) and ``Curl`` (9x9).

    The leading axis enumerates the rfft modes in C order.
    """
    ik = ctx._ik.reshape(3, -1).T  # (M, 3)
    M = ik.shape[0]
    G = np.zeros((M, 9, 3), dtype=complex)
    for i in range(3):
        for j in range(3):
            G[:, 3 * i + j, i] = ik[:, j]
    c3 = np.einsum("ijk,mj->mik", _LEVI, ik)  # (M, 3, 3)
    Curl = np.zeros((M, 9, 9), dtype=complex)
    for row in range(3):
        Curl[:, 3 * row:3 * row + 3, 3 * row:3 * row + 3] = c3
    return G, Curl


def elastic_block(ctx: OperatorContext, mu: float, lam: float, g: float) -> np.ndarray:
    """``G^H (C + g) sym G`` per mode, with identity on kernel modes."""
    G, _ = mode_operators(ctx)
    S = _sym9()
    A = _stiffness9(mu, lam) @ S + g * S
    H = np.einsum("mai,ab,mbj->mij", G.conj(), A, G)
    ker = ctx.kernel_modes.reshape(-1)
    H[ker] = np.eye(3)
    return H


def joint_block(ctx: OperatorContext, mu: float, lam: float, g: float, h: float,
                grad_coeff: float, visc_over_tau: float) -> np.ndarray:
    """Full 12x12 Hessian symbol of the quadratic incremental problem.

    ``grad_coeff`` multiplies ``|k|^2`` on each plastic component (it is
    ``2 delta`` for the quadratic gradient term).
    """
    G, Curl = mode_operators(ctx)
    S = _sym9()
    C = _stiffness9(mu, lam)
    CS = S @ C @ S
    M = G.shape[0]
    H = np.zeros((M, 12, 12), dtype=complex)
    H[:, :3, :3] = np.einsum("mai,ab,mbj->mij", G.conj(), CS + g * S, G)
    up = -np.einsum("mai,ab->mib", G.conj(), CS)
    H[:, :3, 3:] = up
    H[:, 3:, :3] = np.conj(np.swapaxes(up, 1, 2))
    k2 = ctx.k2.reshape(-1)
    pp = CS + (h + visc_over_tau) * np.eye(9)
    H[:, 3:, 3:] = (pp[None] + 2 * np.einsum("mai,maj->mij", Curl.conj(), Curl)
                    + (grad_coeff * k2)[:, None, None] * np.eye(9)[None])
    ker = ctx.kernel_modes.reshape(-1)
    H[np.ix_(ker, np.arange(3), np.arange(3))] = np.eye(3)
    return H


class BlockSolver:
    """Applies the inverse of a per-mode block symbol to real fields."""

    def __init__(self, ctx: OperatorContext, H: np.ndarray, zero_u_kernel: bool = True):
        self.ctx = ctx
        self.Hinv = np.linalg.inv(H)
        self.n = H.shape[-1]
        self.ker = ctx.kernel_modes.reshape(-1)
        self.zero_u_kernel = zero_u_kernel

    def solve(self, x: np.ndarray) -> np.ndarray:
        """``x`` has shape ``(n, nx, ny, nz)``; returns the same shape."""
        ctx = self.ctx
        X = ctx.fft(x).reshape(self.n, -1).T  # (M, n)
        Y = np.einsum("mij,mj->mi", self.Hinv, X)
        if self.zero_u_kernel:
            Y[self.ker, :3] = 0.0
        Y = Y.T.reshape((self.n,) + ctx.kernel_modes.shape)
        return ctx.ifft(Y)
