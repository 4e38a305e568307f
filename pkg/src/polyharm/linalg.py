"""Fast Dirichlet Laplacian inverse and Krylov helpers shared by the solvers.

The 7-point Dirichlet Laplacian on the interior nodes of the cube is
diagonalized by the type-I discrete sine transform, which gives an exact
solver in ``O(N^3 log N)``. Coupled systems are solved by GMRES using it as
the preconditioner or as the leading part of an operator splitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.sparse.linalg as spla

from .grid import GridSpec


class SolverError(RuntimeError):
    """Linear solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class DirichletLaplacian:
    """Exact inverse of ``-Lap_h`` on interior nodes with zero boundary values.

    Arrays are interior cubes ``(..., n, n, n)`` with ``n = N - 2``.
    """

    grid: GridSpec
    eig: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.grid.N - 2
        k = np.arange(1, n + 1)
        lam1 = (2.0 - 2.0 * np.cos(np.pi * k / (n + 1))) / self.grid.dx**2
        eig = lam1[:, None, None] + lam1[None, :, None] + lam1[None, None, :]
        object.__setattr__(self, "eig", eig)

    @property
    def n(self) -> int:
        return self.grid.N - 2

    def _spectral(self, y: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        axes = (-3, -2, -1)
        t = sfft.dstn(y, type=1, axes=axes, norm="ortho")
        return sfft.idstn(t * symbol, type=1, axes=axes, norm="ortho")

    def solve(self, y: np.ndarray, power: int = 1) -> np.ndarray:
        """``(-Lap_h)^{-power} y``."""
        return self._spectral(np.asarray(y), self.eig ** (-power))

    def apply(self, x: np.ndarray, power: int = 1) -> np.ndarray:
        """``(-Lap_h)^power x`` for zero boundary values."""
        return self._spectral(np.asarray(x), self.eig**power)


@lru_cache(maxsize=16)
def dirichlet_laplacian(grid: GridSpec) -> DirichletLaplacian:
    return DirichletLaplacian(grid)


@dataclass
class KrylovInfo:
    iterations: int = 0
    residual: float = 0.0


def gmres_solve(
    matvec,
    rhs: np.ndarray,
    precond=None,
    tol: float = 1e-10,
    maxiter: int = 20,
    restart: int = 60,
) -> tuple[np.ndarray, KrylovInfo]:
    """GMRES on a matrix-free operator acting on flat vectors.

    Raises ``SolverError`` when the true relative residual ``|A x - b|/|b|``
    ends above ``tol``.
    """
    rhs = np.asarray(rhs, dtype=np.complex128)
    nb = float(np.linalg.norm(rhs))
    info = KrylovInfo()
    if nb == 0.0:
        return np.zeros_like(rhs), info
    n = rhs.size
    count = [0]

    def mv(v):
        count[0] += 1
        return matvec(v)

    A = spla.LinearOperator((n, n), matvec=mv, dtype=np.complex128)
    M = None if precond is None else spla.LinearOperator((n, n), matvec=precond, dtype=np.complex128)
    x, flag = spla.gmres(A, rhs, rtol=tol * 0.2, atol=0.0, restart=restart, maxiter=maxiter, M=M)
    res = float(np.linalg.norm(matvec(x) - rhs) / nb)
    info.iterations = count[0]
    info.residual = res
    if not np.all(np.isfinite(x)) or res > tol:
        raise SolverError(f"GMRES stopped at relative residual {res:.2e} (flag {flag})", res)
    return x, info
