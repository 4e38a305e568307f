"""Hodge splits of a symmetric tensor and of a vector field on the grid.

Tensor: ``A = A' + sym grad V + theta id`` with ``A'`` trace- and
divergence-free and ``V = 0`` on the boundary. Vector:
``X = X' + grad theta`` with ``theta = 0`` on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .grid import SYM_INDEX, SYM_PAIRS, GridSpec, check_shape, divergence, gradient, laplacian, partial, quadrature
from .linalg import SolverError, dirichlet_laplacian, gmres_solve

__all__ = [
    "SolverError",
    "TensorHodge",
    "VectorHodge",
    "decompose_tensor",
    "decompose_vector",
    "solve_dirichlet_poisson",
    "solve_elliptic_system",
    "sym_grad",
    "tensor_divergence",
]


def _l2(a, grid):
    return float(np.sqrt(max(quadrature(a, a, grid).real, 0.0)))


@dataclass(frozen=True, eq=False)
class TensorHodge:
    A_prime: np.ndarray
    V: np.ndarray
    theta: np.ndarray
    residuals: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class VectorHodge:
    X_prime: np.ndarray
    theta: np.ndarray
    residuals: dict = field(default_factory=dict)


def _interior(u: np.ndarray) -> np.ndarray:
    return u[..., 1:-1, 1:-1, 1:-1]


def _zero_extend(x: np.ndarray, grid: GridSpec) -> np.ndarray:
    out = np.zeros(x.shape[:-3] + grid.shape, dtype=x.dtype)
    out[..., 1:-1, 1:-1, 1:-1] = x
    return out


def elliptic_apply(V: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``-(1/2) Lap V_k - (1/6) d_k div V`` on all nodes of a full-grid field."""
    divV = sum(partial(V[j], j, grid) for j in range(3))
    return np.stack([-0.5 * laplacian(V[k], grid) - partial(divV, k, grid) / 6.0 for k in range(3)])


def solve_elliptic_system(F: np.ndarray, grid: GridSpec, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Solve ``-div(sym grad V) + (1/3) grad(div V) = F`` with ``V = 0`` on the boundary.

    The operator equals ``-(1/2) Lap V - (1/6) grad div V``; the Laplacian is
    the 7-point stencil and ``grad div`` composes central first differences.
    GMRES runs matrix-free, preconditioned by the exact inverse of
    ``-(1/2) Lap_h``.

    Returns
    -------
    V : ndarray, shape (3, N, N, N)
    residual : float
        Relative residual of the linear solve on interior nodes.
    """
    check_shape(F, grid, 3)
    rhs = _interior(np.asarray(F, dtype=complex))
    if not np.any(rhs):
        return np.zeros((3,) + grid.shape, dtype=np.result_type(F, float)), 0.0
    lap = dirichlet_laplacian(grid)
    shp = rhs.shape

    def mv(x):
        V = _zero_extend(x.reshape(shp), grid)
        return _interior(elliptic_apply(V, grid)).ravel()

    def pc(r):
        return 2.0 * lap.solve(r.reshape(shp)).ravel()

    x, info = gmres_solve(mv, rhs.ravel(), precond=pc, tol=tol)
    V = _zero_extend(x.reshape(shp), grid)
    if not np.iscomplexobj(F):
        V = V.real
    return V, info.residual


def sym_grad(V: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Symmetric gradient ``(d_j V_k + d_k V_j)/2`` in upper-triangle storage."""
    return np.stack([0.5 * (partial(V[k], j, grid) + partial(V[j], k, grid)) for j, k in SYM_PAIRS])


def tensor_divergence(A: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``(div A)_k = sum_j d_j A_jk`` with central differences."""
    Af = A[SYM_INDEX]
    return np.stack([sum(partial(Af[j, k], j, grid) for j in range(3)) for k in range(3)])


def decompose_tensor(A: np.ndarray, grid: GridSpec) -> TensorHodge:
    """Split a symmetric tensor field into solenoidal, potential and isotropic parts.

    ``V`` solves the elliptic system with ``F = -div A + (1/3) grad trace A``,
    ``theta = (trace A - div V)/3`` and ``A' = A - sym grad V - theta id``, so
    reassembly and ``trace A' = 0`` hold to rounding.
    """
    check_shape(A, grid, 6)
    trA = A[0] + A[3] + A[5]
    F = -tensor_divergence(A, grid) + np.stack([partial(trA, k, grid) for k in range(3)]) / 3.0
    V, res = solve_elliptic_system(F, grid)
    theta = (trA - divergence(V, grid)) / 3.0
    A_prime = A - sym_grad(V, grid)
    for c in (0, 3, 5):
        A_prime[c] = A_prime[c] - theta
    nA = _l2(A, grid)
    div = tensor_divergence(A_prime, grid)
    residuals = {
        "div_norm": _l2(div, grid) / nA if nA > 0 else 0.0,
        "trace_norm": float(np.max(np.abs(A_prime[0] + A_prime[3] + A_prime[5]))),
        "bvp_residual": res,
    }
    return TensorHodge(A_prime, V, theta, residuals)


def solve_dirichlet_poisson(f: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, float]:
    """``Lap_h u = f`` on interior nodes with ``u = 0`` on the boundary (exact sine-transform solve)."""
    lap = dirichlet_laplacian(grid)
    rhs = _interior(np.asarray(f))
    x = -lap.solve(rhs)
    u = _zero_extend(x, grid)
    r = _interior(laplacian(u, grid)) - rhs
    nr = np.linalg.norm(rhs)
    return u, float(np.linalg.norm(r) / nr) if nr > 0 else 0.0


def decompose_vector(X: np.ndarray, grid: GridSpec) -> VectorHodge:
    """Split ``X = X' + grad theta`` with ``Lap theta = div X`` and ``theta = 0`` on the boundary."""
    check_shape(X, grid, 3)
    theta, res = solve_dirichlet_poisson(divergence(X, grid), grid)
    X_prime = X - gradient(theta, grid)
    nX = _l2(X, grid)
    residuals = {
        "div_norm": _l2(divergence(X_prime, grid), grid) / nX if nX > 0 else 0.0,
        "bvp_residual": res,
    }
    return VectorHodge(X_prime, theta, residuals)
