"""Navier boundary-value solver, adjoint solves, Neumann traces and DtN tools.

The operator is ``(-Lap)^m + P`` with ``P u = -A_jk d_j d_k u - i B.grad u + q u``.
It is discretized as the chain ``v_0 = u``, ``(-Lap_h) v_j = v_{j+1}`` and
``(-Lap_h) v_{m-1} + P_h v_0 = 0`` on interior nodes, with ``v_j = f_j`` on
the boundary. On interior unknowns write ``-Lap_h = K`` (sine-transform
diagonal) and ``S = K^{-1}``; eliminating the chain gives

    (I + S^m P) x_0 = sum_j S^{j+1} g_j - S^m P b_0,

where ``g_j`` collects the boundary stencil contributions of ``f_j``. ``P``
only couples nodes near the coefficient support, so the system collapses to
a dense one on that support, which is factorized once per coefficient set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.ndimage import binary_dilation

from .fields import CoefficientSet, adjoint_coefficients
from .grid import GridSpec, laplacian, normal_trace, partial, quadrature, second_partial, sparse_stencils
from .linalg import SolverError, dirichlet_laplacian, gmres_solve

DENSE_LIMIT = 4500
SOLVE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class NavierTrace:
    """Navier data ``(f_0, ..., f_{m-1})`` on the boundary nodes."""

    data: np.ndarray
    grid: GridSpec
    scale_note: str = ""

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.data, dtype=complex))
        if d.shape[1] != self.grid.boundary_index.size:
            raise ValueError("trace does not match the boundary index set")
        object.__setattr__(self, "data", d)

    @property
    def m(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class NeumannTrace:
    """Neumann data ``g_j = d_nu (-Lap)^j u`` on the boundary nodes."""

    data: np.ndarray
    grid: GridSpec

    @property
    def m(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class Solution:
    """Chain ``v_j = (-Lap)^j u`` of a Navier solve, ``u = v[0]``."""

    v: np.ndarray
    grid: GridSpec
    diagnostics: dict = field(default_factory=dict)

    @property
    def u(self) -> np.ndarray:
        return self.v[0]

    @property
    def m(self) -> int:
        return self.v.shape[0]


def perturbation_apply(coeffs: CoefficientSet, u: np.ndarray) -> np.ndarray:
    """``P u = -A_jk d_j d_k u - i B.grad u + q u`` with grid stencils."""
    g = coeffs.grid
    Af = coeffs.A_full
    out = coeffs.q * u
    if np.any(coeffs.A):
        for j in range(3):
            for k in range(3):
                out = out - Af[j, k] * second_partial(u, j, k, g)
    if np.any(coeffs.B):
        out = out - 1j * sum(coeffs.B[k] * partial(u, k, g) for k in range(3))
    return out


def apply_operator(coeffs: CoefficientSet, u: np.ndarray) -> np.ndarray:
    """``(-Lap_h)^m u + P_h u`` on the full grid."""
    w = u
    for _ in range(coeffs.m):
        w = -laplacian(w, coeffs.grid)
    return w + perturbation_apply(coeffs, u)


def perturbation_matrix(coeffs: CoefficientSet) -> sp.csr_matrix:
    """Sparse full-grid matrix of ``P`` consistent with ``perturbation_apply``."""
    st = sparse_stencils(coeffs.grid)
    Af = coeffs.A_full
    n = coeffs.grid.size
    M = sp.diags(coeffs.q.ravel())
    for j in range(3):
        for k in range(3):
            if np.any(Af[j, k]):
                Djk = st.D2[j] if j == k else st.D[j] @ st.D[k]
                M = M - sp.diags(Af[j, k].ravel()) @ Djk
    for k in range(3):
        if np.any(coeffs.B[k]):
            M = M - 1j * sp.diags(coeffs.B[k].ravel()) @ st.D[k]
    return sp.csr_matrix(M, shape=(n, n))


def apply_adjoint_operator(coeffs: CoefficientSet, v: np.ndarray) -> np.ndarray:
    """``(-Lap_h)^m v + P_h^H v``: the conjugate transpose for interior-supported fields."""
    w = v
    for _ in range(coeffs.m):
        w = -laplacian(w, coeffs.grid)
    PH = perturbation_matrix(coeffs).conj().T
    return w + (PH @ v.ravel()).reshape(v.shape)


class NavierSolver:
    """Reusable solver for one coefficient set; immutable after construction.

    Parameters
    ----------
    coeffs : CoefficientSet
    adjoint : bool
        Use ``P^H`` (conjugate transpose of the assembled perturbation) in
        place of ``P``.
    """

    def __init__(self, coeffs: CoefficientSet, adjoint: bool = False):
        g = coeffs.grid
        self.coeffs = coeffs
        self.grid = g
        self.m = coeffs.m
        self.adjoint = adjoint
        self.lap = dirichlet_laplacian(g)
        n = g.N - 2
        self.n = n
        full = perturbation_matrix(coeffs)
        if adjoint:
            full = full.conj().T.tocsr()
        inner = np.zeros(g.shape, dtype=bool)
        inner[1:-1, 1:-1, 1:-1] = True
        active = np.zeros(g.shape, dtype=bool)
        for arr in (coeffs.A, coeffs.B):
            active |= np.any(arr != 0, axis=0)
        active |= coeffs.q != 0
        sigma = binary_dilation(active, structure=np.ones((3, 3, 3), bool)) & inner
        # positions of the support inside the interior cube
        ii = np.flatnonzero(sigma[1:-1, 1:-1, 1:-1].ravel())
        self.sigma = ii
        fi = np.flatnonzero(sigma.ravel())
        self.P_sigma = full[fi][:, fi].tocsr()
        self.full = full
        self._lu = None
        self._G = None
        k = ii.size
        if k and k <= DENSE_LIMIT:
            G = self._green_block(ii)
            self._G = G
            K = np.eye(k, dtype=complex) + (self.P_sigma.T @ G.T).T
            anorm = np.abs(K).sum(axis=0).max()
            self._lu = sla.lu_factor(K, check_finite=False)
            rcond, _ = sla.lapack.zgecon(self._lu[0], anorm, norm="1")
            self.condition = float(1.0 / rcond) if rcond > 0 else np.inf
        else:
            self.condition = np.nan

    def _green_block(self, idx: np.ndarray) -> np.ndarray:
        """``(S^m)[idx, idx]`` as a dense array, built in column batches."""
        n = self.n
        k = idx.size
        G = np.empty((k, k))
        batch = 64
        for s in range(0, k, batch):
            cols = idx[s : s + batch]
            E = np.zeros((cols.size, n * n * n))
            E[np.arange(cols.size), cols] = 1.0
            Y = self.lap.solve(E.reshape(cols.size, n, n, n), self.m).reshape(cols.size, -1)
            G[:, s : s + batch] = Y[:, idx].T
        return G

    def _S(self, y: np.ndarray, power: int = 1) -> np.ndarray:
        return self.lap.solve(y, power)

    def _P_sigma_apply(self, z: np.ndarray) -> np.ndarray:
        """Interior-cube field of ``P`` applied to a field supported on the support set."""
        n = self.n
        out = np.zeros(n**3, dtype=complex)
        out[self.sigma] = self.P_sigma @ z
        return out.reshape(n, n, n)

    def solve(self, trace: NavierTrace) -> Solution:
        g = self.grid
        m = self.m
        if not trace.grid.same_as(g):
            raise ValueError("trace and coefficients live on different grids")
        if trace.m != m:
            raise ValueError(f"expected {m} Navier components, got {trace.m}")
        ext = [g.extend(trace.data[j]) for j in range(m)]
        gj = [laplacian(e, g)[1:-1, 1:-1, 1:-1] for e in ext]
        Pb = self._P_full(ext[0])[1:-1, 1:-1, 1:-1]
        rhs = np.zeros((self.n,) * 3, dtype=complex)
        for j in range(m - 1, -1, -1):
            rhs = self._S(rhs + gj[j]) if j < m - 1 else self._S(gj[j] - Pb)
        c = rhs
        info = {"iterations": 0, "condition": self.condition}
        k = self.sigma.size
        if k == 0:
            x0 = c
            reduced = 0.0
        else:
            cs = c.ravel()[self.sigma]

            def mv(zz):
                return zz + self._S(self._P_sigma_apply(zz), m).ravel()[self.sigma]

            if self._lu is not None:
                z = sla.lu_solve(self._lu, cs, check_finite=False)
            else:
                z, kinfo = gmres_solve(mv, cs, tol=SOLVE_TOL * 0.1, maxiter=50)
                info["iterations"] = kinfo.iterations
            ncs = np.linalg.norm(cs)
            reduced = float(np.linalg.norm(mv(z) - cs) / ncs) if ncs > 0 else 0.0
            x0 = c - self._S(self._P_sigma_apply(z), m)
        # forward chain on interior nodes
        v = np.empty((m,) + g.shape, dtype=complex)
        v[0] = ext[0]
        v[0][1:-1, 1:-1, 1:-1] = x0
        for j in range(1, m):
            v[j] = ext[j]
            v[j][1:-1, 1:-1, 1:-1] = (-laplacian(v[j - 1], g))[1:-1, 1:-1, 1:-1]
        last = (-laplacian(v[m - 1], g) + self._P_full(v[0]))[1:-1, 1:-1, 1:-1]
        scale = np.sqrt(sum(np.linalg.norm(x) ** 2 for x in gj))
        # the unpreconditioned block residual carries rounding of order eps*|K|^m
        info["block_residual"] = float(np.linalg.norm(last) / scale) if scale > 0 else 0.0
        info["residual"] = reduced
        if not np.isfinite(reduced) or reduced > SOLVE_TOL:
            raise SolverError(f"Navier solve residual {reduced:.2e}; operator may be near-singular", reduced)
        return Solution(v, g, info)

    def _P_full(self, u: np.ndarray) -> np.ndarray:
        return (self.full @ u.ravel()).reshape(u.shape)


@lru_cache(maxsize=8)
def navier_solver(coeffs: CoefficientSet, adjoint: bool = False) -> NavierSolver:
    return NavierSolver(coeffs, adjoint)


def solve_navier(coeffs: CoefficientSet, f: NavierTrace) -> Solution:
    """Solve ``Lu = 0`` with Navier data ``f``."""
    return navier_solver(coeffs, False).solve(f)


def solve_adjoint(coeffs: CoefficientSet, f_star: NavierTrace, cross_check: bool = False) -> Solution:
    """Solve the conjugate-transposed discrete problem with Navier data ``f_star``.

    With ``cross_check`` the problem is re-solved using the continuous
    adjoint coefficients and ``diagnostics["cross_check"]`` holds the
    relative discrepancy of the two ``u`` fields.
    """
    sol = navier_solver(coeffs, True).solve(f_star)
    if cross_check:
        alt = NavierSolver(adjoint_coefficients(coeffs), False).solve(f_star)
        nrm = np.linalg.norm(sol.u)
        sol.diagnostics["cross_check"] = float(np.linalg.norm(alt.u - sol.u) / nrm) if nrm else 0.0
    return sol


def neumann_trace(sol: Solution) -> NeumannTrace:
    return NeumannTrace(normal_trace(sol.v, sol.grid), sol.grid)


def navier_trace_of(v: np.ndarray, grid: GridSpec, m: int) -> NavierTrace:
    """``((-Lap_h)^j v)|_boundary`` for a full-grid field."""
    out = []
    w = v
    for _ in range(m):
        out.append(grid.restrict(w))
        w = -laplacian(w, grid)
    return NavierTrace(np.array(out), grid)


def smooth_random_trace(grid: GridSpec, m: int, seed: int = 0, waves: int = 4, scale: float = 1.5) -> NavierTrace:
    """Compatible random Navier data from a sum of plane waves.

    Slot ``j`` is ``sum_n c_n |k_n|^(2j) cos(k_n.x + phi_n)`` on the boundary,
    i.e. ``(-Lap)^j`` of one smooth field, so the data agree at cube edges.
    Wave vectors are ``scale`` times standard normal.
    """
    rng = np.random.default_rng(seed)
    k = scale * rng.standard_normal((waves, 3))
    phi = rng.uniform(0, 2 * np.pi, waves)
    c = rng.standard_normal(waves) + 1j * rng.standard_normal(waves)
    xb = grid.boundary_coords
    base = np.cos(k @ xb + phi[:, None])
    k2 = np.sum(k**2, axis=1)
    data = np.array([(c * k2**j) @ base for j in range(m)])
    return NavierTrace(data, grid)


def dtn_apply(coeffs: CoefficientSet, f: NavierTrace) -> NeumannTrace:
    return neumann_trace(solve_navier(coeffs, f))


def _chain(w: np.ndarray, grid: GridSpec, m: int) -> list:
    out = [w]
    for _ in range(m - 1):
        out.append(-laplacian(out[-1], grid))
    return out


def green_check(w: np.ndarray, v: np.ndarray, coeffs: CoefficientSet, eps: float = 1e-300) -> float:
    """Relative mismatch in the generalized Green formula.

    ``(L w, v) - (w, L* v)`` is compared with
    ``sum_j <(-Lap)^(m-1-j) w, d_nu (-Lap)^j v> - <d_nu (-Lap)^j w, (-Lap)^(m-1-j) v>``
    where ``L*`` uses the conjugate-transposed perturbation. The boundary
    terms of ``P`` are omitted, so coefficients must vanish near the
    boundary.
    """
    g = coeffs.grid
    m = coeffs.m
    lhs = quadrature(apply_operator(coeffs, w), v, g) - quadrature(w, apply_adjoint_operator(coeffs, v), g)
    cw, cv = _chain(w, g, m), _chain(v, g, m)
    nw = normal_trace(np.array(cw), g)
    nv = normal_trace(np.array(cv), g)
    rhs = 0.0
    for j in range(m):
        rhs += quadrature(g.restrict(cw[m - 1 - j]), nv[j], g, "boundary")
        rhs -= quadrature(nw[j], g.restrict(cv[m - 1 - j]), g, "boundary")
    return float(abs(lhs - rhs) / (abs(lhs) + abs(rhs) + eps))


def interior_fields(grid: GridSpec, margin: int, seed: int = 0, count: int = 2) -> list:
    """Seeded complex random fields that vanish within ``margin`` nodes of the boundary."""
    rng = np.random.default_rng(seed)
    inner = (slice(margin, grid.N - margin),) * 3
    out = []
    for _ in range(count):
        u = np.zeros(grid.shape, dtype=complex)
        sh = u[inner].shape
        u[inner] = rng.standard_normal(sh) + 1j * rng.standard_normal(sh)
        out.append(u)
    return out


def adjoint_mismatch(coeffs: CoefficientSet, w: np.ndarray, v: np.ndarray) -> float:
    """``|<L w, v> - <w, L* v>|`` relative to the two terms, in the plain ``l2`` product.

    Exact up to rounding when ``w`` and ``v`` vanish within ``2m`` nodes of
    the boundary, since ``L*`` is the conjugate-transposed stencil.
    """
    a = np.vdot(v, apply_operator(coeffs, w))
    b = np.vdot(apply_adjoint_operator(coeffs, v), w)
    return float(abs(a - b) / (abs(a) + abs(b)))


@dataclass(frozen=True)
class Noise:
    """Multiplicative Gaussian perturbation ``g <- g (1 + level Z)`` of measured Neumann data.

    ``Z`` is one fixed standard-normal draw per boundary node and Navier
    slot, so the perturbed map stays linear.
    """

    level: float
    seed: int = 0

    def factor(self, m: int, nb: int) -> np.ndarray:
        z = np.random.default_rng(self.seed).standard_normal((m, nb))
        return 1.0 + self.level * z


def boundary_modes(grid: GridSpec, per_axis: int = 5, weighted: bool = False) -> np.ndarray:
    """Orthonormal trigonometric boundary modes, ``per_axis^2`` per face.

    Mode ``(k, l)`` on a face is ``cos(k pi (s+L)/2L) cos(l pi (t+L)/2L)`` in
    the face's tangential coordinates. Columns are orthonormal in plain or
    quadrature-weighted l2.
    """
    xb = grid.boundary_coords
    face = grid.boundary_face
    L = grid.L
    cols = []
    for f in range(6):
        axis = f // 2
        tang = [a for a in range(3) if a != axis]
        on = face == f
        s = (xb[tang[0]] + L) / (2 * L)
        t = (xb[tang[1]] + L) / (2 * L)
        for k in range(per_axis):
            for l in range(per_axis):
                col = np.where(on, np.cos(k * np.pi * s) * np.cos(l * np.pi * t), 0.0)
                cols.append(col)
    Q = np.array(cols).T
    if weighted:
        sw = np.sqrt(grid.boundary_weights)
        Q, _ = np.linalg.qr(sw[:, None] * Q)
        return Q / sw[:, None]
    Q, _ = np.linalg.qr(Q)
    return Q


def dtn_matrix(
    coeffs1: CoefficientSet, coeffs2: CoefficientSet, modes: np.ndarray, noise: Noise | None = None
) -> np.ndarray:
    """``(Lambda_2 - Lambda_1)`` applied to each mode in each Navier slot.

    With ``noise`` the ``Lambda_2`` Neumann data is perturbed as in the
    estimators, so the result is the difference actually observed.

    Returns
    -------
    ndarray, shape (m*nb, m*k)
    """
    if not coeffs1.grid.same_as(coeffs2.grid):
        raise ValueError("coefficient sets live on different grids")
    g = coeffs1.grid
    m = coeffs1.m
    nb, k = modes.shape
    T = np.empty((m * nb, m * k), dtype=complex)
    s1, s2 = navier_solver(coeffs1), navier_solver(coeffs2)
    fac = noise.factor(m, nb) if noise is not None and noise.level > 0 else 1.0
    for j in range(m):
        for c in range(k):
            data = np.zeros((m, nb), dtype=complex)
            data[j] = modes[:, c]
            tr = NavierTrace(data, g)
            d = fac * normal_trace(s2.solve(tr).v, g) - normal_trace(s1.solve(tr).v, g)
            T[:, j * k + c] = d.ravel()
    return T


def dtn_norm(
    coeffs1: CoefficientSet,
    coeffs2: CoefficientSet,
    mode: str = "l2",
    per_axis: int = 5,
    seed: int = 0,
    rtol: float = 1e-3,
    maxiter: int = 500,
    noise: Noise | None = None,
) -> float:
    """Largest singular value of the DtN difference on trigonometric boundary modes.

    Power iteration on ``T^H T`` with ``T`` the difference operator
    restricted to the mode subspace. ``mode`` is ``"l2"`` (plain) or
    ``"weighted"`` (boundary quadrature weights on input and output).
    ``noise`` perturbs the ``Lambda_2`` data, which makes the value the
    data-misfit proxy of a stability sweep.
    """
    if mode not in ("l2", "weighted"):
        raise ValueError(f"unknown norm mode {mode!r}")
    if per_axis**2 * 6 > 200:
        raise ValueError("at most 200 modes per component")
    g = coeffs1.grid
    weighted = mode == "weighted"
    Q = boundary_modes(g, per_axis, weighted)
    T = dtn_matrix(coeffs1, coeffs2, Q, noise)
    if weighted:
        sw = np.tile(np.sqrt(g.boundary_weights), coeffs1.m)
        T = sw[:, None] * T
    rng = np.random.default_rng(seed)
    x = rng.normal(size=T.shape[1]) + 1j * rng.normal(size=T.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for it in range(maxiter):
        y = T.conj().T @ (T @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = float(np.sqrt(ny))
        x = y / ny
        if it > 0 and abs(new - est) <= rtol * new:
            return new
        est = new
    raise SolverError("power iteration stagnated", est)
