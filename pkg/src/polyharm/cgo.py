"""Ingredients of complex geometric optics (CGO) solutions.

A CGO solution has the form ``exp(x.p/h) (alpha1 + h alpha2 + r)`` where the
complex phase vector ``p`` satisfies ``p.p = 0``. Forward solutions use
``p = rho = omega + i omega_tilde``; adjoint solutions use ``p = -conj(rho)``.
Everything below is written in terms of this phase vector, so both roles
share the same formulas:

* transport: ``(p.grad)^m alpha1 = 0``
* second amplitude: ``(2 p.grad)^m alpha2 = -m Lap (2 p.grad)^(m-1) alpha1 - (-1)^m T``
  with ``T = -2 A p.grad alpha1 - i (B.p) alpha1`` for ``m = 2``,
  ``T = -(A p.p) alpha1`` for ``m = 3`` and ``T = 0`` otherwise.

The adjoint role takes the coefficients of the formal adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .fields import CoefficientSet
from .grid import SYM_INDEX, GridSpec, laplacian, partial, quadrature, second_partial

FORWARD_KINDS = ("exp", "lin_exp", "lin")
ADJOINT_KINDS = ("one", "neg_lin", "neg_half_quad", "exp_conj")
_EXP_KINDS = ("exp", "lin_exp", "exp_conj")
TRACE_LIMIT = 1e12


class DynamicRangeError(ValueError):
    """CGO boundary data would exceed the double-precision headroom."""


@dataclass(frozen=True)
class CgoDirection:
    """Isotropic direction ``rho = omega + i omega_tilde``.

    ``conj_flag`` marks a direction used for the adjoint ansatz
    ``exp(-x.conj(rho)/h)``; ``phase`` returns the vector in the exponent.
    """

    omega: np.ndarray
    omega_tilde: np.ndarray
    conj_flag: bool = False

    @property
    def rho(self) -> np.ndarray:
        return self.omega + 1j * self.omega_tilde

    @property
    def phase(self) -> np.ndarray:
        return -np.conj(self.rho) if self.conj_flag else self.rho

    def adjoint(self) -> "CgoDirection":
        return CgoDirection(self.omega, self.omega_tilde, True)

    def forward(self) -> "CgoDirection":
        return CgoDirection(self.omega, self.omega_tilde, False)


def make_direction(u, v, conj_flag: bool = False) -> CgoDirection:
    """Orthonormalize ``(u, v)`` by Gram-Schmidt, ``u`` first."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = np.linalg.norm(u)
    if nu == 0 or np.linalg.norm(v) == 0:
        raise ValueError("direction vectors must be nonzero")
    w = u / nu
    vt = v - (v @ w) * w
    nvt = np.linalg.norm(vt)
    if nvt <= 1e-12 * np.linalg.norm(v):
        raise ValueError("direction vectors are parallel")
    return CgoDirection(w, vt / nvt, conj_flag)


def frame_for_xi(xi) -> np.ndarray:
    """Right-handed orthonormal frame with last row ``xi/|xi|``.

    The first row comes from the canonical axis least aligned with ``xi``
    (lowest index on ties) and the second is ``w3 x w1``.
    """
    xi = np.asarray(xi, dtype=float)
    nx = np.linalg.norm(xi)
    if nx == 0:
        raise ValueError("frame undefined at zero frequency")
    w3 = xi / nx
    e = np.zeros(3)
    e[int(np.argmin(np.abs(w3)))] = 1.0
    w1 = e - (e @ w3) * w3
    w1 /= np.linalg.norm(w1)
    w2 = np.cross(w3, w1)
    return np.stack([w1, w2, w3])


def frame_directions(xi) -> tuple[CgoDirection, CgoDirection]:
    """Directions ``w1 + i w2`` and ``w1 - i w2`` from the frame of ``xi``."""
    F = frame_for_xi(xi)
    return CgoDirection(F[0], F[1]), CgoDirection(F[0], -F[1])


def amplitude(kind: str, xi, direction: CgoDirection, grid: GridSpec, role: str = "forward") -> np.ndarray:
    """Catalog amplitude solving the transport equation of its role.

    Forward kinds: ``exp`` = exp(-i x.xi), ``lin_exp`` = (x.omega) exp(-i x.xi),
    ``lin`` = x.omega. Adjoint kinds: ``one`` = 1, ``neg_lin`` = -x.omega,
    ``neg_half_quad`` = -(x.omega)^2/2, ``exp_conj`` = exp(i x.xi).
    """
    if role == "forward" and kind not in FORWARD_KINDS:
        raise ValueError(f"kind {kind!r} is not a forward amplitude")
    if role == "adjoint" and kind not in ADJOINT_KINDS:
        raise ValueError(f"kind {kind!r} is not an adjoint amplitude")
    if role not in ("forward", "adjoint"):
        raise ValueError(f"unknown role {role!r}")
    xi = np.zeros(3) if xi is None else np.asarray(xi, dtype=float)
    if kind in _EXP_KINDS:
        if abs(xi @ direction.omega) > 1e-10 or abs(xi @ direction.omega_tilde) > 1e-10:
            raise ValueError("xi must be orthogonal to omega and omega_tilde")
    x = grid.coords
    xw = np.einsum("a,aijk->ijk", direction.omega, x)
    xx = np.einsum("a,aijk->ijk", xi, x)
    table = {
        "exp": lambda: np.exp(-1j * xx),
        "lin_exp": lambda: xw * np.exp(-1j * xx),
        "lin": lambda: xw.astype(complex),
        "one": lambda: np.ones(grid.shape, dtype=complex),
        "neg_lin": lambda: -xw.astype(complex),
        "neg_half_quad": lambda: (-0.5 * xw**2).astype(complex),
        "exp_conj": lambda: np.exp(1j * xx),
    }
    return table[kind]()


def directional(u: np.ndarray, p: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``p.grad u`` for a complex vector ``p`` (central differences)."""
    return sum(p[a] * partial(u, a, grid) for a in range(3) if p[a] != 0)


def transport_apply(u: np.ndarray, p: np.ndarray, power: int, grid: GridSpec) -> np.ndarray:
    """``(2 p.grad)^power u`` with grid stencils."""
    for _ in range(power):
        u = 2.0 * directional(u, p, grid)
    return u


def _outer_window(grid: GridSpec, P: int, off: int) -> np.ndarray:
    """Smooth weight on the padded box, zero on and near the physical cube."""
    x = -grid.L - off * grid.dx + grid.dx * np.arange(P)
    L = grid.L
    t = (np.abs(x) - (L + 2 * grid.dx)) / (0.5 * L)
    t = np.clip(t, 0.0, 1.0)
    # C-infinity step from 0 to 1 on t in [0, 1]
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    step = a / (a + b)
    inner = 1.0 - step
    return 1.0 - inner[:, None, None] * inner[None, :, None] * inner[None, None, :]


@dataclass
class TransportResult:
    alpha: np.ndarray
    residual: float
    singular_modes: int


def transport_inverse(
    f: np.ndarray,
    direction: CgoDirection,
    power: int,
    grid: GridSpec,
    delta_rel: float = 1e-6,
    singular_rel: float = 1e-2,
) -> TransportResult:
    """Right inverse of ``(2 p.grad)^power`` on the cube.

    ``f`` is embedded in a 2x zero-padded periodic box and divided by the
    symbol ``s^power``, ``s = 2i p.zeta``, with each factor regularized as
    ``conj(s)/(|s|^2 + delta^2)``, ``delta = delta_rel * max|s|``. Lattice
    modes where ``|s| <= singular_rel * max|s|`` would be amplified without
    bound (``s`` vanishes on lattice vectors normal to the direction plane and
    nearly vanishes close to them); before inverting, a correction supported
    outside the cube cancels the content of ``f`` on those modes, so the
    equation still holds inside the cube.

    Returns
    -------
    TransportResult
        ``alpha`` on the grid, the relative forward residual on the cube
        and the number of compensated modes.
    """
    p = direction.phase
    N = grid.N
    P = 2 * (N - 1)
    off = (N - 1) // 2
    win = slice(off, off + N)
    f = np.asarray(f, dtype=complex)
    if not np.any(f):
        return TransportResult(np.zeros(grid.shape, dtype=complex), 0.0, 0)
    pad = np.zeros((P, P, P), dtype=complex)
    pad[win, win, win] = f
    fh = np.fft.fftn(pad)
    k = 2 * np.pi * np.fft.fftfreq(P, d=grid.dx)
    s = 2j * (p[0] * k[:, None, None] + p[1] * k[None, :, None] + p[2] * k[None, None, :])
    smax = np.abs(s).max()
    sing = np.abs(s) <= singular_rel * smax
    nsing = int(sing.sum())
    if nsing:
        idx = np.argwhere(sing)
        chi_h = np.fft.fftn(_outer_window(grid, P, off))
        diff = (idx[:, None, :] - idx[None, :, :]) % P
        M = chi_h[diff[..., 0], diff[..., 1], diff[..., 2]]
        c = np.linalg.solve(M, -fh[sing])
        # correction chi(x) * sum_k c_k exp(i zeta_k x) in Fourier space
        corr = np.zeros((P, P, P), dtype=complex)
        corr[tuple(idx.T)] = c * P**3
        corr_x = np.fft.ifftn(corr) * _outer_window(grid, P, off)
        fh = fh + np.fft.fftn(corr_x)
    delta = delta_rel * smax
    mult = (np.conj(s) / (np.abs(s) ** 2 + delta**2)) ** power
    ah = fh * mult
    alpha = np.fft.ifftn(ah)[win, win, win]
    back = np.fft.ifftn(ah * s**power)[win, win, win]
    nf = np.linalg.norm(f)
    res = float(np.linalg.norm(back - f) / nf)
    return TransportResult(np.ascontiguousarray(alpha), res, nsing)


# lowest power of (2 p.grad) that annihilates each catalog amplitude
TRANSPORT_POWER = {"exp": 1, "lin_exp": 2, "lin": 2, "one": 1, "neg_lin": 2, "neg_half_quad": 3, "exp_conj": 1}


def catalog_residuals(xi, direction: CgoDirection, grid: GridSpec) -> dict:
    """Discrete transport residual of every catalog amplitude.

    Forward kinds are tested against ``p = omega + i omega~`` and adjoint
    kinds against ``conj(p)``, each at the power in ``TRANSPORT_POWER``.
    The value is ``max |(2 p.grad)^k alpha|`` over nodes ``k`` or more
    inside the boundary (where the composed stencil is purely central)
    divided by ``max |alpha|``; it vanishes for polynomials and is
    ``O(dx^2)`` for the oscillatory kinds.
    """
    out = {}
    for role, kinds in (("forward", FORWARD_KINDS), ("adjoint", ADJOINT_KINDS)):
        p = direction.phase if role == "forward" else np.conj(direction.phase)
        for kind in kinds:
            a = amplitude(kind, xi, direction, grid, role)
            k = TRANSPORT_POWER[kind]
            r = transport_apply(a, p, k, grid)[(slice(k, grid.N - k),) * 3]
            out[kind] = float(np.max(np.abs(r)) / np.max(np.abs(a)))
    return out


def _contract(T: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``sum_jk T_jk p_j q_k`` for a symmetric tensor field in storage form."""
    Tf = T[SYM_INDEX]
    return np.einsum("jkxyz,j,k->xyz", Tf, p, q)


def _tensor_dir_grad(A: np.ndarray, p: np.ndarray, u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``sum_jk A_jk p_j d_k u``."""
    Af = A[SYM_INDEX]
    Ap = np.einsum("jkxyz,j->kxyz", Af, p)
    return sum(Ap[k] * partial(u, k, grid) for k in range(3))


def _transport_source(alpha1, coeffs: CoefficientSet, p, m, grid):
    """Lower-order source ``T`` of the second-amplitude equation."""
    if m == 2:
        Bp = np.einsum("jxyz,j->xyz", coeffs.B, p)
        return -2.0 * _tensor_dir_grad(coeffs.A, p, alpha1, grid) - 1j * Bp * alpha1
    if m == 3:
        return -_contract(coeffs.A, p, p) * alpha1
    return np.zeros(grid.shape, dtype=complex)


def second_amplitude_rhs(alpha1, coeffs: CoefficientSet, direction: CgoDirection) -> np.ndarray:
    grid = coeffs.grid
    m = coeffs.m
    p = direction.phase
    lead = -m * laplacian(transport_apply(alpha1, p, m - 1, grid), grid)
    return lead - (-1) ** m * _transport_source(alpha1, coeffs, p, m, grid)


def second_amplitude(alpha1, coeffs: CoefficientSet, direction: CgoDirection) -> TransportResult:
    """Second CGO amplitude for the direction's role.

    For an adjoint direction pass the formal-adjoint coefficients of the
    operator the adjoint solution belongs to.
    """
    rhs = second_amplitude_rhs(alpha1, coeffs, direction)
    return transport_inverse(rhs, direction, coeffs.m, coeffs.grid)


@dataclass(frozen=True, eq=False)
class AmplitudePair:
    """Amplitudes of a forward CGO solution and its adjoint partner."""

    alpha1: np.ndarray
    alpha2: np.ndarray
    alpha1_star: np.ndarray
    alpha2_star: np.ndarray
    direction: CgoDirection
    kind: tuple = ("", "")
    xi: np.ndarray | None = None
    m: int = 3


def perturbation_conjugated(w, coeffs: CoefficientSet, p, h) -> np.ndarray:
    """``exp(-x.p/h) P (exp(x.p/h) w)`` for the lower-order part ``P``.

    ``P = A D.D + B.D + q`` with ``D = -i grad`` expands to
    ``-h^-2 (A p.p) w - 2 h^-1 A p.grad w - A:grad grad w - i h^-1 (B.p) w - i B.grad w + q w``.
    """
    grid = coeffs.grid
    A, B = coeffs.A, coeffs.B
    Af = A[SYM_INDEX]
    out = coeffs.q * w
    if np.any(A):
        hess = sum(Af[j, k] * second_partial(w, j, k, grid) for j in range(3) for k in range(3))
        out = out - _contract(A, p, p) * w / h**2 - 2.0 * _tensor_dir_grad(A, p, w, grid) / h - hess
    if np.any(B):
        Bp = np.einsum("jxyz,j->xyz", B, p)
        Bgrad = sum(B[k] * partial(w, k, grid) for k in range(3))
        out = out - 1j * Bp * w / h - 1j * Bgrad
    return out


def conjugated_residual(alpha1, alpha2, coeffs: CoefficientSet, direction: CgoDirection, h: float) -> np.ndarray:
    """``h^2m exp(-x.p/h) L (exp(x.p/h) (alpha1 + h alpha2))`` via the binomial expansion.

    ``exp(-x.p/h) h^2 (-Lap) exp(x.p/h) = -h^2 Lap - 2h p.grad`` because
    ``p.p = 0``; its ``m``-th power is expanded binomially, so the exponential
    is never formed.
    """
    grid = coeffs.grid
    m = coeffs.m
    p = direction.phase
    w = alpha1 + h * alpha2
    total = np.zeros(grid.shape, dtype=complex)
    for k in range(m + 1):
        t = w
        for _ in range(k):
            t = -2.0 * h * directional(t, p, grid)
        for _ in range(m - k):
            t = -(h**2) * laplacian(t, grid)
        total += comb(m, k) * t
    if not coeffs.is_zero():
        total += h ** (2 * m) * perturbation_conjugated(w, coeffs, p, h)
    return total


def residual_order(
    coeffs: CoefficientSet,
    direction: CgoDirection,
    alpha1: np.ndarray,
    alpha2: np.ndarray,
    h_list,
    margin: int = 2,
) -> tuple[float, np.ndarray]:
    """Least-squares slope of ``log |g_h|`` against ``log h``.

    Norms are trapezoidal L2 over nodes at least ``margin`` nodes inside the
    boundary, away from the one-sided stencils.

    Returns
    -------
    slope : float
    norms : ndarray
    """
    h = np.asarray(h_list, dtype=float)
    if h.size < 4:
        raise ValueError("residual_order needs at least four h values")
    grid = coeffs.grid
    sl = (slice(margin, grid.N - margin),) * 3
    w = grid.volume_weights[sl]
    norms = []
    for hv in h:
        g = conjugated_residual(alpha1, alpha2, coeffs, direction, hv)[sl]
        norms.append(np.sqrt(np.sum(w * np.abs(g) ** 2)))
    norms = np.asarray(norms)
    if np.all(norms < 1e-13):
        raise ValueError("degenerate fit: all residuals below 1e-13")
    slope = np.polyfit(np.log(h), np.log(norms), 1)[0]
    return float(slope), norms


def ghost_grid(grid: GridSpec, layers: int) -> GridSpec:
    """Grid with ``layers`` extra nodes on every side and the same spacing."""
    return GridSpec(grid.N + 2 * layers, grid.L + layers * grid.dx)


def embed_coefficients(coeffs: CoefficientSet, ext: GridSpec) -> CoefficientSet:
    """Zero-extend coefficients onto a ghost grid."""
    k = (ext.N - coeffs.grid.N) // 2
    if k < 0 or ext.N != coeffs.grid.N + 2 * k:
        raise ValueError("target grid must enclose the coefficient grid symmetrically")
    if k == 0:
        return coeffs
    pad = [(0, 0), (k, k), (k, k), (k, k)]
    return CoefficientSet(
        ext,
        np.pad(coeffs.A, pad),
        np.pad(coeffs.B, pad),
        np.pad(coeffs.q, pad[1:]),
        coeffs.m,
        coeffs.support_radius,
        coeffs.isotropic,
    )


def crop(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Restrict a ghost-grid field to the nodes of ``grid``."""
    k = (u.shape[-1] - grid.N) // 2
    return u if k == 0 else u[..., k : k + grid.N, k : k + grid.N, k : k + grid.N]


def probe_phases(direction: CgoDirection, xi, h: float, dx: float = 0.0, forward_carries: bool = True, maxiter: int = 50):
    """Isotropic phases of a forward/adjoint CGO pair whose product is ``exp(-i x.xi)``.

    The frequency is moved into the exponents: with
    ``p = omega + i b omega_tilde + i c xi/|xi|`` the forward solution is
    ``exp(x.pf/h)`` times a polynomial amplitude and the adjoint one
    ``exp(x.pa/h)`` times another, where ``pf = p - i h xi`` and
    ``pa = -conj(p)`` if the forward side carries the frequency, or
    ``pf = p`` and ``pa = -conj(p) + i h xi`` otherwise. Then
    ``pf + conj(pa) = -i h xi`` for any ``b, c``.

    ``b, c`` make both exponentials harmonic: ``pf.pf = pa.pa = 0`` for
    ``dx = 0`` (``c = +-h|xi|/2``, ``b = sqrt(1 - c^2)``), and
    ``sum_a cosh(p_a dx/h) = 3`` for the 7-point Laplacian otherwise, solved by
    Newton from the continuum values. Both phases tend to ``rho`` and
    ``-conj(rho)`` as ``h -> 0``.

    Returns
    -------
    pf, pa : ndarray of complex, shape (3,)
    """
    w, wt = direction.omega, direction.omega_tilde
    xi = np.zeros(3) if xi is None else np.asarray(xi, dtype=float)
    k = float(np.linalg.norm(xi))
    if k * h >= 2.0:
        raise ValueError(f"h |xi| = {h * k:.3g} must stay below 2")
    n = xi / k if k > 0 else np.zeros(3)
    sgn = 1.0 if forward_carries else -1.0
    shift_f = -1j * h * xi if forward_carries else 0.0 * xi
    shift_a = 0.0 * xi if forward_carries else 1j * h * xi

    def vec(v):
        return w + 1j * v[0] * wt + 1j * v[1] * n

    if dx == 0.0:
        c = sgn * h * k / 2.0
        v = np.array([np.sqrt(1.0 - c * c), c], dtype=complex)
    else:
        t = dx / h
        v = np.array([np.sqrt(1.0 - (h * k / 2.0) ** 2), sgn * h * k / 2.0], dtype=complex)

        # conj(pa) = -(p + shift_a) and cosh is even, so both conditions are analytic in b, c
        def res(v):
            p = vec(v)
            return np.array([np.sum(np.cosh(t * (p + shift_f))) - 3.0, np.sum(np.cosh(t * (p + shift_a))) - 3.0])

        for _ in range(maxiter):
            r = res(v)
            if np.max(np.abs(r)) < 1e-14:
                break
            p = vec(v)
            J = np.empty((2, 2), dtype=complex)
            for i, shift in enumerate((shift_f, shift_a)):
                sh = np.sinh(t * (p + shift)) * 1j * t
                J[i] = [np.sum(sh * wt), np.sum(sh * n)]
            if k == 0:
                v[0] -= r[0] / J[0, 0]
            else:
                v = v - np.linalg.solve(J, r)
        if not np.all(np.isfinite(v)) or np.max(np.abs(res(v))) > 1e-12:
            raise ValueError(f"no discrete harmonic phase pair for dx/h = {t:.3g}, h|xi| = {h * k:.3g}")
    p = vec(v)
    return p + shift_f, -np.conj(p) + shift_a


def _shifted_laplacian(W: np.ndarray, p: np.ndarray, h: float, dx: float) -> np.ndarray:
    """``exp(-x.p/h) Lap_h (exp(x.p/h) W)`` on the nodes one layer in from the edge of ``W``."""
    c = W[1:-1, 1:-1, 1:-1]
    out = -6.0 * c
    for a in range(3):
        e = np.exp(p[a] * dx / h)
        hi = [slice(1, -1)] * 3
        lo = [slice(1, -1)] * 3
        hi[a] = slice(2, None)
        lo[a] = slice(None, -2)
        out = out + e * W[tuple(hi)] + W[tuple(lo)] / e
    return out / dx**2


def boundary_traces(
    alpha1: np.ndarray,
    alpha2: np.ndarray,
    direction: CgoDirection,
    h: float,
    m: int,
    grid: GridSpec,
    phase: np.ndarray | None = None,
) -> np.ndarray:
    """Navier data ``((-Lap)^j u)|_boundary``, ``j < m``, of ``u = exp(x.p/h) (alpha1 + h alpha2)``.

    On the plain grid this uses ``Lap(exp(x.p/h) w) = exp(x.p/h) (Lap w + (2/h) p.grad w)``
    with one-sided derivatives on boundary nodes. When the amplitudes are
    given on a ghost grid with at least ``m - 1`` extra layers, the 7-point
    Laplacian is applied exactly through the shifted stencil instead, so the
    data are those of a discrete field. ``phase`` overrides ``direction.phase``
    in the exponent (see ``probe_phases``).

    Returns
    -------
    ndarray, shape (m, nb)
    """
    p = direction.phase if phase is None else np.asarray(phase)
    xb = grid.boundary_coords
    expo = np.exp(np.einsum("a,ab->b", p, xb) / h)
    peak = float(np.max(np.abs(expo)))
    if not np.isfinite(peak) or peak > TRACE_LIMIT:
        raise DynamicRangeError(f"CGO trace magnitude {peak:.3g} exceeds {TRACE_LIMIT:.0e}; increase h")
    W = alpha1 + h * alpha2
    layers = (W.shape[-1] - grid.N) // 2
    if layers and layers < m - 1:
        raise ValueError(f"ghost grid needs at least {m - 1} layers, got {layers}")
    out = np.empty((m, xb.shape[1]), dtype=complex)
    for j in range(m):
        out[j] = expo * grid.restrict(crop(W, grid))
        if j + 1 < m:
            if layers:
                W = -_shifted_laplacian(W, p, h, grid.dx)
            else:
                W = -(laplacian(W, grid) + (2.0 / h) * directional(W, p, grid))
    return out


def cgo_field(alpha1, alpha2, direction: CgoDirection, h: float, grid: GridSpec) -> np.ndarray:
    """Full-grid ``exp(x.p/h) (alpha1 + h alpha2)``."""
    expo = np.exp(np.einsum("a,aijk->ijk", direction.phase, grid.coords) / h)
    return expo * (alpha1 + h * alpha2)


def l2norm(u, grid: GridSpec) -> float:
    return float(np.sqrt(max(quadrature(u, u, grid).real, 0.0)))
