"""Boundary pairing, CGO Fourier estimators, low-pass inversion and stability fits.

Every estimator pairs a forward CGO trace ``f`` (operator 2) with an adjoint
CGO trace ``f*`` (operator 1) through the DtN difference. In the limit the
phases are ``x.rho/h`` and ``-x.conj(rho)/h`` and, writing
``w = alpha1 + h alpha2`` and ``w* = alpha1* + h alpha2*``, the pairing equals

    I = int exp(-x.rho/h) dP (exp(x.rho/h) w) conj(w*) dx,

where ``dP`` is the lower-order part for the coefficient difference. With
``D = -i grad`` the conjugated operator is

    -h^-2 (A rho.rho) - 2 h^-1 A rho.grad - A:grad grad - i h^-1 (B.rho) - i B.grad + q,

and each estimator isolates one Fourier quantity from the leading power of
``h``:

========================  =================  =================  ========================
quantity                  alpha1             alpha1*            estimate
========================  =================  =================  ========================
(A rho.rho)^(xi)          exp(-i x.xi)       1                  -h^2 I
rho.V^(xi)                (x.w) exp(-ix.xi)  1                  h^2 I
phi_V^(xi)                exp(-i x.xi)       -(x.w)^2/2         h^2 I + correction
rho.B^(xi)                exp(-i x.xi)       1                  i h I
phi_B^(xi)                exp(-i x.xi)       -(x.w)             i h I + correction
theta_A^(xi)              x.w                exp(i x.xi)        -h I / 2
a^(xi)  (m = 2)           (x.w) exp(-ix.xi)  1                  -h I / 2
q^(xi)                    exp(-i x.xi)       1                  I
========================  =================  =================  ========================

The V row follows from ``(sym grad V) rho.rho = rho.grad(rho.V)`` and one
integration by parts (``V = 0`` on the boundary). The radial runs measure
``-i d_w (rho.X^)(xi)`` for ``X = V`` or ``B``; splitting
``X^ = X_sol^ + i xi phi^`` over the whole space turns this into
``phi^(xi) - i d_w (rho.X_sol^)(xi)``, and the second term is computed from
tangential runs at ``xi +- step w`` so that ``xi.X^ = i |xi|^2 phi^``.
Contributions of already reconstructed fields are removed by subtracting
their conjugated integral from ``I``.

Numerically the factor ``exp(-+i x.xi)`` is folded into the exponents (see
``cgo.probe_phases``): both CGO exponentials are then annihilated by the
grid Laplacian, the amplitudes are polynomials, and the product of the two
solutions is still ``exp(-i x.xi)`` times the polynomial amplitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import cgo
from .cgo import CgoDirection
from .fields import CoefficientSet, adjoint_coefficients
from .forward import NavierTrace, Noise, navier_solver, perturbation_apply, solve_adjoint, solve_navier
from .grid import GridSpec, normal_trace, quadrature

SAMPLE_KINDS = (
    "A_quadratic",
    "A_prime_matrix",
    "rhoV",
    "thetaV",
    "rhoB",
    "thetaB",
    "thetaA",
    "q_hat",
    "a_iso",
    "V_hat",
    "B_hat",
)


# --------------------------------------------------------------------------
# pairing


def dtn_difference(coeffs1: CoefficientSet, coeffs2: CoefficientSet, f: NavierTrace, noise: Noise | None = None):
    """``(Lambda_2 - Lambda_1) f``, with optional noise on the ``Lambda_2`` measurement."""
    g2 = normal_trace(navier_solver(coeffs2).solve(f).v, f.grid)
    if noise is not None and noise.level > 0:
        g2 = g2 * noise.factor(*g2.shape)
    if coeffs1.is_zero() and coeffs2.is_zero():
        return np.zeros_like(g2)
    g1 = normal_trace(navier_solver(coeffs1).solve(f).v, f.grid)
    return g2 - g1


def pairing(
    coeffs1: CoefficientSet,
    coeffs2: CoefficientSet,
    f: NavierTrace,
    f_star: NavierTrace,
    noise: Noise | None = None,
) -> complex:
    """``sum_j <((Lambda_2 - Lambda_1) f)_j, f*_{m-1-j}>`` over the boundary."""
    m = coeffs2.m
    d = dtn_difference(coeffs1, coeffs2, f, noise)
    g = f.grid
    return complex(sum(quadrature(d[j], f_star.data[m - 1 - j], g, "boundary") for j in range(m)))


def volume_lhs(coeffs1: CoefficientSet, coeffs2: CoefficientSet, f: NavierTrace, f_star: NavierTrace, with_scale=False):
    """``int (P_2 - P_1) u conj(u*)`` with ``u`` solved for operator 2 and ``u*`` adjoint-solved for operator 1.

    With ``with_scale`` also returns ``int |(P_2 - P_1) u| |u*|``, a size
    for the integral that does not suffer from cancellation.
    """
    u = solve_navier(coeffs2, f).u
    us = solve_adjoint(coeffs1, f_star).u
    t = perturbation_apply(coeffs2 - coeffs1, u)
    val = complex(quadrature(t, us, f.grid))
    if with_scale:
        return val, float(quadrature(np.abs(t), np.abs(us), f.grid).real)
    return val


def master_identity(coeffs1, coeffs2, f, f_star) -> dict:
    """Both sides of the pairing identity and their discrepancy relative to the integrand size."""
    p = pairing(coeffs1, coeffs2, f, f_star)
    v, scale = volume_lhs(coeffs1, coeffs2, f, f_star, with_scale=True)
    return {"pairing": p, "volume": v, "scale": scale, "discrepancy": abs(p - v) / scale if scale else abs(p - v)}


# --------------------------------------------------------------------------
# CGO pairs


@dataclass(frozen=True, eq=False)
class CgoProbe:
    """Boundary data and amplitudes of one forward/adjoint CGO pair.

    The forward solution is ``exp(x.phase/h) w`` and the adjoint one
    ``exp(x.phase_star/h) w_star``; their product carries ``exp(-i x.xi)``.
    """

    f: NavierTrace
    f_star: NavierTrace
    w: np.ndarray
    w_star: np.ndarray
    phase: np.ndarray
    phase_star: np.ndarray
    xi: np.ndarray
    h: float
    transport_residual: float


def cgo_probe(
    xi,
    direction: CgoDirection,
    h: float,
    kind: str,
    kind_star: str,
    coeffs1: CoefficientSet,
    coeffs2: CoefficientSet,
) -> CgoProbe:
    """Forward CGO for operator 2 and adjoint CGO for operator 1 with the given amplitudes.

    The factor ``exp(-+i x.xi)`` of an exponential amplitude is folded into
    the phase (``cgo.probe_phases``), so both solutions are polynomial
    amplitudes times exponentials that the 7-point Laplacian annihilates.
    The amplitudes live on a ghost grid deep enough for the Navier traces to
    be taken with exact shifted stencils.
    """
    g = coeffs2.grid
    m = coeffs2.m
    xi = np.zeros(3) if xi is None else np.asarray(xi, dtype=float)
    fwd = direction.forward()
    adj = direction.adjoint()
    # validates kinds and orthogonality
    cgo.amplitude(kind, xi, fwd, g, "forward")
    cgo.amplitude(kind_star, xi, adj, g, "adjoint")
    forward_carries = kind in cgo.FORWARD_KINDS and kind != "lin"
    if forward_carries == (kind_star == "exp_conj"):
        raise ValueError("exactly one amplitude of the pair must carry the frequency")
    pf, pa = cgo.probe_phases(direction, xi, h, g.dx, forward_carries)
    ext = cgo.ghost_grid(g, m - 1)
    a1 = cgo.amplitude(kind, None, fwd, ext, "forward")
    a1s = cgo.amplitude(kind_star, None, adj, ext, "adjoint")
    # alpha2 enters at order h, so its transport uses the limit phases
    # rho and -conj(rho), whose lattice zeros are exact
    r2 = cgo.second_amplitude(a1, cgo.embed_coefficients(coeffs2, ext), fwd)
    r2s = cgo.second_amplitude(a1s, cgo.embed_coefficients(adjoint_coefficients(coeffs1), ext), adj)
    f = NavierTrace(cgo.boundary_traces(a1, r2.alpha, fwd, h, m, g, phase=pf), g)
    fs = NavierTrace(cgo.boundary_traces(a1s, r2s.alpha, adj, h, m, g, phase=pa), g)
    w = cgo.crop(a1 + h * r2.alpha, g)
    w_star = cgo.crop(a1s + h * r2s.alpha, g)
    return CgoProbe(f, fs, w, w_star, pf, pa, xi, h, max(r2.residual, r2s.residual))


def known_correction(probe: CgoProbe, known: CoefficientSet | None) -> complex:
    """Conjugated-identity integral of already reconstructed coefficients."""
    if known is None or known.is_zero():
        return 0.0
    g = known.grid
    t = cgo.perturbation_conjugated(probe.w, known, probe.phase, probe.h)
    carrier = np.exp(-1j * np.einsum("a,aijk->ijk", probe.xi, g.coords))
    return complex(quadrature(t * carrier, probe.w_star, g))


def _pair_value(xi, direction, h, kind, kind_star, coeffs1, coeffs2, known, noise):
    probe = cgo_probe(xi, direction, h, kind, kind_star, coeffs1, coeffs2)
    val = pairing(coeffs1, coeffs2, probe.f, probe.f_star, noise)
    corr = known_correction(probe, known)
    return val - corr, {"correction": abs(corr), "transport_residual": probe.transport_residual}


def _require_m(coeffs, op, cond, msg):
    if not cond(coeffs.m):
        raise ValueError(f"{op}: {msg}")


def _check_perp(xi, direction):
    xi = np.asarray(xi, dtype=float)
    if abs(xi @ direction.omega) > 1e-10 or abs(xi @ direction.omega_tilde) > 1e-10:
        raise ValueError("xi must be orthogonal to span(omega, omega_tilde)")


def _frame(xi):
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) == 0:
        raise ValueError("frame undefined at zero frequency")
    return cgo.frame_for_xi(xi)


def _any_frame(xi) -> np.ndarray:
    """Frame for ``xi``, or the canonical one at ``xi = 0``."""
    xi = np.asarray(xi, dtype=float)
    return np.eye(3) if np.linalg.norm(xi) == 0 else cgo.frame_for_xi(xi)


# --------------------------------------------------------------------------
# estimators


def estimate_A_quadratic(xi, direction, h, coeffs1, coeffs2, known=None, noise=None, info=None) -> complex:
    """``(A rho.rho)^(xi)`` as ``-h^2 I``; needs ``m > 2`` and ``xi`` orthogonal to the direction plane."""
    _require_m(coeffs2, "estimate_A_quadratic", lambda m: m > 2, "needs m > 2")
    _check_perp(xi, direction)
    val, d = _pair_value(xi, direction, h, "exp", "one", coeffs1, coeffs2, known, noise)
    if info is not None:
        info.update(d)
    return -(h**2) * val


def frame_algebra(m_plus: complex, m_minus: complex, frame: np.ndarray) -> np.ndarray:
    """Trace-free tensor annihilating ``w3`` from its two isotropic contractions.

    In frame coordinates ``l12 = (m+ - m-)/(4i)``, ``l11 = (m+ + m-)/4``,
    ``l22 = -l11`` and the ``w3`` row and column vanish. Returns
    ``frame.T @ M @ frame``.
    """
    l11 = (m_plus + m_minus) / 4.0
    l12 = (m_plus - m_minus) / 4j
    M = np.zeros((3, 3), dtype=complex)
    M[0, 0], M[1, 1] = l11, -l11
    M[0, 1] = M[1, 0] = l12
    return frame.T @ M @ frame


def estimate_A_prime(xi, h, coeffs1, coeffs2, known=None, noise=None, info=None) -> np.ndarray:
    """``A'^(xi)`` from the two contractions with ``w1 +- i w2`` of the frame of ``xi``."""
    F = _frame(xi)
    dp, dm = CgoDirection(F[0], F[1]), CgoDirection(F[0], -F[1])
    mp = estimate_A_quadratic(xi, dp, h, coeffs1, coeffs2, known, noise, info)
    mm = estimate_A_quadratic(xi, dm, h, coeffs1, coeffs2, known, noise, info)
    return frame_algebra(mp, mm, F)


POTENTIAL_STEP = 0.25


def _tangential(values_pm, F):
    """Frame components ``w1.X``, ``w2.X`` from ``(w1 + i w2).X`` and ``(w1 - i w2).X``."""
    p, q = values_pm
    return (p + q) / 2.0, (p - q) / 2j


def _assemble_vector(c1, c2, radial, F):
    """``w1 c1 + w2 c2 + w3 radial``."""
    return F[0] * c1 + F[1] * c2 + F[2] * radial


def _pm_directions(F):
    return CgoDirection(F[0], F[1]), CgoDirection(F[0], -F[1])


def _solenoidal_hat(tangential_pm, zeta) -> np.ndarray:
    """Solenoidal part ``X^ - zeta (zeta.X^)/|zeta|^2`` at ``zeta`` from the two tangential runs there."""
    F = cgo.frame_for_xi(zeta)
    c1, c2 = _tangential(tangential_pm(zeta, F), F)
    return _assemble_vector(c1, c2, 0.0, F)


def _potential_correction(xi, tangential_pm, step: float) -> complex:
    """``i d/dt [rho.X_sol^(xi + t w1)]`` at ``t = 0`` by central differences, ``rho = w1 + i w2``.

    The radial runs measure ``phi^(xi) - i d_w1 (rho.X_sol^)(xi)`` where
    ``X = X_sol + grad phi`` is the whole-space Helmholtz split; adding this
    term leaves the potential ``phi^`` with ``xi.X^ = i |xi|^2 phi^``.
    """
    F = cgo.frame_for_xi(xi)
    rho = F[0] + 1j * F[1]
    vals = [rho @ _solenoidal_hat(tangential_pm, np.asarray(xi) + s * step * F[0]) for s in (1.0, -1.0)]
    return 1j * (vals[0] - vals[1]) / (2.0 * step)


def _rhoV_pair(xi, F, h, coeffs1, coeffs2, known, noise):
    return [h**2 * _pair_value(xi, d, h, "lin_exp", "one", coeffs1, coeffs2, known, noise)[0] for d in _pm_directions(F)]


def _rhoB_pair(xi, F, h, coeffs1, coeffs2, known, noise):
    return [1j * h * _pair_value(xi, d, h, "exp", "one", coeffs1, coeffs2, known, noise)[0] for d in _pm_directions(F)]


def estimate_thetaV(xi, h, coeffs1, coeffs2, known=None, noise=None, step=POTENTIAL_STEP, info=None) -> complex:
    """Potential ``phi_V^(xi)`` of ``V = V_sol + grad phi_V`` from the quadratic-adjoint run.

    ``h^2 I`` with ``alpha1 = exp(-i x.xi)``, ``alpha1* = -(x.w1)^2/2`` plus the
    solenoidal correction of ``_potential_correction``; ``step = 0`` skips it.
    """
    _require_m(coeffs2, "estimate_thetaV", lambda m: m > 2, "needs m > 2")
    F = _frame(xi)
    raw = h**2 * _pair_value(xi, _pm_directions(F)[0], h, "exp", "neg_half_quad", coeffs1, coeffs2, known, noise)[0]
    corr = 0.0
    if step:
        corr = _potential_correction(xi, lambda z, Fz: _rhoV_pair(z, Fz, h, coeffs1, coeffs2, known, noise), step)
    if info is not None:
        info.update(thetaV_raw=raw, thetaV_correction=corr)
    return raw + corr


def estimate_V(xi, h, coeffs1, coeffs2, known=None, noise=None, info=None, step=POTENTIAL_STEP) -> np.ndarray:
    """``V^(xi)``: tangential parts from ``(x.w1) exp(-i x.xi)``, radial part ``i |xi| phi_V^``.

    ``info`` receives the frame components ``rhoV_plus``, ``rhoV_minus`` and
    ``thetaV``.
    """
    _require_m(coeffs2, "estimate_V", lambda m: m > 2, "needs m > 2")
    F = _frame(xi)
    pm = _rhoV_pair(xi, F, h, coeffs1, coeffs2, known, noise)
    th = estimate_thetaV(xi, h, coeffs1, coeffs2, known, noise, step)
    if info is not None:
        info.update(rhoV_plus=pm[0], rhoV_minus=pm[1], thetaV=th)
    c1, c2 = _tangential(pm, F)
    return _assemble_vector(c1, c2, 1j * np.linalg.norm(xi) * th, F)


def estimate_thetaB(xi, h, coeffs1, coeffs2, known=None, noise=None, step=POTENTIAL_STEP, info=None) -> complex:
    """Potential ``phi_B^(xi)`` of ``B = B_sol + grad phi_B``: ``i h I`` with ``alpha1* = -(x.w1)`` plus the solenoidal correction."""
    F = _frame(xi)
    raw = 1j * h * _pair_value(xi, _pm_directions(F)[0], h, "exp", "neg_lin", coeffs1, coeffs2, known, noise)[0]
    corr = 0.0
    if step:
        corr = _potential_correction(xi, lambda z, Fz: _rhoB_pair(z, Fz, h, coeffs1, coeffs2, known, noise), step)
    if info is not None:
        info.update(thetaB_raw=raw, thetaB_correction=corr)
    return raw + corr


def estimate_B(xi, h, coeffs1, coeffs2, known=None, noise=None, info=None, step=POTENTIAL_STEP) -> np.ndarray:
    """``B^(xi)``: tangential parts ``i h I`` with ``alpha1* = 1``, radial ``i |xi| phi_B^``.

    ``known`` holds reconstructed ``A`` (or zero) so its integrals are removed.
    """
    F = _frame(xi)
    pm = _rhoB_pair(xi, F, h, coeffs1, coeffs2, known, noise)
    th = estimate_thetaB(xi, h, coeffs1, coeffs2, known, noise, step)
    if info is not None:
        info.update(rhoB_plus=pm[0], rhoB_minus=pm[1], thetaB=th)
    c1, c2 = _tangential(pm, F)
    return _assemble_vector(c1, c2, 1j * np.linalg.norm(xi) * th, F)


def estimate_vector_origin(kind: str, h, coeffs1, coeffs2, known=None, noise=None) -> np.ndarray:
    """``V^(0)`` (``kind="V"``) or ``B^(0)`` (``kind="B"``), where the frame of ``xi`` is undefined.

    At ``xi = 0`` every direction is tangential, so the tangential runs in
    the frames ``(e1, e2)`` and ``(e3, e1)`` give all three components; the
    two ``e1`` values are averaged.
    """
    pair = {"V": _rhoV_pair, "B": _rhoB_pair}[kind]
    xi = np.zeros(3)
    out = np.zeros(3, dtype=complex)
    e = np.eye(3)
    for F, (i, j) in ((e, (0, 1)), (e[[2, 0, 1]], (2, 0))):
        c1, c2 = _tangential(pair(xi, F, h, coeffs1, coeffs2, known, noise), F)
        out[i] += c1
        out[j] += c2
    out[0] /= 2.0
    return out


def estimate_thetaA(xi, h, coeffs1, coeffs2, known=None, noise=None) -> complex:
    """``theta_A^(xi) = -(h/2) (I - correction)`` with ``alpha1 = x.w1``, ``alpha1* = exp(i x.xi)``.

    Reconstructed ``B`` in ``known`` accounts for the ``i int (rho.B)(w.x) exp(-i x.xi)`` term.
    """
    _require_m(coeffs2, "estimate_thetaA", lambda m: m > 2, "needs m > 2")
    F = _any_frame(xi)
    return -0.5 * h * _pair_value(xi, CgoDirection(F[0], F[1]), h, "lin", "exp_conj", coeffs1, coeffs2, known, noise)[0]


def estimate_q(xi, h, coeffs1, coeffs2, known=None, noise=None) -> complex:
    """``q^(xi) = I - correction`` with ``alpha1 = exp(-i x.xi)``, ``alpha1* = 1``."""
    F = _any_frame(xi)
    return _pair_value(xi, CgoDirection(F[0], F[1]), h, "exp", "one", coeffs1, coeffs2, known, noise)[0]


def estimate_a_isotropic(xi, h, coeffs1, coeffs2, known=None, noise=None) -> complex:
    """``a^(xi) = -(h/2) (I - correction)`` for ``m = 2`` with ``alpha1 = (x.w1) exp(-i x.xi)``."""
    _require_m(coeffs2, "estimate_a_isotropic", lambda m: m == 2, "needs m = 2")
    F = _any_frame(xi)
    return -0.5 * h * _pair_value(xi, CgoDirection(F[0], F[1]), h, "lin_exp", "one", coeffs1, coeffs2, known, noise)[0]


# --------------------------------------------------------------------------
# samples and low-pass inversion


def xi_lattice(R: float, delta: float) -> np.ndarray:
    """Points ``delta * k``, ``k`` integer, inside the closed ball of radius ``R``."""
    n = int(np.floor(R / delta + 1e-12))
    k = np.arange(-n, n + 1)
    K = np.stack(np.meshgrid(k, k, k, indexing="ij"), -1).reshape(-1, 3)
    pts = K * delta
    return pts[np.linalg.norm(pts, axis=1) <= R + 1e-12]


def _key(xi) -> tuple:
    return tuple(np.round(np.asarray(xi, dtype=float), 10) + 0.0)


@dataclass
class FourierSamples:
    """Estimated Fourier values on a frequency lattice."""

    kind: str
    entries: dict
    h_used: float
    xi_grid: np.ndarray
    R_max: float
    delta: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SAMPLE_KINDS:
            raise ValueError(f"unknown sample kind {self.kind!r}")
        for k in self.entries:
            if np.linalg.norm(k) > self.R_max + 1e-9:
                raise ValueError("sample outside the configured ball")

    def value(self, xi):
        return self.entries[_key(xi)]

    def to_json(self) -> dict:
        out = []
        for k, v in sorted(self.entries.items()):
            a = np.asarray(v, dtype=complex)
            out.append({"xi": list(k), "re": a.real.tolist(), "im": a.imag.tolist()})
        return {"kind": self.kind, "h": self.h_used, "R": self.R_max, "delta": self.delta, "entries": out}


def sample_lattice(estimator, xis, kind: str, h: float, R: float, delta: float, workers: int = 1) -> FourierSamples:
    """Evaluate ``estimator(xi)`` on every lattice point, optionally in threads."""
    xis = np.asarray(xis, dtype=float)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            vals = list(ex.map(estimator, xis))
    else:
        vals = [estimator(x) for x in xis]
    return FourierSamples(kind, {_key(x): v for x, v in zip(xis, vals)}, h, xis, R, delta)


def assemble_tensor(A_prime_hat, V_hat, theta_hat, xi) -> np.ndarray:
    """``A^ = A'^ + (i/2)(xi V^T + V xi^T) + theta^ id``."""
    xi = np.asarray(xi, dtype=float)
    V = np.asarray(V_hat, dtype=complex)
    return np.asarray(A_prime_hat) + 0.5j * (np.outer(xi, V) + np.outer(V, xi)) + theta_hat * np.eye(3)


def lowpass_invert(samples: FourierSamples, R: float, grid: GridSpec) -> np.ndarray:
    """``(2 pi)^-3 sum_{|xi| <= R} delta^3 entry(xi) exp(i x.xi)`` on the grid.

    Scalar entries give a scalar field, vectors ``(3, N, N, N)`` and 3x3
    matrices the six-component symmetric storage.
    """
    need = xi_lattice(R, samples.delta)
    vals = []
    for xi in need:
        k = _key(xi)
        if k not in samples.entries:
            raise ValueError(f"incomplete xi coverage: missing {k}")
        vals.append(np.asarray(samples.entries[k], dtype=complex))
    vals = np.array(vals)
    if vals.ndim == 3:
        from .grid import full_to_sym

        vals = np.array([full_to_sym(v) for v in vals])
    w = samples.delta**3 / (2 * np.pi) ** 3
    x = grid.axis
    E = [np.exp(1j * np.outer(need[:, a], x)) for a in range(3)]
    if vals.ndim == 1:
        return w * np.einsum("n,ni,nj,nk->ijk", vals, E[0], E[1], E[2], optimize=True)
    return w * np.einsum("nc,ni,nj,nk->cijk", vals, E[0], E[1], E[2], optimize=True)


def truth_samples(values, kind: str, xis, grid: GridSpec, R: float, delta: float) -> FourierSamples:
    """Exact trapezoidal transforms packaged as samples (the tail oracle)."""
    from .fields import fourier_truth

    xis = np.asarray(xis, dtype=float)
    data = fourier_truth(values, xis, grid)
    return FourierSamples(kind, {_key(x): v for x, v in zip(xis, data)}, 0.0, xis, R, delta)


def relative_l2(a, b, grid: GridSpec) -> float:
    nb = np.sqrt(max(quadrature(b, b, grid).real, 0.0))
    d = np.asarray(a) - np.asarray(b)
    return float(np.sqrt(max(quadrature(d, d, grid).real, 0.0)) / nb)


# --------------------------------------------------------------------------
# stability


@dataclass
class StabilityRecord:
    h: float
    noise_level: float
    dtn_norm_proxy: float
    errors: dict
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.h, self.noise_level, self.dtn_norm_proxy] + [float(v) for v in self.errors.values()]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("stability record entries must be finite and nonnegative")


def _log_model(p, t):
    c, c2, mu = p
    return c * np.abs(np.log(t)) ** (-mu) + c2 * np.sqrt(t)


def fit_stability(records, error_key: str = "q_l2", slack: float = 0.10) -> dict:
    """Fit ``error ~ c |ln t|^-mu + c' t^(1/2)`` over the proxy ``t`` and compare with ``c t^k``.

    The proxy is rescaled by its largest value times ``e`` so every
    ``|ln t|`` stays away from zero; this changes ``c`` but not ``mu``'s
    role. Residuals are relative (log-space) so small errors count.

    Returns
    -------
    dict
        ``mu``, ``c``, ``c_sqrt``, ``residual``, ``power_k``,
        ``power_residual``, ``monotone``, ``degenerate``, ``t_scale``.
    """
    recs = sorted(records, key=lambda r: r.dtn_norm_proxy)
    if len(recs) < 5:
        raise ValueError("need at least five records")
    t = np.array([r.dtn_norm_proxy for r in recs], dtype=float)
    e = np.array([r.errors[error_key] for r in recs], dtype=float)
    if t.min() <= 0 or t.max() / t.min() < 100 * (1 - 1e-9):
        raise ValueError("degenerate spread: proxy must span two decades")
    monotone = bool(np.all(e[1:] >= e[:-1] * (1 - slack)))
    degenerate = bool(np.ptp(e) <= 1e-12 * max(np.max(np.abs(e)), 1e-300))
    scale = t.max() * np.e
    ts = t / scale
    le = np.log(np.maximum(e, 1e-300))

    def res_log(p):
        return np.log(np.maximum(_log_model(p, ts), 1e-300)) - le

    best = None
    for mu0 in (0.25, 0.5, 1.0, 2.0, 4.0):
        p0 = [e.max() * np.abs(np.log(ts.max())) ** mu0, e.max() / np.sqrt(ts.max()), mu0]
        r = least_squares(res_log, p0, bounds=([0, 0, 0], [np.inf, np.inf, 20.0]))
        if best is None or r.cost < best.cost:
            best = r
    c, c2, mu = best.x
    # power law in log space is a linear fit
    A = np.vstack([np.ones_like(ts), np.log(ts)]).T
    coef, *_ = np.linalg.lstsq(A, le, rcond=None)
    pres = float(np.sum((A @ coef - le) ** 2))
    return {
        "mu": float(mu),
        "c": float(c),
        "c_sqrt": float(c2),
        "residual": float(2 * best.cost),
        "power_k": float(coef[1]),
        "power_c": float(np.exp(coef[0])),
        "power_residual": pres,
        "monotone": monotone,
        "degenerate": degenerate,
        "t_scale": float(scale),
    }
