"""Coefficient triples (A, B, q), bump generators, ground-truth transforms
and the formal-adjoint coefficient map.

Sign convention: ``D = -i grad`` throughout, so ``A D.D u = -A_jk d_j d_k u``
and ``B.D u = -i B.grad u``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import SYM_INDEX, SYM_PAIRS, GridSpec, check_shape, partial, second_partial

RECIPES = ("q-only", "B-only", "A-divfree", "A-potential", "isotropic-m2", "combined")
TARGETS = ("A", "B", "q", "a", "V", "theta")
# which bump targets each recipe accepts
_ALLOWED = {
    "q-only": {"q"},
    "B-only": {"B"},
    "A-divfree": {"A"},
    "A-potential": {"V", "theta"},
    "isotropic-m2": {"a", "B", "q"},
    "combined": set(TARGETS),
}


class RecipeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Perturbation coefficients of the polyharmonic operator.

    Attributes
    ----------
    grid : GridSpec
    A : ndarray, shape (6, N, N, N)
        Symmetric tensor, upper-triangle storage.
    B : ndarray, shape (3, N, N, N)
    q : ndarray, shape (N, N, N)
    m : int
        Order of the polyharmonic part.
    support_radius : float
        Max-norm radius containing the support of A, B and q.
    isotropic : bool
        True when A = a * id.
    """

    grid: GridSpec
    A: np.ndarray
    B: np.ndarray
    q: np.ndarray
    m: int
    support_radius: float = 0.0
    isotropic: bool = True

    def __post_init__(self):
        if int(self.m) < 2:
            raise ValueError("operator order m must be at least 2")
        check_shape(self.A, self.grid, 6)
        check_shape(self.B, self.grid, 3)
        check_shape(self.q, self.grid, 1)
        for name in ("A", "B", "q"):
            arr = np.array(getattr(self, name), dtype=np.complex128)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.m == 2 and not self.isotropic:
            raise ValueError("m = 2 requires an isotropic A = a*id")

    @classmethod
    def zero(cls, grid: GridSpec, m: int) -> "CoefficientSet":
        z = np.zeros(grid.shape, dtype=np.complex128)
        return cls(grid, np.zeros((6,) + grid.shape, complex), np.zeros((3,) + grid.shape, complex), z, m)

    @property
    def A_full(self) -> np.ndarray:
        """A as a full ``(3, 3, N, N, N)`` array."""
        return self.A[SYM_INDEX]

    @property
    def a(self) -> np.ndarray:
        """Isotropic scalar, ``trace(A)/3``."""
        return (self.A[0] + self.A[3] + self.A[5]) / 3

    def is_zero(self) -> bool:
        return not (np.any(self.A) or np.any(self.B) or np.any(self.q))

    def __sub__(self, other: "CoefficientSet") -> "CoefficientSet":
        if not self.grid.same_as(other.grid) or self.m != other.m:
            raise ValueError("coefficient sets live on different grids or orders")
        return replace(
            self,
            A=self.A - other.A,
            B=self.B - other.B,
            q=self.q - other.q,
            support_radius=max(self.support_radius, other.support_radius),
            isotropic=self.isotropic and other.isotropic,
        )

    def scaled(self, c: complex) -> "CoefficientSet":
        return replace(self, A=c * self.A, B=c * self.B, q=c * self.q)


def bump_scalar(grid: GridSpec, center, radius: float, amplitude: complex = 1.0) -> np.ndarray:
    """Smooth bump ``a exp(1 - 1/(1 - r^2/rho^2))`` supported in the ball of radius ``rho``."""
    center = np.asarray(center, dtype=float)
    if np.max(np.abs(center)) + radius >= grid.L:
        raise RecipeError("bump support escapes the domain")
    r2 = np.sum((grid.coords - center[:, None, None, None]) ** 2, axis=0) / radius**2
    out = np.zeros(grid.shape, dtype=np.result_type(amplitude, float))
    inside = r2 < 1.0
    out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def solenoidal_tensor(grid: GridSpec, s: np.ndarray, direction) -> np.ndarray:
    """Compactly supported tensor that is trace- and divergence-free on the grid.

    With the scalar difference operators ``U_j = sum eps_jab a_b d_a`` and
    ``W_k = sum eps_kcd d_c U_d`` (central differences, constant vector ``a``)
    the tensor ``A_jk = U_j W_k s + W_j U_k s`` is symmetric. Since central
    differences commute, ``sum_j d_j U_j = sum_j d_j W_j = 0`` and
    ``sum_j U_j W_j = 0`` hold as operator identities, so the discrete
    divergence and trace vanish to rounding. The support of ``s`` grows by
    three nodes.
    """
    a = np.asarray(direction, dtype=float)

    def U(f, j):
        b, c = (j + 1) % 3, (j + 2) % 3
        return a[c] * partial(f, b, grid) - a[b] * partial(f, c, grid)

    def W(f, k):
        b, c = (k + 1) % 3, (k + 2) % 3
        return partial(U(f, c), b, grid) - partial(U(f, b), c, grid)

    Us = [U(s, j) for j in range(3)]
    Ws = [W(s, k) for k in range(3)]
    return np.stack([U(Ws[k], j) + W(Us[k], j) for j, k in SYM_PAIRS])


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _amp(a) -> complex:
    if isinstance(a, (list, tuple)):
        return complex(a[0], a[1])
    return a


def make_coefficients(recipe: dict, grid: GridSpec) -> CoefficientSet:
    """Build a coefficient set from a recipe document.

    Parameters
    ----------
    recipe : dict
        ``{recipe, seed, m, bumps: [{center, radius, amplitude, target}]}``.
        Targets ``B``, ``V`` and ``A`` take an optional ``direction``,
        otherwise one is drawn from the seeded generator. Target ``A``
        yields a trace- and divergence-free tensor (see
        ``solenoidal_tensor``). Amplitudes may be ``[re, im]``.
    grid : GridSpec

    Returns
    -------
    CoefficientSet
    """
    name = recipe.get("recipe")
    if name not in RECIPES:
        raise RecipeError(f"unknown recipe {name!r}")
    m = int(recipe.get("m", 3))
    rng = np.random.default_rng(recipe.get("seed", 0))
    bumps = recipe.get("bumps", [])
    if not bumps:
        raise RecipeError("recipe needs at least one bump")
    if m == 2 and any(b.get("target") in ("A", "V", "theta") for b in bumps):
        raise RecipeError("m = 2 requires an isotropic A; use target 'a'")
    if name == "isotropic-m2" and m != 2:
        raise RecipeError("recipe isotropic-m2 needs m = 2")
    if name in ("A-divfree", "A-potential") and m == 2:
        raise RecipeError(f"recipe {name} needs m > 2")

    shape = grid.shape
    A = np.zeros((6,) + shape, dtype=complex)
    B = np.zeros((3,) + shape, dtype=complex)
    q = np.zeros(shape, dtype=complex)
    rs = 0.0
    isotropic = True
    for bump in bumps:
        target = bump.get("target")
        if target not in _ALLOWED[name]:
            raise RecipeError(f"target {target!r} not allowed in recipe {name!r}")
        center = np.asarray(bump.get("center", (0.0, 0.0, 0.0)), dtype=float)
        radius = float(bump.get("radius", 0.5))
        b = bump_scalar(grid, center, radius, _amp(bump.get("amplitude", 1.0)))
        rs = max(rs, float(np.max(np.abs(center))) + radius)
        if target == "q":
            q += b
        elif target == "B":
            d = _unit(bump["direction"]) if "direction" in bump else _unit(rng.normal(size=3))
            B += d[:, None, None, None] * b
        elif target == "a":
            for c in (0, 3, 5):
                A[c] += b
        elif target == "theta":
            for c in (0, 3, 5):
                A[c] += b
        elif target == "V":
            d = _unit(bump["direction"]) if "direction" in bump else _unit(rng.normal(size=3))
            V = d[:, None, None, None] * b
            for c, (j, k) in enumerate(SYM_PAIRS):
                A[c] += 0.5 * (partial(V[k], j, grid) + partial(V[j], k, grid))
            isotropic = False
        elif target == "A":
            d = _unit(bump["direction"]) if "direction" in bump else _unit(rng.normal(size=3))
            T = solenoidal_tensor(grid, b, d)
            # rescale so the tensor peak matches the requested amplitude
            A += T * (np.max(np.abs(b)) / np.max(np.abs(T)))
            rs = max(rs, float(np.max(np.abs(center))) + radius + 3 * grid.dx)
            isotropic = False
    if rs >= grid.L - 2 * grid.dx:
        raise RecipeError("coefficient support must stay two nodes away from the boundary")
    return CoefficientSet(grid, A, B, q, m, support_radius=rs, isotropic=isotropic)


def load_recipe(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def fourier_truth(values: np.ndarray, xi, grid: GridSpec) -> np.ndarray:
    """Trapezoidal ``int field(x) exp(-i x.xi) dx`` over the box.

    Parameters
    ----------
    values : ndarray
        Scalar ``(N, N, N)`` or multi-component ``(c, N, N, N)`` field.
    xi : array_like, shape (3,) or (K, 3)

    Returns
    -------
    ndarray
        Shape ``lead_xi + lead_components``.
    """
    values = np.asarray(values)
    check_shape(values, grid)
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    xi = np.atleast_2d(xi)
    w1 = np.full(grid.N, grid.dx)
    w1[[0, -1]] *= 0.5
    x = grid.axis
    E = [w1[None, :] * np.exp(-1j * np.outer(xi[:, a], x)) for a in range(3)]
    if values.ndim == 3:
        out = np.einsum("ijk,ni,nj,nk->n", values, E[0], E[1], E[2], optimize=True)
    else:
        out = np.einsum("cijk,ni,nj,nk->nc", values, E[0], E[1], E[2], optimize=True)
    return out[0] if single else out


def adjoint_coefficients(c: CoefficientSet) -> CoefficientSet:
    """Coefficients of the formal adjoint operator.

    ``A* = conj A``, ``B*_k = conj B_k + 2 sum_j D_j conj A_jk`` and
    ``q* = conj q - i div(conj B) + sum_jk D_k D_j conj A_jk`` with ``D = -i grad``,
    evaluated with central differences.
    """
    g = c.grid
    Ac = np.conj(c.A)
    Af = Ac[SYM_INDEX]
    Bc = np.conj(c.B)
    Bs = Bc.copy()
    for k in range(3):
        Bs[k] += -2j * sum(partial(Af[j, k], j, g) for j in range(3))
    divB = sum(partial(Bc[j], j, g) for j in range(3))
    qs = np.conj(c.q) - 1j * divB
    for j in range(3):
        for k in range(3):
            qs = qs - second_partial(Af[j, k], j, k, g)
    return replace(c, A=Ac, B=Bs, q=qs)
