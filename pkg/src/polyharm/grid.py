"""Uniform tensor grid on the cube (-L, L)^3 with finite-difference calculus.

Fields are plain numpy arrays laid out component-first:

* scalar: ``(N, N, N)``
* vector: ``(3, N, N, N)``
* symmetric tensor: ``(6, N, N, N)`` holding the upper triangle
  ``(11, 12, 13, 22, 23, 33)``

Flat node indices follow C order, so node ``(i, j, k)`` is ``i*N*N + j*N + k``
and axis 0 is the first coordinate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

# upper-triangle storage order of a symmetric 3x3 tensor
SYM_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
SYM_INDEX = np.array([[0, 1, 2], [1, 3, 4], [2, 4, 5]])

# face ids: 2*axis + side, side 0 is the -L face and side 1 the +L face
FACE_NAMES = ("-x1", "+x1", "-x2", "+x2", "-x3", "+x3")


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Node set of the cube ``(-L, L)^3`` with ``N`` nodes per axis.

    Attributes
    ----------
    N : int
        Nodes per axis, odd and at least 17.
    L : float
        Half-width of the box.
    dx : float
        Spacing ``2L/(N-1)``.
    boundary_index, interior_index : ndarray of int
        Sorted flat indices partitioning all ``N**3`` nodes.
    boundary_face : ndarray of int
        Face id (see ``FACE_NAMES``) of each boundary node. Edge and corner
        nodes go to the x1 face first, then x2, then x3.
    """

    N: int
    L: float
    n: int = 3
    dx: float = field(init=False)
    boundary_index: np.ndarray = field(init=False, repr=False)
    interior_index: np.ndarray = field(init=False, repr=False)
    boundary_face: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        N = int(self.N)
        if N % 2 == 0:
            raise ValueError("N must be odd")
        if N < 17:
            raise ValueError("N must be at least 17")
        if not self.L > 0:
            raise ValueError("L must be positive")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "dx", 2.0 * self.L / (N - 1))

        idx = np.indices((N, N, N)).reshape(3, -1)
        face = np.full(N**3, -1, dtype=np.int64)
        # reversed so that lower axes overwrite: x1 < x2 < x3 priority
        for axis in (2, 1, 0):
            face[idx[axis] == 0] = 2 * axis
            face[idx[axis] == N - 1] = 2 * axis + 1
        on_boundary = face >= 0
        object.__setattr__(self, "boundary_index", np.flatnonzero(on_boundary))
        object.__setattr__(self, "interior_index", np.flatnonzero(~on_boundary))
        object.__setattr__(self, "boundary_face", face[on_boundary])
        for name in ("boundary_index", "interior_index", "boundary_face"):
            getattr(self, name).setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N, self.N, self.N)

    @property
    def size(self) -> int:
        return self.N**3

    @cached_property
    def axis(self) -> np.ndarray:
        """1-D node coordinates ``-L + i*dx``."""
        return -self.L + self.dx * np.arange(self.N)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(3, N, N, N)``."""
        return np.stack(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))

    @cached_property
    def boundary_coords(self) -> np.ndarray:
        """Coordinates of boundary nodes, shape ``(3, nb)``."""
        return self.coords.reshape(3, -1)[:, self.boundary_index]

    @cached_property
    def face_membership(self) -> np.ndarray:
        """``(6, nb)`` boolean: boundary node lies on face ``2*axis + side``."""
        idx = np.indices(self.shape).reshape(3, -1)[:, self.boundary_index]
        out = np.zeros((6, self.boundary_index.size), dtype=bool)
        for axis in range(3):
            out[2 * axis] = idx[axis] == 0
            out[2 * axis + 1] = idx[axis] == self.N - 1
        return out

    @cached_property
    def boundary_normal(self) -> np.ndarray:
        """Outward normal, shape ``(3, nb)``.

        Unit on face interiors; on edges and corners the average of the
        adjacent face normals (not unit), matching ``normal_trace``.
        """
        mem = self.face_membership
        nu = np.zeros((3, self.boundary_index.size))
        for face in range(6):
            axis, side = divmod(face, 2)
            nu[axis] += np.where(mem[face], 1.0 if side else -1.0, 0.0)
        return nu / mem.sum(axis=0)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, 1:-1, 1:-1] = True
        return mask

    @cached_property
    def volume_weights(self) -> np.ndarray:
        """Trapezoidal weights on the full grid."""
        w = np.full(self.N, self.dx)
        w[[0, -1]] *= 0.5
        return np.einsum("i,j,k->ijk", w, w, w)

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        """Surface trapezoidal weights on boundary nodes.

        Each face carries its own 2-D trapezoidal rule; nodes shared by
        several faces accumulate the weights of every face they lie on.
        """
        N = self.N
        w1 = np.full(N, self.dx)
        w1[[0, -1]] *= 0.5
        total = np.zeros(self.shape)
        face2d = np.outer(w1, w1)
        for axis in range(3):
            for side in (0, N - 1):
                sl = [slice(None)] * 3
                sl[axis] = side
                total[tuple(sl)] += face2d
        return total.reshape(-1)[self.boundary_index]

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Boundary restriction of a scalar or multi-component field."""
        values = np.asarray(values)
        lead = values.shape[: values.ndim - 3]
        return values.reshape(lead + (-1,))[..., self.boundary_index]

    def extend(self, boundary_values: np.ndarray, interior: np.ndarray | None = None) -> np.ndarray:
        """Scalar full-grid field with given boundary values.

        Interior nodes are taken from ``interior`` (flat, interior order)
        or set to zero.
        """
        bv = np.asarray(boundary_values)
        dtype = np.result_type(bv, np.float64 if interior is None else interior)
        out = np.zeros(self.size, dtype=dtype)
        out[self.boundary_index] = bv
        if interior is not None:
            out[self.interior_index] = interior
        return out.reshape(self.shape)

    def same_as(self, other: "GridSpec") -> bool:
        return self is other or (self.N == other.N and self.L == other.L)


def build_grid(N: int, L: float = 1.0) -> GridSpec:
    """Grid of ``N`` nodes per axis on ``(-L, L)^3``."""
    return GridSpec(N, L)


def check_shape(values: np.ndarray, grid: GridSpec, components: int | None = None) -> int:
    """Return the component count of ``values``, validating it against ``grid``."""
    values = np.asarray(values)
    if values.shape[-3:] != grid.shape:
        raise GridMismatchError(f"field shape {values.shape} does not match grid N={grid.N}")
    c = 1 if values.ndim == 3 else values.shape[0]
    if values.ndim not in (3, 4):
        raise ValueError(f"unsupported field rank {values.ndim}")
    if components is not None and c != components:
        raise ValueError(f"expected {components} components, got {c}")
    return c


# --------------------------------------------------------------------------
# 1-D stencils along an axis of a numpy array


def _d1(f: np.ndarray, axis: int, dx: float, scheme: str = "central") -> np.ndarray:
    """First derivative along ``axis``, second order, one-sided at the ends."""
    f = np.moveaxis(np.asarray(f, dtype=np.result_type(f, np.float64)), axis, -1)
    out = np.empty_like(f)
    if scheme == "central":
        out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2 * dx)
    elif scheme == "forward":
        out[..., :-1] = (f[..., 1:] - f[..., :-1]) / dx
    elif scheme == "backward":
        out[..., 1:] = (f[..., 1:] - f[..., :-1]) / dx
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme != "backward":
        out[..., -1] = (3 * f[..., -1] - 4 * f[..., -2] + f[..., -3]) / (2 * dx)
    if scheme != "forward":
        out[..., 0] = (-3 * f[..., 0] + 4 * f[..., 1] - f[..., 2]) / (2 * dx)
    return np.moveaxis(out, -1, axis)


def _d2(f: np.ndarray, axis: int, dx: float) -> np.ndarray:
    """Second derivative: 3-point inside, 4-point one-sided at the ends."""
    f = np.moveaxis(np.asarray(f, dtype=np.result_type(f, np.float64)), axis, -1)
    out = np.empty_like(f)
    out[..., 1:-1] = (f[..., 2:] - 2 * f[..., 1:-1] + f[..., :-2]) / dx**2
    out[..., 0] = (2 * f[..., 0] - 5 * f[..., 1] + 4 * f[..., 2] - f[..., 3]) / dx**2
    out[..., -1] = (2 * f[..., -1] - 5 * f[..., -2] + 4 * f[..., -3] - f[..., -4]) / dx**2
    return np.moveaxis(out, -1, axis)


def differential_op(values: np.ndarray, mode: str, grid: GridSpec, scheme: str = "central") -> np.ndarray:
    """Apply a finite-difference Laplacian, gradient or divergence.

    Parameters
    ----------
    values : ndarray
        Scalar field for ``laplacian`` and ``gradient``, vector field for
        ``divergence``. A leading batch of scalars is accepted for
        ``laplacian``.
    mode : {"laplacian", "gradient", "divergence"}
    grid : GridSpec
    scheme : {"central", "forward", "backward"}
        Difference scheme for first derivatives. The 7-point Laplacian is
        the composition of forward gradient and backward divergence on
        interior nodes.

    Returns
    -------
    ndarray
        Same-rank output for ``laplacian``, vector for ``gradient``,
        scalar for ``divergence``. Boundary nodes use one-sided
        second-order differences.
    """
    values = np.asarray(values)
    c = check_shape(values, grid)
    dx = grid.dx
    nd = values.ndim
    if mode == "laplacian":
        return sum(_d2(values, nd - 3 + a, dx) for a in range(3))
    if mode == "gradient":
        if c != 1:
            raise ValueError("gradient needs a scalar field")
        return np.stack([_d1(values, a, dx, scheme) for a in range(3)])
    if mode == "divergence":
        if c != 3 or nd != 4:
            raise ValueError("divergence needs a vector field")
        return sum(_d1(values[a], a, dx, scheme) for a in range(3))
    raise ValueError(f"unknown mode {mode!r}")


def laplacian(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    return differential_op(u, "laplacian", grid)


def gradient(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    return differential_op(u, "gradient", grid)


def divergence(X: np.ndarray, grid: GridSpec) -> np.ndarray:
    return differential_op(X, "divergence", grid)


def partial(u: np.ndarray, axis: int, grid: GridSpec) -> np.ndarray:
    """Single central first derivative along ``axis`` (0, 1 or 2)."""
    return _d1(np.asarray(u), u.ndim - 3 + axis, grid.dx)


def second_partial(u: np.ndarray, j: int, k: int, grid: GridSpec) -> np.ndarray:
    """``d_j d_k u``: compact 3-point for j == k, composed central otherwise."""
    u = np.asarray(u)
    off = u.ndim - 3
    if j == k:
        return _d2(u, off + j, grid.dx)
    return _d1(_d1(u, off + j, grid.dx), off + k, grid.dx)


def normal_trace(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Outward normal derivative on boundary nodes (one-sided 3-point).

    On edges and corners the one-sided derivatives of all adjacent faces
    are averaged. Every adjacent face gives such a node the same surface
    weight, so ``quadrature(normal_trace(u), v, mode="boundary")`` is the
    sum of the per-face flux integrals. Leading batch dimensions are kept,
    e.g. ``(m, N, N, N)`` gives ``(m, nb)``.
    """
    u = np.asarray(u)
    check_shape(u, grid)
    lead = u.shape[:-3]
    flat = u.reshape(lead + (-1,))
    N, dx = grid.N, grid.dx
    b = grid.boundary_index
    mem = grid.face_membership
    out = np.zeros(lead + (b.size,), dtype=u.dtype if np.iscomplexobj(u) else np.float64)
    strides = np.array([N * N, N, 1])
    for face in range(6):
        sel = mem[face]
        axis, side = divmod(face, 2)
        # step pointing into the domain
        step = strides[axis] * (1 if side == 0 else -1)
        p0 = b[sel]
        f0, f1, f2 = flat[..., p0], flat[..., p0 + step], flat[..., p0 + 2 * step]
        # inward derivative, flipped for the outward normal
        out[..., sel] += -(-3 * f0 + 4 * f1 - f2) / (2 * dx)
    return out / mem.sum(axis=0)


def quadrature(a, b, grid: GridSpec, mode: str = "volume") -> complex:
    """Trapezoidal approximation of the integral of ``a * conj(b)``.

    Multi-component inputs are summed over components. In ``boundary``
    mode the inputs are boundary arrays ordered like ``grid.boundary_index``.
    Scalars broadcast.
    """
    if mode == "volume":
        w = grid.volume_weights
    elif mode == "boundary":
        w = grid.boundary_weights
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a = np.asarray(a)
    b = np.asarray(b)
    for arr in (a, b):
        if arr.ndim and arr.shape[-w.ndim :] != w.shape:
            raise GridMismatchError(f"array shape {arr.shape} does not match quadrature weights {w.shape}")
    val = np.sum(w * a * np.conj(b))
    return complex(val)


# --------------------------------------------------------------------------
# sparse matrices on the full grid, consistent with the array stencils


@dataclass(frozen=True, eq=False)
class _Stencils:
    D: tuple  # central first derivatives, full grid
    D2: tuple  # second derivatives, full grid


def _one_d(N: int, dx: float):
    e = np.ones(N)
    D = sp.diags([-e[:-1], e[:-1]], [-1, 1], shape=(N, N), format="lil") / (2 * dx)
    D[0, :3] = np.array([-3, 4, -1]) / (2 * dx)
    D[N - 1, N - 3 :] = np.array([1, -4, 3]) / (2 * dx)
    D2 = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], shape=(N, N), format="lil") / dx**2
    D2[0, :4] = np.array([2, -5, 4, -1]) / dx**2
    D2[N - 1, N - 4 :] = np.array([-1, 4, -5, 2]) / dx**2
    return D.tocsr(), D2.tocsr()


def sparse_stencils(grid: GridSpec) -> _Stencils:
    """Full-grid sparse derivative matrices acting on C-ordered flat fields."""
    N = grid.N
    D1, D21 = _one_d(N, grid.dx)
    eye = sp.identity(N, format="csr")

    def lift(M, axis):
        mats = [eye, eye, eye]
        mats[axis] = M
        return sp.kron(sp.kron(mats[0], mats[1]), mats[2], format="csr")

    return _Stencils(D=tuple(lift(D1, a) for a in range(3)), D2=tuple(lift(D21, a) for a in range(3)))


# --------------------------------------------------------------------------
# field dumps


def write_field(path: str | Path, values: np.ndarray, grid: GridSpec, kind: str) -> tuple[Path, Path]:
    """Write a field as little-endian float64 (re, im) pairs plus a JSON sidecar.

    Node-major, component-minor order. Boundary arrays are written with
    ``kind`` ending in ``"boundary"`` and the node axis of length ``nb``.
    """
    path = Path(path)
    values = np.asarray(values, dtype=np.complex128)
    if kind.endswith("boundary"):
        comps = 1 if values.ndim == 1 else values.shape[0]
        nodes = values.reshape(comps, -1).T
    else:
        comps = check_shape(values, grid)
        nodes = values.reshape(comps, -1).T
    pairs = np.empty(nodes.shape + (2,), dtype="<f8")
    pairs[..., 0] = nodes.real
    pairs[..., 1] = nodes.imag
    bin_path = path.with_suffix(".bin")
    json_path = path.with_suffix(".json")
    bin_path.write_bytes(pairs.tobytes())
    json_path.write_text(json.dumps({"N": grid.N, "L": grid.L, "components": comps, "kind": kind}, sort_keys=True))
    return bin_path, json_path


def read_field(path: str | Path) -> tuple[np.ndarray, GridSpec, str]:
    """Inverse of ``write_field``; returns ``(values, grid, kind)``."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = build_grid(meta["N"], meta["L"])
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8").reshape(-1, meta["components"], 2)
    vals = (raw[..., 0] + 1j * raw[..., 1]).T
    if meta["kind"].endswith("boundary"):
        out = vals[0] if meta["components"] == 1 else vals
    else:
        out = vals.reshape((meta["components"],) + grid.shape)
        if meta["components"] == 1:
            out = out[0]
    return np.ascontiguousarray(out), grid, meta["kind"]


def sym_to_full(T: np.ndarray) -> np.ndarray:
    """Upper-triangle storage ``(6, ...)`` to a full ``(3, 3, ...)`` tensor."""
    return np.asarray(T)[SYM_INDEX]


def full_to_sym(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    return np.stack([M[j, k] for j, k in SYM_PAIRS])
