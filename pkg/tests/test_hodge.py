import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RECIPES
from polyharm.fields import bump_scalar, make_coefficients
from polyharm.grid import build_grid
from polyharm.grid import divergence, gradient, partial
from polyharm.hodge import decompose_tensor, decompose_vector, solve_elliptic_system, sym_grad

G17 = build_grid(17)


def _vec_bump(g, d=(1.0, 0.5, -0.3), center=(0.1, 0.0, 0.0), radius=0.5):
    b = bump_scalar(g, center, radius)
    return np.stack([c * b for c in d])


def _assert_structural(A, H, g):
    back = H.A_prime + sym_grad(H.V, g)
    for c in (0, 3, 5):
        back[c] = back[c] + H.theta
    assert np.max(np.abs(back - A)) < 1e-12 * max(1.0, np.max(np.abs(A)))
    assert H.residuals["trace_norm"] < 1e-12
    assert np.all(g.restrict(H.V) == 0)


def test_potential_tensor_recovers_vector():
    errs = []
    for N in (17, 25):
        g = build_grid(N)
        V0 = _vec_bump(g)
        A = sym_grad(V0, g)
        H = decompose_tensor(A, g)
        _assert_structural(A, H, g)
        assert H.residuals["bvp_residual"] < 1e-9
        errs.append(np.linalg.norm(H.V - V0) / np.linalg.norm(V0))
    assert errs[1] < 0.1
    # second order in dx, up to the pre-asymptotic regime of a sharp bump
    assert errs[0] / errs[1] > 1.6


def test_isotropic_tensor_is_all_theta():
    b = bump_scalar(G17, [0, 0.1, 0], 0.5, 2.0)
    A = np.zeros((6,) + G17.shape)
    A[[0, 3, 5]] = b
    H = decompose_tensor(A, G17)
    # F cancels up to rounding, so V ~ 0 and the plateau is pure theta
    assert np.max(np.abs(H.V)) < 1e-12
    assert np.allclose(H.theta, b)
    assert np.max(np.abs(H.A_prime)) < 1e-11


def test_divfree_recipe_has_tiny_potential(g25):
    c = make_coefficients(RECIPES["A-divfree"], g25)
    H = decompose_tensor(c.A, g25)
    _assert_structural(c.A, H, g25)
    assert np.max(np.abs(H.V)) < 1e-8 * np.max(np.abs(c.A))
    assert np.max(np.abs(H.theta)) < 1e-8 * np.max(np.abs(c.A))


def test_zero_forcing_gives_zero():
    V, res = solve_elliptic_system(np.zeros((3,) + G17.shape), G17)
    assert not np.any(V) and res == 0.0


@settings(max_examples=5, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 1000))
def test_tensor_split_is_linear(s, t, seed):
    rng = np.random.default_rng(seed)
    b1 = bump_scalar(G17, [0.1, 0, 0], 0.5)
    b2 = bump_scalar(G17, [-0.1, 0.1, 0], 0.4)
    A1 = rng.standard_normal((6, 1, 1, 1)) * b1
    A2 = rng.standard_normal((6, 1, 1, 1)) * b2
    H1, H2 = decompose_tensor(A1, G17), decompose_tensor(A2, G17)
    H = decompose_tensor(s * A1 + t * A2, G17)
    scale = 1.0 + abs(s) + abs(t)
    assert np.max(np.abs(H.V - (s * H1.V + t * H2.V))) < 1e-7 * scale
    assert np.max(np.abs(H.theta - (s * H1.theta + t * H2.theta))) < 1e-7 * scale


def test_vector_split_of_gradient_and_curl():
    phi = bump_scalar(G17, [0, 0, 0], 0.6)
    H = decompose_vector(gradient(phi, G17), G17)
    assert np.all(G17.restrict(H.theta) == 0)
    assert np.allclose(H.X_prime + gradient(H.theta, G17), gradient(phi, G17))
    assert np.linalg.norm(H.theta - phi) / np.linalg.norm(phi) < 0.15
    # central-difference curl is exactly divergence-free
    w = _vec_bump(G17)
    curl = np.stack(
        [partial(w[(k + 2) % 3], (k + 1) % 3, G17) - partial(w[(k + 1) % 3], (k + 2) % 3, G17) for k in range(3)]
    )
    assert np.max(np.abs(divergence(curl, G17))) < 1e-12
    Hc = decompose_vector(curl, G17)
    assert np.max(np.abs(Hc.theta)) < 1e-12


def test_vector_split_nearly_idempotent():
    phi = bump_scalar(G17, [0, 0, 0], 0.6)
    H1 = decompose_vector(gradient(phi, G17), G17)
    H2 = decompose_vector(H1.X_prime, G17)
    # repeating the split removes far less than the first pass did
    assert np.max(np.abs(H2.theta)) < 0.1 * np.max(np.abs(H1.theta))
