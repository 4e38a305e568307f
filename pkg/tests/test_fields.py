import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RECIPES
from polyharm.fields import (
    CoefficientSet,
    RecipeError,
    adjoint_coefficients,
    bump_scalar,
    fourier_truth,
    make_coefficients,
)
from polyharm.grid import build_grid, partial, quadrature, second_partial

# [DERIVED] 4 pi int_0^rho b(r) r^2 sinc(k r) dr for the unit bump of radius 0.5,
# evaluated with scipy.integrate.quad at k = 0, 2, 3
BUMP_FT = {0.0: 0.1498754883774017, 2.0: 0.1416852870249896, 3.0: 0.13194040945217478}


def test_bump_center_and_support(g17):
    b = bump_scalar(g17, [0, 0, 0], 0.5)
    assert b[8, 8, 8] == pytest.approx(1.0)
    r = np.linalg.norm(g17.coords, axis=0)
    assert np.all(b[r >= 0.5] == 0)
    assert np.all(b[r < 0.5] > 0)
    with pytest.raises(RecipeError):
        bump_scalar(g17, [0.6, 0, 0], 0.5)


def test_fourier_at_zero_is_quadrature(g17):
    b = bump_scalar(g17, [0.1, -0.05, 0], 0.5, 1 + 2j)
    assert fourier_truth(b, [0, 0, 0], g17) == pytest.approx(quadrature(b, 1.0, g17), rel=1e-13)


@pytest.mark.parametrize("k", sorted(BUMP_FT))
def test_fourier_matches_radial_integral(k):
    g = build_grid(33)
    b = bump_scalar(g, [0, 0, 0], 0.5)
    assert abs(fourier_truth(b, [0, 0, k], g) - BUMP_FT[k]) < 0.01 * BUMP_FT[k]
    # rotation invariance of a radial bump
    xi = k * np.array([0.6, -0.48, 0.64])
    assert abs(fourier_truth(b, xi, g) - BUMP_FT[k]) < 0.01 * BUMP_FT[k]


def test_fourier_shift_phase():
    c = np.array([0.1, -0.05, 0.0])
    xi = np.array([1.2, -0.8, 2.0])
    g = build_grid(33)
    b0 = fourier_truth(bump_scalar(g, [0, 0, 0], 0.5), xi, g)
    b1 = fourier_truth(bump_scalar(g, c, 0.5), xi, g)
    assert abs(b1 - np.exp(-1j * c @ xi) * b0) < 1e-3 * abs(b0)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_fourier_conjugate_symmetry(xi):
    g = build_grid(17)
    b = bump_scalar(g, [0.1, 0.2, -0.1], 0.4)
    xi = np.array(xi)
    assert fourier_truth(b, -xi, g) == pytest.approx(np.conj(fourier_truth(b, xi, g)), abs=1e-14)


def test_fourier_batched_shapes(g17):
    V = np.stack([bump_scalar(g17, [0, 0, 0], 0.5)] * 3)
    xis = np.array([[0, 0, 1.0], [1, 0, 0], [0, 2, 0]])
    assert fourier_truth(V, xis, g17).shape == (3, 3)
    assert fourier_truth(V[0], xis, g17).shape == (3,)


def test_recipes_build_and_stay_inside(g25):
    for name, rec in RECIPES.items():
        c = make_coefficients(rec, g25)
        assert c.m == rec["m"]
        # boundary layer of two nodes is exactly zero
        for arr in (c.A, c.B, c.q):
            assert not np.any(arr[..., :2, :, :]) and not np.any(arr[..., -2:, :, :])


def test_divfree_tensor_is_trace_and_divergence_free(g25):
    c = make_coefficients(RECIPES["A-divfree"], g25)
    Af = c.A_full
    scale = np.max(np.abs(c.A))
    assert np.max(np.abs(Af[0, 0] + Af[1, 1] + Af[2, 2])) < 1e-11 * scale
    div = [sum(partial(Af[j, k], j, g25) for j in range(3)) for k in range(3)]
    assert np.max(np.abs(div)) < 1e-10 * scale / g25.dx
    assert not c.isotropic


def test_recipe_errors(g17):
    with pytest.raises(RecipeError):
        make_coefficients({"recipe": "nope", "bumps": [{"target": "q"}]}, g17)
    with pytest.raises(RecipeError):
        make_coefficients({"recipe": "q-only", "bumps": []}, g17)
    with pytest.raises(RecipeError):
        make_coefficients({"recipe": "q-only", "bumps": [{"target": "B"}]}, g17)
    with pytest.raises(RecipeError):
        make_coefficients({"recipe": "combined", "m": 2, "bumps": [{"target": "A"}]}, g17)
    with pytest.raises(RecipeError):
        make_coefficients({"recipe": "q-only", "bumps": [{"target": "q", "radius": 0.9}]}, g17)
    with pytest.raises(ValueError):
        CoefficientSet.zero(g17, 1)


def test_adjoint_coefficients_vector_only(g17):
    rec = {"recipe": "B-only", "m": 3, "bumps": [{"target": "B", "direction": [0, 0, 1], "amplitude": [1, 1]}]}
    c = make_coefficients(rec, g17)
    s = adjoint_coefficients(c)
    assert np.allclose(s.B, np.conj(c.B))
    assert np.allclose(s.q, -1j * partial(np.conj(c.B[2]), 2, g17))
    assert np.array_equal(s.A, np.conj(c.A))


def test_adjoint_coefficients_isotropic(g17):
    c = make_coefficients({"recipe": "isotropic-m2", "m": 2, "bumps": [{"target": "a", "amplitude": 2.0}]}, g17)
    s = adjoint_coefficients(c)
    a = c.a.real
    for k in range(3):
        assert np.allclose(s.B[k], -2j * partial(a, k, g17))
    # only diagonal second derivatives survive for A = a * id
    expected = -sum(second_partial(c.A_full[j, j], j, j, g17) for j in range(3))
    assert np.allclose(s.q, expected)
