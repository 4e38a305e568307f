import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import pair
from polyharm import reconstruct as rc
from polyharm.fields import bump_scalar
from polyharm.forward import NavierTrace, smooth_random_trace
from polyharm.grid import build_grid, quadrature

G17 = build_grid(17)
Z, Q = pair("q-only", G17)
F = smooth_random_trace(G17, 3, seed=0)
FS = smooth_random_trace(G17, 3, seed=1)


def test_pairing_vanishes_for_equal_operators():
    assert rc.pairing(Q, Q, F, FS) == 0.0


def test_pairing_is_sesquilinear():
    a = 0.7 - 1.3j
    base = rc.pairing(Z, Q, F, FS)
    assert rc.pairing(Z, Q, F, NavierTrace(a * FS.data, G17)) == pytest.approx(np.conj(a) * base, rel=1e-8)
    assert rc.pairing(Z, Q, NavierTrace(a * F.data, G17), FS) == pytest.approx(a * base, rel=1e-8)


def test_master_identity_q_only():
    mi = rc.master_identity(Z, Q, F, FS)
    assert set(mi) == {"pairing", "volume", "scale", "discrepancy"}
    # O(dx^2) on this coarse grid; the N = 25 tolerance is in the acceptance suite
    assert mi["discrepancy"] < 0.05


@settings(max_examples=30, deadline=None)
@given(
    st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
    st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
    st.lists(st.floats(-3, 3), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1),
)
def test_frame_algebra_structure(mp, mm, xi):
    from polyharm.cgo import frame_for_xi

    Fr = frame_for_xi(xi)
    M = rc.frame_algebra(mp, mm, Fr)
    assert np.allclose(M, M.T, atol=1e-12)
    assert abs(np.trace(M)) < 1e-12
    assert np.allclose(M @ Fr[2], 0, atol=1e-12)
    # contractions with w1 +- i w2 give the inputs back
    for s, target in ((1, mp), (-1, mm)):
        r = Fr[0] + s * 1j * Fr[1]
        assert r @ M @ r == pytest.approx(target, abs=1e-11)


def test_frame_algebra_closed_form():
    # l11 = (m+ + m-)/4, so m+ = m- = 2 gives diag(1, -1, 0) and 4 doubles it
    M = rc.frame_algebra(2.0, 2.0, np.eye(3))
    assert np.array_equal(M, np.diag([1.0, -1.0, 0.0]).astype(complex))
    assert np.array_equal(rc.frame_algebra(4.0, 4.0, np.eye(3)), 2 * M)
    M = rc.frame_algebra(4j, -4j, np.eye(3))
    assert M[0, 1] == M[1, 0] == 2.0 and M[0, 0] == 0


def test_q_hat_at_zero_frequency():
    # coarse grid, large h: agreement with the integral of q to a few percent
    v = rc.estimate_q(np.zeros(3), 0.5, Z, Q)
    total = quadrature(Q.q, 1.0, G17)
    assert abs(v - total) < 0.05 * abs(total)


def test_xi_lattice():
    pts = rc.xi_lattice(np.pi, np.pi / 2)
    assert len(pts) == 33
    assert np.all(np.linalg.norm(pts, axis=1) <= np.pi + 1e-12)
    assert any(np.allclose(p, 0) for p in pts)


def test_lowpass_of_single_and_zero_samples():
    xis = rc.xi_lattice(1.0, 1.0)
    zero = rc.FourierSamples("q_hat", {rc._key(x): 0j for x in xis}, 0.25, xis, 1.0, 1.0)
    assert not np.any(rc.lowpass_invert(zero, 1.0, G17))
    ent = {rc._key(x): (1.0 + 0j if not np.any(x) else 0j) for x in xis}
    one = rc.FourierSamples("q_hat", ent, 0.25, xis, 1.0, 1.0)
    assert np.allclose(rc.lowpass_invert(one, 1.0, G17), 1.0 / (2 * np.pi) ** 3)
    part = rc.FourierSamples("q_hat", {rc._key(xis[0]): 1j}, 0.25, xis[:1], 1.0, 1.0)
    with pytest.raises(ValueError):
        rc.lowpass_invert(part, 1.0, G17)


def test_samples_reject_foreign_points():
    with pytest.raises(ValueError):
        rc.FourierSamples("q_hat", {(3.0, 0.0, 0.0): 0j}, 0.25, np.zeros((1, 3)), 1.0, 1.0)
    with pytest.raises(ValueError):
        rc.FourierSamples("nope", {}, 0.25, np.zeros((0, 3)), 1.0, 1.0)


def test_truth_lowpass_converges_to_field():
    g = build_grid(17)
    b = bump_scalar(g, [0, 0, 0], 0.7)
    errs = []
    for R in (4.0, 8.0):
        xis = rc.xi_lattice(R, np.pi / 2)
        s = rc.truth_samples(b, "q_hat", xis, g, R, np.pi / 2)
        errs.append(rc.relative_l2(rc.lowpass_invert(s, R, g), b, g))
    assert errs[1] < errs[0] < 1.0


def test_assemble_tensor_is_symmetric():
    A = rc.assemble_tensor(np.zeros((3, 3)), [1.0, 2.0, 0.0], 0.5, [0, 0, 1.0])
    assert np.allclose(A, A.T)
    assert A[0, 2] == pytest.approx(0.5j) and A[2, 2] == pytest.approx(0.5)


def _records(errs, t):
    return [rc.StabilityRecord(0.25, float(i), float(ti), {"q_l2": float(e)}) for i, (e, ti) in enumerate(zip(errs, t))]


def test_fit_stability_recovers_log_rate():
    t = np.logspace(-8, -2, 6)
    scale = t.max() * np.e
    e = 0.3 * np.abs(np.log(t / scale)) ** -0.5
    fit = rc.fit_stability(_records(e, t))
    assert fit["mu"] == pytest.approx(0.5, abs=0.05)
    assert fit["monotone"] and not fit["degenerate"]
    assert fit["residual"] < fit["power_residual"]


def test_fit_stability_constant_errors():
    t = np.logspace(-6, -2, 6)
    fit = rc.fit_stability(_records(np.full(6, 0.2), t))
    assert fit["degenerate"] and fit["monotone"]


def test_fit_stability_input_checks():
    with pytest.raises(ValueError):
        rc.fit_stability(_records(np.ones(4), np.logspace(-6, -2, 4)))
    with pytest.raises(ValueError):
        rc.fit_stability(_records(np.ones(6), np.linspace(1, 2, 6)))
    with pytest.raises(ValueError):
        rc.StabilityRecord(0.25, 0.0, -1.0, {})
    with pytest.raises(ValueError):
        rc.StabilityRecord(0.25, 0.0, 1.0, {"q_l2": float("nan")})
