"""Acceptance criteria, one test each.

Every test records a ``CRITERION k: PASS/FAIL - details`` line (printed in
the terminal summary) before asserting, so failures stay visible with the
numbers that caused them. Run directly with ``python tests/test_acceptance.py``.
"""

import hashlib
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, RECIPES, pair
from polyharm import bench, cgo, cli
from polyharm import reconstruct as rc
from polyharm.fields import CoefficientSet, bump_scalar, fourier_truth, make_coefficients
from polyharm.forward import adjoint_mismatch, interior_fields, smooth_random_trace
from polyharm.grid import SYM_INDEX, build_grid
from polyharm.hodge import decompose_tensor, sym_grad

HALF_PI = float(np.pi / 2)
XIS = [np.array(x) for x in [(0, 0, 2.0), (1.2, -0.8, 2.0), (2.5, 0.5, -1.0)]]
H_ORDER = [0.5, 0.35, 0.25, 0.18]


def record(k: int, ok: bool, details: str):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} - {details}"
    ACCEPTANCE[k] = line
    print(line)
    return ok


def random_tensor(g, seed=0, radius=0.8, power=4, kscale=1.5):
    """Random smooth symmetric tensor: plane waves under a compact C^3 window."""
    rng = np.random.default_rng(seed)
    x = g.coords
    r2 = np.sum(x**2, axis=0) / radius**2
    win = np.where(r2 < 1, (1 - np.minimum(r2, 1)) ** power, 0.0)
    A = np.zeros((6,) + g.shape)
    for c in range(6):
        for _ in range(3):
            k = kscale * rng.normal(size=3)
            A[c] += rng.normal() * np.cos(np.einsum("a,aijk->ijk", k, x) + rng.uniform(0, 2 * np.pi))
    return A * win


def test_criterion_1_hodge_exactness():
    t0 = time.perf_counter()
    dxs, divs, exact = [], [], []
    for N in (17, 25, 33):
        g = build_grid(N)
        A = random_tensor(g)
        H = decompose_tensor(A, g)
        back = H.A_prime + sym_grad(H.V, g)
        for c in (0, 3, 5):
            back[c] = back[c] + H.theta
        if N == 25:
            exact = [
                np.linalg.norm(back - A) / np.linalg.norm(A),
                H.residuals["trace_norm"] / np.max(np.abs(A)),
                float(np.max(np.abs(g.restrict(H.V)))),
            ]
        dxs.append(g.dx)
        divs.append(H.residuals["div_norm"])
    slope = np.polyfit(np.log(dxs), np.log(divs), 1)[0]
    elapsed = time.perf_counter() - t0
    ok = exact[0] < 1e-12 and exact[1] < 1e-12 and exact[2] == 0.0 and abs(slope - 2) <= 0.4 and elapsed < 120
    record(
        1,
        ok,
        f"reassembly {exact[0]:.1e}, trace {exact[1]:.1e}, max|V| on boundary {exact[2]:.1e}, "
        f"div slope {slope:.2f} (2 +- 0.4), {elapsed:.1f} s",
    )
    assert ok


def test_criterion_2_manufactured_hodge():
    d = np.array([1.0, -0.5, 0.3]) / np.linalg.norm([1.0, -0.5, 0.3])
    consts = []
    for N in (17, 25, 33):
        g = build_grid(N)
        V0 = d[:, None, None, None] * bump_scalar(g, [0, 0, 0], 0.7)
        H = decompose_tensor(sym_grad(V0, g), g)
        consts.append(rc.relative_l2(H.V, V0, g) / g.dx**2)
    ok = max(consts) <= 5.0
    record(2, ok, "err/dx^2 at N = 17, 25, 33: " + ", ".join(f"{c:.2f}" for c in consts) + " (bound 5)")
    assert ok


# [DERIVED] max over catalog kinds and the XIS set of residual/dx^2 on N = 17
TRANSPORT_C = 6.1


def test_criterion_3_cgo_transport():
    worst = 0.0
    for N in (17, 25, 33):
        g = build_grid(N)
        for xi in XIS:
            F = cgo.frame_for_xi(xi)
            res = cgo.catalog_residuals(xi, cgo.CgoDirection(F[0], F[1]), g)
            worst = max(worst, max(res.values()) / g.dx**2)
    g = build_grid(25)
    x = g.coords
    tinv = 0.0
    for xi in XIS:
        F = cgo.frame_for_xi(xi)
        d = cgo.CgoDirection(F[0], F[1])
        ph = np.exp(-1j * np.einsum("a,aijk->ijk", xi, x))
        for rad in (0.5, 0.75):
            f = bump_scalar(g, [0, 0, 0], rad) * ph
            for m in (1, 2, 3):
                tinv = max(tinv, cgo.transport_inverse(f, d, m, g).residual)
    ok = worst <= TRANSPORT_C and tinv <= 1e-3
    record(3, ok, f"max residual/dx^2 {worst:.2f} (C = {TRANSPORT_C}), transport_inverse residual {tinv:.1e} (1e-3)")
    assert ok


def _generic(m, g):
    b = lambda t, amp, c, r=0.5: {"center": c, "radius": r, "amplitude": amp, "target": t}
    if m == 2:
        rec = {"recipe": "isotropic-m2", "m": 2, "seed": 1, "bumps": [b("q", 1.0, [0.1, 0, 0]), b("B", 0.5, [0, 0.1, 0]), b("a", 0.3, [0, 0, 0])]}
    else:
        rec = {"recipe": "combined", "m": 3, "seed": 1, "bumps": [b("q", 1.0, [0.1, 0, 0]), b("B", 0.5, [0, 0.1, 0]), b("A", 0.3, [0, 0, 0], 0.45)]}
    return make_coefficients(rec, g)


def test_criterion_4_residual_order():
    g = build_grid(25)
    parts, ok = [], True
    for m in (2, 3):
        c = _generic(m, g)
        for i, xi in enumerate(XIS[:2]):
            F = cgo.frame_for_xi(xi)
            d = cgo.CgoDirection(F[0], F[1])
            a1 = cgo.amplitude("exp", xi, d, g)
            a2 = cgo.second_amplitude(a1, c, d).alpha
            s, _ = cgo.residual_order(c, d, a1, a2, H_ORDER)
            s0, _ = cgo.residual_order(CoefficientSet.zero(g, m), d, a1, 0 * a1, H_ORDER)
            # closed form only for the axis-aligned xi, where exp(-i x.xi) solves the
            # discrete transport equation exactly; the oblique value is informational
            ok &= s >= m + 1.5 and (i > 0 or abs(s0 - 2 * m) <= 1e-6)
            tag = "closed-form" if i == 0 else "oblique, info"
            parts.append(f"m={m} xi={tuple(float(v) for v in xi)} slope {s:.2f} (>= {m + 1.5}), zero-case |slope-{2 * m}| {abs(s0 - 2 * m):.0e} ({tag})")
    record(4, ok, "; ".join(parts))
    assert ok


def test_criterion_5_master_identity():
    g = build_grid(25)
    parts, ok = [], True
    t0 = time.perf_counter()
    for name, tol in (("q-only", 1e-2), ("B-only", 1e-2), ("A-divfree", 3e-2), ("A-potential", 3e-2), ("isotropic-m2", 3e-2)):
        c1, c2 = pair(name, g)
        disc = [
            rc.master_identity(c1, c2, smooth_random_trace(g, c2.m, 2 * s), smooth_random_trace(g, c2.m, 2 * s + 1))["discrepancy"]
            for s in range(3)
        ]
        ok &= max(disc) <= tol
        parts.append(f"{name} max {max(disc):.2e} (<= {tol:.0e})")
    elapsed = time.perf_counter() - t0
    record(5, ok, "; ".join(parts) + f"; {elapsed:.0f} s total")
    assert ok


def _stage_setup(name, g):
    c1, c2 = pair(name, g)
    if name == "q-only":
        return {"q_hat": (lambda xi, h: rc.estimate_q(xi, h, c1, c2), lambda xi: fourier_truth(c2.q, xi, g))}
    if name == "B-only":
        return {"B_hat": (lambda xi, h: rc.estimate_B(xi, h, c1, c2), lambda xi: fourier_truth(c2.B, xi, g))}
    if name == "A-divfree":
        return {
            "A_prime_hat": (
                lambda xi, h: rc.estimate_A_prime(xi, h, c1, c2),
                lambda xi: fourier_truth(c2.A, xi, g)[SYM_INDEX],
            )
        }
    if name == "isotropic-m2":
        return {"a_hat": (lambda xi, h: rc.estimate_a_isotropic(xi, h, c1, c2), lambda xi: fourier_truth(c2.a, xi, g))}
    H = decompose_tensor(c2.A, g)
    # the isotropic stage runs after V; feed it the exact potential part
    known = CoefficientSet(g, sym_grad(H.V, g), np.zeros((3,) + g.shape), np.zeros(g.shape), 3, isotropic=False)
    return {
        "V_hat": (lambda xi, h: rc.estimate_V(xi, h, c1, c2), lambda xi: fourier_truth(H.V, xi, g)),
        "thetaA_hat": (lambda xi, h: rc.estimate_thetaA(xi, h, c1, c2, known=known), lambda xi: fourier_truth(H.theta, xi, g)),
    }


def test_criterion_6_estimator_convergence():
    g = build_grid(25)
    parts, ok = [], True
    for name in ("q-only", "B-only", "A-divfree", "A-potential", "isotropic-m2"):
        for label, (est, truth) in _stage_setup(name, g).items():
            errs = []
            for h in (0.5, 0.25):
                errs.append(np.sqrt(sum(np.linalg.norm(np.asarray(est(xi, h)) - truth(xi)) ** 2 for xi in XIS)))
            ratio = errs[0] / errs[1]
            good = 1.4 <= ratio <= 3.0
            ok &= good
            parts.append(f"{label} {ratio:.2f}{'' if good else '*'}")
    record(6, ok, "error ratio h=0.5/h=0.25 in [1.4, 3.0]: " + ", ".join(parts) + " (* out of range)")
    assert ok


def test_criterion_7_frame_algebra():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        xi = rng.normal(size=3)
        F = cgo.frame_for_xi(xi)
        mp, mm = rng.normal(size=2) + 1j * rng.normal(size=2)
        lam = np.zeros((3, 3), dtype=complex)
        lam[0, 0], lam[1, 1] = (mp + mm) / 4, -(mp + mm) / 4
        lam[0, 1] = lam[1, 0] = (mp - mm) / 4j
        worst = max(worst, np.max(np.abs(F @ rc.frame_algebra(mp, mm, F) @ F.T - lam)))
    worst = max(worst, np.max(np.abs(rc.frame_algebra(2.0, 2.0, np.eye(3)) - np.diag([1, -1, 0]))))
    ok = worst <= 1e-12
    record(7, ok, f"max deviation from closed-form frame matrix {worst:.1e} (1e-12)")
    assert ok


def _config(**kw):
    doc = {
        "recipe": RECIPES["q-only"],
        "m": 3,
        "grid": {"N": 25, "L": 1.0},
        "h_list": [0.25],
        "xi_lattice": {"R": 4.0, "delta": HALF_PI},
        "seed": 0,
        "pipeline": ["q"],
    }
    doc.update(kw)
    return bench.ExperimentConfig.from_dict(doc)


def test_criterion_8_end_to_end():
    errs, tails = {}, {}
    for R in (4.0, 6.0):
        for h in (0.25, 0.18):
            cfg = _config(h_list=[h], xi_lattice={"R": R, "delta": HALF_PI})
            c1, c2 = bench.build_pair(cfg)
            res = bench.run_pipeline(cfg, c1, c2, h, None, bench.workers())
            errs[h, R] = res["errors"]["q_l2"]
            g = cfg.grid
            ts = rc.truth_samples(c2.q, "q_hat", res["xis"], g, R, HALF_PI)
            tails[R] = rc.relative_l2(rc.lowpass_invert(ts, R, g), c2.q, g)
    bound = errs[0.18, 6.0] <= 1.25 * tails[6.0]
    # refining either parameter must not increase the error
    mono = all(
        errs[a] >= errs[b]
        for a, b in [((0.25, 4.0), (0.18, 4.0)), ((0.25, 6.0), (0.18, 6.0)), ((0.25, 4.0), (0.25, 6.0)), ((0.18, 4.0), (0.18, 6.0))]
    )
    ok = bound and mono
    table = ", ".join(f"(h={h}, R={R:g}) {e:.4f}" for (h, R), e in sorted(errs.items(), key=lambda kv: (kv[0][1], -kv[0][0])))
    record(
        8,
        ok,
        f"R=6 h=0.18 error {errs[0.18, 6.0]:.4f} vs tail {tails[6.0]:.4f} (ratio {errs[0.18, 6.0] / tails[6.0]:.3f}, <= 1.25); "
        f"errors {table}; monotone {mono}",
    )
    assert ok


def test_criterion_9_stability_sweep(tmp_path):
    cfg = _config(noise={"levels": [0.0, 0.01, 0.03, 0.1, 0.3, 1.0]})
    records, fit = bench.stability_sweep(cfg, tmp_path)
    band = rc.fit_stability(records, "q_band_l2")
    t = [r.dtn_norm_proxy for r in records]
    ok = (
        "mu" in fit
        and fit["proxy_increasing"]
        and fit["monotone"]
        and not fit["degenerate"]
        and np.isfinite(fit["mu"])
        and fit["mu"] > 1e-3
        and fit["residual"] < fit["power_residual"]
    )
    record(
        9,
        ok,
        f"proxy {t[0]:.2e}..{t[-1]:.2e} increasing {fit.get('proxy_increasing')}; q_l2 monotone {fit.get('monotone')}, "
        f"mu {fit.get('mu', float('nan')):.2e}, log residual {fit.get('residual', float('nan')):.2e} vs power "
        f"{fit.get('power_residual', float('nan')):.2e}; band-limited error (informational) mu {band['mu']:.2f}, "
        f"log {band['residual']:.2e} vs power {band['power_residual']:.2e}",
    )
    assert ok


def _tree(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.iterdir())}


def test_criterion_10_determinism_and_adjoint(tmp_path, capsys):
    cfg = _config(grid={"N": 17, "L": 1.0}, xi_lattice={"R": HALF_PI, "delta": HALF_PI}, seed=5)
    bench.run_scenario(cfg, tmp_path / "a")
    bench.run_scenario(cfg, tmp_path / "b")
    same = _tree(tmp_path / "a") == _tree(tmp_path / "b")
    cpath = tmp_path / "cfg.json"
    cpath.write_text(json.dumps({"recipe": RECIPES["B-only"], "m": 3, "grid": {"N": 17}, "seed": 2, "pipeline": ["B"]}))
    for d in ("f1", "f2"):
        assert cli.main(["forward", "--config", str(cpath), "--out", str(tmp_path / d)]) == 0
    capsys.readouterr()
    same &= _tree(tmp_path / "f1") == _tree(tmp_path / "f2")
    g = build_grid(25)
    worst = 0.0
    for name in RECIPES:
        _, c = pair(name, g)
        w, v = interior_fields(g, 2 * c.m, seed=1)
        worst = max(worst, adjoint_mismatch(c, w, v))
    ok = same and worst <= 1e-12
    record(10, ok, f"byte-identical reruns {same}; max interior adjoint mismatch {worst:.1e} (1e-12)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
