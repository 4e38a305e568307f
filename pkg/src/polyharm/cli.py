"""Command line entry point ``polyharm``.

Every subcommand takes ``--config <json>`` and ``--out <dir>``. Exit codes:
0 success, 2 configuration error, 3 solver or stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import bench, cgo
from .bench import Bundle, ConfigError, StageError
from .cgo import DynamicRangeError
from .forward import Noise, adjoint_mismatch, dtn_norm, interior_fields, neumann_trace, smooth_random_trace, solve_navier
from .grid import read_field
from .hodge import decompose_tensor, decompose_vector
from .linalg import SolverError
from .reconstruct import master_identity

RESIDUAL_H = (0.5, 0.35, 0.25, 0.18)


def cmd_forward(cfg, out):
    _, c2 = bench.build_pair(cfg)
    g = cfg.grid
    f = smooth_random_trace(g, cfg.m, cfg.trace_seed, cfg.trace_waves)
    sol = solve_navier(c2, f)
    nt = neumann_trace(sol)
    b = Bundle(out)
    b.write_field("solution_u", sol.u, g, "u")
    b.write_field("navier_trace", f.data, g, "navier_boundary")
    b.write_field("neumann_trace", nt.data, g, "neumann_boundary")
    w, v = interior_fields(g, 2 * cfg.m, cfg.seed)
    doc = {"diagnostics": sol.diagnostics, "adjoint_mismatch": adjoint_mismatch(c2, w, v)}
    b.write_json("forward.json", doc)
    b.manifest(cfg)
    return doc


def cmd_dtn(cfg, out):
    c1, c2 = bench.build_pair(cfg)
    g = cfg.grid
    noise = Noise(cfg.noise_level, cfg.seed) if cfg.noise_level > 0 else None
    norm = dtn_norm(c1, c2, cfg.dtn_mode, cfg.per_axis, seed=cfg.seed, noise=noise)
    f = smooth_random_trace(g, cfg.m, cfg.trace_seed, cfg.trace_waves)
    fs = smooth_random_trace(g, cfg.m, cfg.trace_seed + 1, cfg.trace_waves)
    mi = master_identity(c1, c2, f, fs)
    doc = {
        "dtn_norm": norm,
        "mode": cfg.dtn_mode,
        "per_axis": cfg.per_axis,
        "noise_level": cfg.noise_level,
        "master_identity": {k: complex(v) if isinstance(v, complex) else float(v) for k, v in mi.items()},
    }
    b = Bundle(out)
    b.write_json("dtn.json", doc)
    b.manifest(cfg)
    return doc


def _hodge_input(cfg):
    if cfg.field is not None:
        try:
            values, g, _ = read_field(cfg.field)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read field dump {cfg.field}: {exc}") from exc
        comps = values.shape[0] if values.ndim == 4 else 1
        if comps == 6:
            return g, values, None
        if comps == 3:
            return g, None, values
        raise ConfigError("hodge needs a 6-component tensor or 3-component vector dump")
    _, c2 = bench.build_pair(cfg)
    return cfg.grid, (c2.A.copy() if np.any(c2.A) else None), (c2.B.copy() if np.any(c2.B) else None)


def cmd_hodge(cfg, out):
    g, A, X = _hodge_input(cfg)
    b = Bundle(out)
    if A is not None:
        hd = decompose_tensor(A, g)
        b.write_field("A_prime", hd.A_prime, g, "A_prime")
        b.write_field("V", hd.V, g, "V")
        b.write_field("theta", hd.theta, g, "theta")
        doc = {"kind": "tensor", "residuals": hd.residuals}
    elif X is not None:
        hd = decompose_vector(X, g)
        b.write_field("X_prime", hd.X_prime, g, "X_prime")
        b.write_field("theta", hd.theta, g, "theta")
        doc = {"kind": "vector", "residuals": hd.residuals}
    else:
        raise ConfigError("hodge needs a target recipe with A or B")
    b.write_json("hodge.json", doc)
    b.manifest(cfg)
    return doc


def cmd_cgo_verify(cfg, out):
    _, c2 = bench.build_pair(cfg)
    g = cfg.grid
    xi = np.asarray(cfg.xi, dtype=float)
    if not np.any(xi):
        raise ConfigError("cgo-verify needs a nonzero xi")
    F = cgo.frame_for_xi(xi)
    d = cgo.CgoDirection(F[0], F[1])
    hs = cfg.h_list if len(cfg.h_list) >= 4 else list(RESIDUAL_H)
    a1 = cgo.amplitude("exp", xi, d, g)
    tr = cgo.second_amplitude(a1, c2, d)
    slope, norms = cgo.residual_order(c2, d, a1, tr.alpha, hs)
    doc = {
        "xi": xi.tolist(),
        "catalog_residuals": cgo.catalog_residuals(xi, d, g),
        "second_amplitude": {"residual": tr.residual, "singular_modes": tr.singular_modes},
        "residual_order": {"h": list(hs), "norms": norms.tolist(), "slope": slope, "target": c2.m + 1.5},
    }
    b = Bundle(out)
    b.write_json("cgo.json", doc)
    b.manifest(cfg)
    return doc


def cmd_reconstruct(cfg, out):
    return bench.run_scenario(cfg, out)


def cmd_sweep(cfg, out):
    _, fit = bench.stability_sweep(cfg, out)
    return fit


COMMANDS = {
    "forward": cmd_forward,
    "dtn": cmd_dtn,
    "hodge": cmd_hodge,
    "cgo-verify": cmd_cgo_verify,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyharm", description="Polyharmonic inverse-problem experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = bench.load_config(args.config)
        result = COMMANDS[args.command](cfg, args.out)
    except StageError as exc:
        print(f"polyharm: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(f"polyharm: diagnostics {json.dumps(exc.diagnostics, default=str)}", file=sys.stderr)
        return 3
    except (SolverError, DynamicRangeError, np.linalg.LinAlgError) as exc:
        print(f"polyharm: solver failure: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"polyharm: config error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, default=bench.to_jsonable, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
