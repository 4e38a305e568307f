"""Configuration-driven experiment runner.

A run reads one JSON document, builds the coefficient pair, executes the
reconstruction stages in dependency order and writes every artifact through
a write-then-rename so that a crashed run never leaves half a file. The
manifest lists each output with its SHA-256, the config hash and library
versions; it holds no timestamps, so a fixed seed gives byte-identical
output directories.

Config keys
-----------
``recipes``
    ``[background, target]``; ``background`` may be ``null`` for the zero
    operator. ``recipe`` is accepted as a shorthand for ``[null, recipe]``.
``m``, ``grid`` (``{N, L}``), ``h_list``, ``xi_lattice`` (``{R, delta}``),
``noise`` (``{kind, level, levels}``), ``seed``, ``pipeline``, ``dtn``
(``{mode, per_axis}``), ``trace`` (``{seed, waves}``) and ``xi`` (the
frequency used by ``cgo-verify``), ``sweep`` (``{error_key}``, the error
column fitted by ``stability_sweep``; default ``<last stage>_l2``) and
``field`` (a field dump for ``hodge``; otherwise the target's ``A`` or ``B``).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import platform
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import reconstruct as rc
from .fields import CoefficientSet, RecipeError, fourier_truth, make_coefficients
from .forward import Noise, dtn_norm
from .grid import GridSpec, build_grid, quadrature, write_field
from .hodge import decompose_tensor, sym_grad

log = logging.getLogger("polyharm")

NOISE_KIND = "multiplicative-gaussian-on-neumann"
# execution order; corrections flow from earlier stages to later ones
STAGES = ("A_prime", "V", "B", "thetaA", "a", "q")
STAGE_KIND = {
    "A_prime": "A_prime_matrix",
    "V": "V_hat",
    "B": "B_hat",
    "thetaA": "thetaA",
    "a": "a_iso",
    "q": "q_hat",
}
_NEEDS_M3 = {"A_prime", "V", "thetaA"}
H_RANGE = (0.15, 0.5)


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed (CLI exit code 3)."""

    def __init__(self, stage: str, cause: Exception, diagnostics: dict | None = None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.diagnostics = diagnostics or {}


@dataclass
class ExperimentConfig:
    recipes: list
    m: int = 3
    N: int = 25
    L: float = 1.0
    h_list: list = field(default_factory=lambda: [0.25])
    R: float = 4.0
    delta: float = float(np.pi / 2)
    noise_level: float = 0.0
    noise_levels: list = field(default_factory=list)
    seed: int = 0
    pipeline: list = field(default_factory=lambda: ["q"])
    dtn_mode: str = "l2"
    per_axis: int = 5
    trace_seed: int = 0
    trace_waves: int = 4
    xi: list = field(default_factory=lambda: [0.0, 0.0, 2.0])
    error_key: str | None = None
    field: str | None = None
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if "recipes" not in doc and "recipe" not in doc and "field" in doc:
            doc = dict(doc, recipes=[None, None])
        if "recipes" in doc:
            recipes = doc["recipes"]
            if not isinstance(recipes, list) or len(recipes) != 2:
                raise ConfigError("recipes must be a [background, target] pair")
        elif "recipe" in doc:
            recipes = [None, doc["recipe"]]
        else:
            raise ConfigError("config needs 'recipes' or 'recipe'")
        grid = doc.get("grid", {})
        lat = doc.get("xi_lattice", {})
        noise = doc.get("noise", {})
        dtn = doc.get("dtn", {})
        trace = doc.get("trace", {})
        try:
            cfg = cls(
                recipes=list(recipes),
                m=int(doc.get("m", 3)),
                N=int(grid.get("N", 25)),
                L=float(grid.get("L", 1.0)),
                h_list=[float(h) for h in doc.get("h_list", [doc.get("h", 0.25)])],
                R=float(lat.get("R", 4.0)),
                delta=float(lat.get("delta", np.pi / 2)),
                noise_level=float(noise.get("level", 0.0)),
                noise_levels=[float(v) for v in noise.get("levels", [])],
                seed=int(doc.get("seed", 0)),
                pipeline=list(doc.get("pipeline", ["q"])),
                dtn_mode=str(dtn.get("mode", "l2")),
                per_axis=int(dtn.get("per_axis", 5)),
                trace_seed=int(trace.get("seed", doc.get("seed", 0))),
                trace_waves=int(trace.get("waves", 4)),
                xi=[float(v) for v in doc.get("xi", [0.0, 0.0, 2.0])],
                error_key=doc.get("sweep", {}).get("error_key"),
                field=doc.get("field"),
                output_dir=doc.get("output_dir"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if noise.get("kind", NOISE_KIND) != NOISE_KIND:
            raise ConfigError(f"unsupported noise kind {noise.get('kind')!r}")
        cfg.validate()
        return cfg

    def validate(self):
        lo, hi = H_RANGE
        if not self.h_list or any(not lo <= h <= hi for h in self.h_list):
            raise ConfigError(f"h_list must be nonempty and within [{lo}, {hi}]")
        if self.noise_level < 0 or any(v < 0 for v in self.noise_levels):
            raise ConfigError("noise levels must be nonnegative")
        if self.R <= 0 or self.delta <= 0:
            raise ConfigError("xi_lattice needs positive R and delta")
        unknown = [s for s in self.pipeline if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown pipeline stages {unknown}")
        if self.m == 2 and _NEEDS_M3.intersection(self.pipeline):
            raise ConfigError("stages A_prime, V and thetaA need m > 2")
        if self.m > 2 and "a" in self.pipeline:
            raise ConfigError("stage 'a' needs m = 2")
        if len(self.xi) != 3:
            raise ConfigError("xi must have three components")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @property
    def grid(self) -> GridSpec:
        return build_grid(self.N, self.L)

    def stages(self) -> list:
        return [s for s in STAGES if s in self.pipeline]


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


def build_pair(cfg: ExperimentConfig) -> tuple[CoefficientSet, CoefficientSet]:
    """Background and target coefficient sets; recipe problems become ``ConfigError``."""
    g = cfg.grid
    out = []
    if cfg.recipes[1] is None:
        raise ConfigError("a target recipe is required")
    for rec in cfg.recipes:
        if rec is None:
            out.append(CoefficientSet.zero(g, cfg.m))
            continue
        rec = dict(rec, m=cfg.m)
        try:
            out.append(make_coefficients(rec, g))
        except (RecipeError, ValueError) as exc:
            raise ConfigError(f"recipe rejected: {exc}") from exc
    return out[0], out[1]


def workers() -> int:
    try:
        return max(1, int(os.environ.get("POLYHARM_WORKERS", "1")))
    except ValueError:
        raise ConfigError("POLYHARM_WORKERS must be an integer") from None


# --------------------------------------------------------------------------
# output


class Bundle:
    """Output directory with atomic writes and a content manifest."""

    def __init__(self, out: str | Path):
        self.root = Path(out)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def _commit(self, name: str, data: bytes):
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.root / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.files[name] = hashlib.sha256(data).hexdigest()

    def write_bytes(self, name: str, data: bytes):
        self._commit(name, data)

    def write_text(self, name: str, text: str):
        self._commit(name, text.encode())

    def write_json(self, name: str, doc):
        self.write_text(name, json.dumps(doc, indent=2, sort_keys=True, default=to_jsonable) + "\n")

    def write_csv(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.write_text(name, buf.getvalue())

    def write_field(self, stem: str, values, grid: GridSpec, kind: str):
        # write_field is not atomic itself; stage in a scratch dir and move
        with tempfile.TemporaryDirectory(dir=self.root, prefix=".tmp-") as d:
            paths = write_field(Path(d) / stem, values, grid, kind)
            for p in paths:
                self._commit(p.name, p.read_bytes())

    def manifest(self, cfg: ExperimentConfig | None, extra: dict | None = None):
        doc = {
            "config": cfg.to_dict() if cfg is not None else None,
            "config_hash": cfg.hash() if cfg is not None else None,
            "versions": versions(),
            "files": dict(sorted(self.files.items())),
        }
        if extra:
            doc.update(extra)
        # the manifest is not listed in itself
        data = (json.dumps(doc, indent=2, sort_keys=True, default=to_jsonable) + "\n").encode()
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, self.root / "manifest.json")
        return doc


def versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"polyharm": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def to_jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _fmt(v: float) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------
# pipeline


def true_components(delta: CoefficientSet) -> dict:
    """Ground-truth fields for every stage, from the coefficient difference."""
    out = {"q": delta.q, "B": delta.B, "a": delta.a}
    if np.any(delta.A) and not delta.isotropic:
        hd = decompose_tensor(delta.A.copy(), delta.grid)
        out.update(A_prime=hd.A_prime, V=hd.V, thetaA=hd.theta)
    else:
        z = np.zeros(delta.grid.shape, dtype=complex)
        out.update(A_prime=np.zeros_like(delta.A), V=np.zeros_like(delta.B), thetaA=delta.a if np.any(delta.A) else z)
    return out


def _known(grid: GridSpec, m: int, fields: dict) -> CoefficientSet:
    A = np.zeros((6,) + grid.shape, dtype=complex)
    if "A_prime" in fields:
        A += fields["A_prime"]
    if "V" in fields:
        A += sym_grad(fields["V"], grid)
    iso = fields.get("thetaA", fields.get("a"))
    if iso is not None:
        for c in (0, 3, 5):
            A[c] += iso
    B = fields.get("B", np.zeros((3,) + grid.shape, dtype=complex))
    z = np.zeros(grid.shape, dtype=complex)
    return CoefficientSet(grid, A, B, z, m, isotropic=m == 2)


def _estimator(stage: str, h: float, c1, c2, known, noise):
    def at(xi):
        xi = np.asarray(xi, dtype=float)
        origin = not np.any(xi)
        if stage == "A_prime":
            # a compactly supported divergence-free tensor has zero mean
            return np.zeros((3, 3), complex) if origin else rc.estimate_A_prime(xi, h, c1, c2, known, noise)
        if stage in ("V", "B"):
            if origin:
                return rc.estimate_vector_origin(stage, h, c1, c2, known, noise)
            fn = rc.estimate_V if stage == "V" else rc.estimate_B
            return fn(xi, h, c1, c2, known, noise)
        if stage == "thetaA":
            return rc.estimate_thetaA(xi, h, c1, c2, known, noise)
        if stage == "a":
            return rc.estimate_a_isotropic(xi, h, c1, c2, known, noise)
        return rc.estimate_q(xi, h, c1, c2, known, noise)

    return at


def _diag_rows(stage, samples: rc.FourierSamples, truth_vals: np.ndarray, xis: np.ndarray):
    rows = []
    kind = STAGE_KIND[stage]
    for xi, tv in zip(xis, truth_vals):
        est = np.asarray(samples.value(xi), dtype=complex).ravel()
        tv = np.asarray(tv, dtype=complex).ravel()
        xs = ";".join(_fmt(v) for v in xi)
        for c, (e, t) in enumerate(zip(est, tv)):
            name = kind if est.size == 1 else f"{kind}[{c}]"
            rows.append([name, xs, _fmt(e.real), _fmt(e.imag), _fmt(t.real), _fmt(t.imag), _fmt(abs(e - t))])
    return rows


def _truth_hat(stage: str, values: np.ndarray, xis: np.ndarray, grid: GridSpec) -> np.ndarray:
    vals = fourier_truth(values, xis, grid)
    if stage == "A_prime":
        from .grid import SYM_INDEX

        vals = vals[:, SYM_INDEX]
    return vals


def _error(rec, ref, g) -> float:
    if np.any(ref):
        return rc.relative_l2(rec, ref, g)
    return float(np.sqrt(max(quadrature(rec, rec, g).real, 0.0)))


def run_pipeline(cfg: ExperimentConfig, c1, c2, h: float, noise: Noise | None, n_workers: int = 1) -> dict:
    """Run every configured stage at one ``h``.

    Returns
    -------
    dict
        ``samples`` and ``fields`` per stage, ``truth`` fields, the lattice
        ``xis`` and ``errors`` per stage: relative L2 and max-norm against
        the truth, and relative L2 against the truth truncated to the same
        frequency ball (``<stage>_band_l2``).
    """
    g = cfg.grid
    xis = rc.xi_lattice(cfg.R, cfg.delta)
    truth = true_components(c2 - c1)
    fields, samples, errors = {}, {}, {}
    for stage in cfg.stages():
        log.info("stage %s at h = %g over %d frequencies", stage, h, len(xis))
        known = _known(g, cfg.m, fields) if fields else None
        try:
            S = rc.sample_lattice(
                _estimator(stage, h, c1, c2, known, noise), xis, STAGE_KIND[stage], h, cfg.R, cfg.delta, n_workers
            )
            rec = rc.lowpass_invert(S, cfg.R, g)
        except Exception as exc:  # abort with the stage name
            raise StageError(stage, exc, {"h": h, "known": sorted(fields)}) from exc
        samples[stage] = S
        fields[stage] = rec
        t = truth[stage]
        # relative errors, absolute L2 when the reference vanishes
        errors[f"{stage}_l2"] = _error(rec, t, g)
        errors[f"{stage}_linf"] = float(np.max(np.abs(rec - t)))
        # against the truth truncated to the same ball: the data-dependent part
        band = rc.lowpass_invert(rc.truth_samples(t, STAGE_KIND[stage], xis, g, cfg.R, cfg.delta), cfg.R, g)
        errors[f"{stage}_band_l2"] = _error(rec, band, g)
    return {"samples": samples, "fields": fields, "truth": truth, "xis": xis, "errors": errors}


def _noise(cfg: ExperimentConfig, level: float) -> Noise | None:
    return Noise(level, cfg.seed) if level > 0 else None


def _tag(h: float) -> str:
    return f"h{h:.4f}".replace(".", "p")


def run_scenario(cfg: ExperimentConfig, out: str | Path) -> dict:
    """Execute the pipeline for every ``h`` and write the artifact bundle.

    Writes ``samples_<stage>_<h>.json``, ``field_<stage>_<h>.bin/.json``,
    ``diagnostics.csv``, ``errors.json`` and ``manifest.json``.
    """
    c1, c2 = build_pair(cfg)
    bundle = Bundle(out)
    g = cfg.grid
    rows, summary = [], {}
    for h in cfg.h_list:
        res = run_pipeline(cfg, c1, c2, h, _noise(cfg, cfg.noise_level), workers())
        tag = _tag(h)
        for stage, S in res["samples"].items():
            bundle.write_json(f"samples_{stage}_{tag}.json", S.to_json())
            bundle.write_field(f"field_{stage}_{tag}", res["fields"][stage], g, stage)
            truth_hat = _truth_hat(stage, res["truth"][stage], res["xis"], g)
            for r in _diag_rows(stage, S, truth_hat, res["xis"]):
                rows.append([_fmt(h)] + r)
        summary[tag] = {"h": h, "errors": res["errors"]}
    bundle.write_csv("diagnostics.csv", ["h", "kind", "xi", "re", "im", "truth_re", "truth_im", "abs_err"], rows)
    bundle.write_json("errors.json", summary)
    bundle.manifest(cfg)
    return summary


# --------------------------------------------------------------------------
# stability sweep


def _sweep_point(cfg, c1, c2, level, lattice_workers):
    noise = _noise(cfg, level)
    proxy = dtn_norm(c1, c2, cfg.dtn_mode, cfg.per_axis, seed=cfg.seed, noise=noise)
    h = cfg.h_list[0]
    res = run_pipeline(cfg, c1, c2, h, noise, lattice_workers)
    return rc.StabilityRecord(h, level, proxy, res["errors"])


def gnuplot_script(csv_name: str, error_key: str, column: int, fit: dict | None) -> str:
    """Plot script for the sweep CSV; ``column`` is the 1-based column of ``error_key``."""
    lines = [
        "set terminal pngcairo size 800,600",
        "set output 'sweep.png'",
        "set datafile separator ','",
        "set logscale x",
        "set xlabel 'DtN difference proxy'",
        f"set ylabel '{error_key}'",
        "set key top left",
    ]
    plot = f"plot '{csv_name}' using 3:{column} every ::1 with linespoints title 'measured'"
    if fit is not None and np.isfinite(fit.get("mu", np.nan)):
        s = fit["t_scale"]
        lines += [
            f"c = {fit['c']!r}; c2 = {fit['c_sqrt']!r}; mu = {fit['mu']!r}; s = {s!r}",
            f"pc = {fit['power_c']!r}; pk = {fit['power_k']!r}",
            "logfit(t) = c*abs(log(t/s))**(-mu) + c2*sqrt(t/s)",
            "powfit(t) = pc*(t/s)**pk",
        ]
        plot += ", logfit(x) title 'log-type fit', powfit(x) title 'power-law fit'"
    lines.append(plot)
    return "\n".join(lines) + "\n"


def stability_sweep(cfg: ExperimentConfig, out: str | Path, error_key: str | None = None) -> tuple[list, dict]:
    """Reconstruct at each noise level and fit the log-type stability model.

    The first ``h`` of the config is used. Points run concurrently up to
    ``POLYHARM_WORKERS``; each point's record is written atomically as it
    completes.

    Returns
    -------
    records : list of StabilityRecord
    fit : dict
        Output of ``fit_stability`` (or ``{"error": ...}`` when the spread
        is degenerate).
    """
    levels = sorted(cfg.noise_levels)
    if len(levels) < 5:
        raise ConfigError("a sweep needs at least five noise levels")
    c1, c2 = build_pair(cfg)
    bundle = Bundle(out)
    key = error_key or cfg.error_key or f"{cfg.stages()[-1]}_l2"
    n = workers()
    point_workers = min(n, len(levels))
    lattice_workers = max(1, n // point_workers)

    def run(i_level):
        i, level = i_level
        rec = _sweep_point(cfg, c1, c2, level, lattice_workers)
        bundle.write_json(f"point_{i:02d}.json", asdict(rec))
        return rec

    if point_workers > 1:
        with ThreadPoolExecutor(point_workers) as ex:
            records = list(ex.map(run, enumerate(levels)))
    else:
        records = [run(x) for x in enumerate(levels)]
    err_names = sorted(records[0].errors)
    rows = [[_fmt(r.h), _fmt(r.noise_level), _fmt(r.dtn_norm_proxy)] + [_fmt(r.errors[k]) for k in err_names] for r in records]
    bundle.write_csv("sweep.csv", ["h", "noise_level", "dtn_norm_proxy"] + err_names, rows)
    try:
        fit = rc.fit_stability(records, key)
    except ValueError as exc:
        fit = {"error": str(exc)}
    fit["error_key"] = key
    fit["proxy_increasing"] = bool(all(b.dtn_norm_proxy > a.dtn_norm_proxy for a, b in zip(records, records[1:])))
    bundle.write_json("fit.json", fit)
    col = 4 + err_names.index(key) if key in err_names else 4
    bundle.write_text("sweep.gp", gnuplot_script("sweep.csv", key, col, fit if "mu" in fit else None))
    bundle.manifest(cfg)
    return records, fit
