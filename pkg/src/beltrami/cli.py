"""Command-line runs: ``beltrami <command> CONFIG.json --out RUN_DIR``.

Every run writes into RUN_DIR

  config.json    the validated config with defaults filled in and paths made
                 absolute (re-running it reproduces the outputs)
  result.json    deterministic results (sorted keys, no timings)
  timings.json   wall-clock seconds per stage
  manifest.json  output files with their SHA-256 (timings excluded)

plus command-specific grid files and plot-ready CSV.

Exit codes: 0 ok, 1 other library error, 2 input or validation error,
3 infeasible, 4 route not established, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import jsonschema
import numpy as np

from . import conditions as cond
from . import conformal as conf
from . import fields as fl
from . import modulus as mod
from . import solver as sv
from .errors import BeltramiError, InfeasibleError, InputError, NumericFailure, RouteNotEstablished

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_ROUTE = 4
EXIT_NUMERIC = 5

# ---------------------------------------------------------------------------
# schemas
# ---------------------------------------------------------------------------

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

_GRID = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["disk", "square", "annulus"], "default": "disk"},
        "n": {"type": "integer", "minimum": 8, "default": 256},
        "radius": {"type": "number", "exclusiveMinimum": 0, "default": 1.0},
        "inner": {"type": "number", "minimum": 0, "default": 0.0},
        "center": {**_POINT, "default": [0.0, 0.0]},
    },
    "default": {},
}

_MU = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "profile": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["power", "log-degenerate", "exp-degenerate", "custom-table"]},
                "params": {"type": "object", "default": {}},
                "r_min": {"type": "number", "exclusiveMinimum": 0, "default": 1e-8},
            },
        },
        "constant": _POINT,
        "grid_file": {"type": "string"},
        "degeneracy_threshold": {"type": "number", "exclusiveMinimum": 1, "default": fl.DEFAULT_DEGENERACY_THRESHOLD},
    },
    "oneOf": [{"required": ["profile"]}, {"required": ["constant"]}, {"required": ["grid_file"]}],
}

_PHI_SPEC = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {"kind": {"enum": ["exp", "power", "log-composite", "table"]},
                   "params": {"type": "object", "default": {}}},
}

_REPORT = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "eps0": {"type": ["number", "null"], "default": None},
        "exclusion_cells": {"type": "number", "exclusiveMinimum": 0, "default": 2.0},
        "disc_min_cells": {"type": "number", "exclusiveMinimum": 0, "default": 3.0},
        "circle_min_cells": {"type": "number", "exclusiveMinimum": 0, "default": 2.0},
        "margin": {"type": "number", "minimum": 0, "default": 0.1},
        "divergence_threshold": {"type": "number", "exclusiveMinimum": 0, "default": 10.0},
        "phi": {**_PHI_SPEC, "default": {"kind": "exp", "params": {"alpha": 1.0}}},
        "psi_depths": {"type": "array", "items": {"type": "integer", "minimum": 0}, "default": [0, 1]},
        "dominator_file": {"type": ["string", "null"], "default": None},
    },
    "default": {},
}

_SOLVER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "resolution": {"type": ["integer", "null"], "minimum": 64, "default": None},
        "truncation_levels": {"type": "array", "items": {"type": "number", "minimum": 1}, "default": []},
        "normalization": {"type": "array", "items": _POINT, "minItems": 2, "maxItems": 2,
                          "default": [[0.0, 0.0], [1.0, 0.0]]},
        "regularization_weight": {"type": "number", "minimum": 0, "default": 0.0},
        "max_residual": {"type": "number", "exclusiveMinimum": 0, "default": 1e-2},
        "exterior_terms": {"type": "integer", "minimum": 4, "default": 64},
        "rotation_average": {"type": "boolean", "default": True},
    },
    "default": {},
}

_POINTS = {"type": "array", "items": _POINT, "minItems": 1}

SCHEMAS = {
    "fields": {
        "type": "object",
        "additionalProperties": False,
        "required": ["mu"],
        "properties": {
            "grid": _GRID,
            "mu": _MU,
            "z0": {**_POINTS, "default": [[0.0, 0.0]]},
            "exclusion_cells": {"type": "number", "exclusiveMinimum": 0, "default": fl.DEFAULT_EXCLUSION_CELLS},
            "csv": {"type": "boolean", "default": True},
        },
    },
    "conditions": {
        "type": "object",
        "additionalProperties": False,
        "required": ["mu"],
        "properties": {"grid": _GRID, "mu": _MU, "points": {**_POINTS, "default": [[0.0, 0.0]]},
                       "report": _REPORT},
    },
    "modulus": {
        "type": "object",
        "additionalProperties": False,
        "anyOf": [{"required": ["family"]}, {"required": ["weighted_batch"]}],
        "properties": {
            "family": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["annulus", "circles", "joining"]},
                    "n": {"type": "integer", "minimum": 16, "default": 256},
                    "r_in": {"type": "number", "exclusiveMinimum": 0, "default": 1.0},
                    "r_out": {"type": "number", "exclusiveMinimum": 0, "default": 2.0},
                    "grid": _GRID,
                    "z0": {**_POINT, "default": [0.0, 0.0]},
                    "eps": {"type": "number", "default": 0.1},
                    "eps0": {"type": "number", "default": 0.5},
                    "E": {"type": "array", "items": {"$ref": "#/definitions/disc"}},
                    "F": {"type": "array", "items": {"$ref": "#/definitions/disc"}},
                    "batch": {"type": "integer", "minimum": 1, "default": 256},
                    "max_rounds": {"type": "integer", "minimum": 0, "default": 1},
                    "tol": {"type": "number", "exclusiveMinimum": 0, "default": 1e-3},
                    "write_density": {"type": "boolean", "default": True},
                },
            },
            "weighted_batch": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "n_problems": {"type": "integer", "minimum": 1, "default": 100},
                    "max_atoms": {"type": "integer", "minimum": 1, "default": 50},
                    "p": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 1},
                          "minItems": 1, "default": [1.5, 2.0, 3.0]},
                    "n_samples": {"type": "integer", "minimum": 1, "default": 1000},
                    "seed": {"type": "integer", "default": 0},
                },
            },
        },
        "definitions": {
            "disc": {"type": "object", "additionalProperties": False, "required": ["center", "radius"],
                     "properties": {"center": _POINT, "radius": {"type": "number", "exclusiveMinimum": 0}}},
        },
    },
    "solve": {
        "type": "object",
        "additionalProperties": False,
        "required": ["mu"],
        "properties": {
            "grid": _GRID,
            "mu": _MU,
            "solver": _SOLVER,
            "exclusion_radius": {"type": "number", "minimum": 0, "default": 0.05},
            "csv": {"type": "boolean", "default": False},
        },
    },
    "dirichlet": {
        "type": "object",
        "additionalProperties": False,
        "required": ["mu"],
        "properties": {
            "boundary": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": ["circle", "ellipse", "file"], "default": "circle"},
                    "samples": {"type": "integer", "minimum": 64, "default": 1024},
                    "a": {"type": "number", "exclusiveMinimum": 0, "default": 1.0},
                    "b": {"type": "number", "exclusiveMinimum": 0, "default": 1.0},
                    "path": {"type": "string"},
                },
                "default": {},
            },
            "phi": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": ["cos", "re-power", "constant", "file"], "default": "cos"},
                    "k": {"type": "integer", "minimum": 0, "default": 1},
                    "c": {"type": "number", "default": 0.0},
                },
                "default": {},
            },
            "grid_n": {"type": "integer", "minimum": 64, "default": 256},
            "mu": _MU,
            "solver": _SOLVER,
            "boundary_nodes": {"type": "integer", "minimum": 64, "default": 1024},
            "collar_width": {"type": "number", "minimum": 2, "default": 3},
            "force": {"type": "boolean", "default": False},
            "route_points": {"type": ["array", "null"], "items": _POINT, "default": None},
            "report": _REPORT,
            "exclusion_radius": {"type": "number", "minimum": 0, "default": 0.05},
            "csv": {"type": "boolean", "default": False},
        },
    },
    "report": {
        "type": "object",
        "additionalProperties": False,
        "required": ["runs"],
        "properties": {"runs": {"type": "array", "items": {"type": "string"}, "minItems": 1}},
    },
}

_PATH_KEYS = {"grid_file", "path", "dominator_file"}


def _fill_defaults(validator_class):
    """Validator that also writes schema defaults into the instance."""
    validate_props = validator_class.VALIDATORS["properties"]

    def set_defaults(validator, properties, instance, schema):
        if isinstance(instance, dict):
            for key, sub in properties.items():
                if "default" in sub and key not in instance:
                    instance[key] = copy.deepcopy(sub["default"])
        yield from validate_props(validator, properties, instance, schema)

    return jsonschema.validators.extend(validator_class, {"properties": set_defaults})


_Validator = _fill_defaults(jsonschema.Draft7Validator)


def validate_config(command: str, cfg: dict, base: Path = Path(".")) -> dict:
    """Schema-check a config, fill defaults and resolve file paths against ``base``."""
    if command not in SCHEMAS:
        raise InputError(f"unknown command {command!r}")
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    cfg = copy.deepcopy(cfg)
    # two passes: defaults inserted into nested objects are validated too
    for _ in range(2):
        errors = sorted(_Validator(SCHEMAS[command]).iter_errors(cfg), key=lambda e: list(e.path))
        if errors:
            e = errors[0]
            where = "/".join(str(p) for p in e.path) or "<root>"
            raise InputError(f"config schema error at {where}: {e.message}")

    def fix(node):
        if isinstance(node, dict):
            for k, v in node.items():
                if k in _PATH_KEYS and isinstance(v, str):
                    node[k] = str((base / v).resolve())
                else:
                    fix(v)
        elif isinstance(node, list):
            for v in node:
                fix(v)
        return node

    cfg = fix(cfg)
    if command == "report":
        cfg["runs"] = [str((base / r).resolve()) for r in cfg["runs"]]
    return cfg


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _pt(p) -> complex:
    return complex(p[0], p[1])


def build_grid(spec: dict) -> fl.GridSpec:
    c = _pt(spec["center"])
    if spec["kind"] == "square":
        return fl.GridSpec.square(spec["n"], spec["radius"], c)
    inner = spec["inner"] if spec["kind"] == "annulus" else 0.0
    if spec["kind"] == "annulus" and not 0 < inner < spec["radius"]:
        raise InputError("annulus grid needs 0 < inner < radius")
    return fl.disk_grid(spec["n"], spec["radius"], c, inner=inner)


def build_mu(spec: dict, grid: fl.GridSpec) -> fl.MuField:
    thr = spec["degeneracy_threshold"]
    if "grid_file" in spec:
        fld = fl.read_grid_file(spec["grid_file"])
        if not isinstance(fld, fl.MuField):
            raise InputError(f"{spec['grid_file']}: expected a mu grid file")
        return fl.MuField(fld.grid, fld.values, degeneracy_threshold=thr)
    if "constant" in spec:
        return fl.MuField.constant(grid, _pt(spec["constant"]), degeneracy_threshold=thr)
    p = spec["profile"]
    prof = fl.RadialProfile(p["kind"], dict(p["params"]), p["r_min"])
    m = fl.mu_of_radial_profile(prof, grid, sanitize=True)
    return fl.MuField(m.grid, m.values, degeneracy_threshold=thr)


def build_report_config(spec: dict) -> cond.ReportConfig:
    dom = None
    if spec.get("dominator_file"):
        dom = fl.read_grid_file(spec["dominator_file"])
        if not isinstance(dom, fl.RealField):
            raise InputError("dominator file must hold a real field")
    return cond.ReportConfig(eps0=spec["eps0"], exclusion_cells=spec["exclusion_cells"],
                             disc_min_cells=spec["disc_min_cells"], circle_min_cells=spec["circle_min_cells"],
                             margin=spec["margin"], divergence_threshold=spec["divergence_threshold"],
                             phi=cond.PhiSpec(spec["phi"]["kind"], dict(spec["phi"]["params"])),
                             psi_depths=tuple(spec["psi_depths"]), dominator=dom)


def build_solver_config(spec: dict, default_resolution: int) -> sv.SolverConfig:
    return sv.SolverConfig(resolution=spec["resolution"] or default_resolution,
                           truncation_levels=tuple(spec["truncation_levels"]),
                           normalization=tuple(_pt(p) for p in spec["normalization"]),
                           regularization_weight=spec["regularization_weight"],
                           max_residual=spec["max_residual"], exterior_terms=spec["exterior_terms"],
                           rotation_average=spec["rotation_average"])


def _disc_mask(grid: fl.GridSpec, discs) -> np.ndarray:
    m = np.zeros(grid.mask.shape, bool)
    for d in discs:
        m |= np.abs(grid.z - _pt(d["center"])) <= d["radius"]
    return m & grid.mask


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------

class Run:
    def __init__(self, out: Path):
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings: dict = {}
        self.files: list = []

    @contextmanager
    def stage(self, name: str):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t, 6)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(dumps(obj) + "\n")

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def write_grid(self, name: str, fld) -> None:
        fl.write_grid_file(self.path(name), fld)

    def write_csv(self, name: str, fld) -> None:
        fl.export_csv(self.path(name), fld)

    def finish(self) -> None:
        (self.out / "timings.json").write_text(dumps(self.timings) + "\n")
        entries = []
        for name in sorted(set(self.files)):
            digest = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
            entries.append({"file": name, "sha256": digest})
        (self.out / "manifest.json").write_text(dumps({"files": entries}) + "\n")


def _clean(x):
    """JSON-ready copy: complex -> [re, im], numpy scalars -> Python, non-finite -> string."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [_clean(float(x.real)), _clean(float(x.imag))]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if np.isfinite(v) else repr(v)
    return x


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fields(cfg: dict, run: Run) -> dict:
    with run.stage("build"):
        grid = build_grid(cfg["grid"])
        mu = build_mu(cfg["mu"], grid)
        K = fl.dilatation_quotient(mu)
    run.write_grid("K.grid", K)
    summary = []
    out = {"K_max": mu.max_dilatation, "K_min": float(np.min(mu.K[mu.grid.mask])),
           "degeneracy_flag": mu.degeneracy_flag, "points": []}
    with run.stage("tangent_dilatation"):
        for k, p in enumerate(cfg["z0"]):
            z0 = _pt(p)
            Kt = fl.tangent_dilatation(mu, z0, cfg["exclusion_cells"])
            run.write_grid(f"KT_{k}.grid", Kt)
            if cfg["csv"]:
                run.write_csv(f"KT_{k}.csv", Kt)
            v = Kt.values[np.isfinite(Kt.values) & mu.grid.mask]
            Kv = mu.K[np.isfinite(Kt.values) & mu.grid.mask]
            chain = bool(np.all(1 / Kv <= v * (1 + 1e-12)) and np.all(v <= Kv * (1 + 1e-12)))
            rec = {"index": k, "z0": z0, "KT_min": float(v.min()) if v.size else float("nan"),
                   "KT_max": float(v.max()) if v.size else float("nan"), "chain_holds": chain}
            out["points"].append(rec)
            summary.append([k, repr(z0.real), repr(z0.imag), repr(rec["KT_min"]), repr(rec["KT_max"]),
                            repr(out["K_min"]), repr(out["K_max"]), int(chain)])
    if cfg["csv"]:
        run.write_csv("K.csv", K)
    rows = ["index,x,y,KT_min,KT_max,K_min,K_max,chain_holds"] + [",".join(map(str, r)) for r in summary]
    run.write_text("summary.csv", "\n".join(rows) + "\n")
    return out


def cmd_conditions(cfg: dict, run: Run) -> dict:
    with run.stage("build"):
        grid = build_grid(cfg["grid"])
        mu = build_mu(cfg["mu"], grid)
        rc = build_report_config(cfg["report"])
    with run.stage("report"):
        rep = cond.condition_report(mu, [_pt(p) for p in cfg["points"]], rc)
    run.write_text("report.csv", rep.to_csv())
    return rep.to_dict()


def _weighted_batch(spec: dict, run: Run) -> dict:
    rng = np.random.default_rng(spec["seed"])
    rows = ["index,p,atoms,closed_form,sampled_min,at_minimiser,beaten"]
    beaten = 0
    worst = 0.0
    for i in range(spec["n_problems"]):
        n = int(rng.integers(1, spec["max_atoms"] + 1))
        p = float(spec["p"][i % len(spec["p"])])
        pb = mod.WeightedMinProblem(tuple(rng.uniform(0.05, 2.0, n)), tuple(np.exp(rng.uniform(-3, 3, n))), p)
        I, a0 = mod.weighted_inf_closed_form(pb)
        best, _ = mod.weighted_inf_sampled(pb, spec["n_samples"], rng)
        at = float(pb.functional(a0))
        worst = max(worst, abs(at - I) / I)
        b = best < I * (1 - 1e-12)
        beaten += b
        rows.append(f"{i},{p!r},{n},{I!r},{best!r},{at!r},{int(b)}")
    run.write_text("weighted_batch.csv", "\n".join(rows) + "\n")
    return {"n_problems": spec["n_problems"], "beaten": beaten, "max_relative_gap_at_minimiser": worst}


def cmd_modulus(cfg: dict, run: Run) -> dict:
    out = {}
    if "family" in cfg:
        f = cfg["family"]
        with run.stage("family"):
            if f["kind"] == "annulus":
                fam = mod.annulus_joining_family(f["n"], f["r_in"], f["r_out"])
            else:
                grid = build_grid(f["grid"])
                if f["kind"] == "circles":
                    fam = mod.CurveFamilySpec("circles", grid, z0=_pt(f["z0"]), eps=f["eps"], eps0=f["eps0"])
                else:
                    if "E" not in f or "F" not in f:
                        raise InputError("joining family needs E and F disc lists")
                    fam = mod.CurveFamilySpec("joining", grid, _disc_mask(grid, f["E"]), _disc_mask(grid, f["F"]))
        with run.stage("modulus"):
            res = mod.discrete_modulus(fam, batch=f["batch"], max_rounds=f["max_rounds"], tol=f["tol"])
        out["family"] = res.to_dict()
        if f["kind"] == "annulus":
            exact = 2 * np.pi / np.log(f["r_out"] / f["r_in"])
            out["family"]["reference"] = exact
            out["family"]["relative_error"] = (res.value - exact) / exact
        if f["write_density"] and res.density is not None:
            run.write_grid("density.grid", res.density.as_field())
    if "weighted_batch" in cfg:
        with run.stage("weighted_batch"):
            out["weighted_batch"] = _weighted_batch(cfg["weighted_batch"], run)
    return out


def cmd_solve(cfg: dict, run: Run) -> dict:
    with run.stage("build"):
        grid = build_grid(cfg["grid"])
        mu = build_mu(cfg["mu"], grid)
        sc = build_solver_config(cfg["solver"], max(mu.grid.nx, mu.grid.ny))
    with run.stage("solve"):
        res = sv.solve_beltrami_disk(mu, sc)
    with run.stage("diagnostics"):
        diag = sv.regularity_diagnostics(res, cfg["exclusion_radius"])
    run.write_grid("f.grid", res.f)
    if cfg["csv"]:
        run.write_csv("f.csv", res.f)
    return {"solver": res.metadata(), "diagnostics": diag, "config": sc.to_dict()}


def _boundary(spec: dict):
    kind = spec["kind"]
    if kind == "circle":
        return conf.JordanBoundary.circle(spec["samples"]), None
    if kind == "ellipse":
        return conf.JordanBoundary.ellipse(spec["samples"], spec["a"], spec["b"]), None
    if "path" not in spec:
        raise InputError("boundary kind 'file' needs a path")
    return conf.JordanBoundary.from_csv(spec["path"])


def _boundary_data(spec: dict, b: conf.JordanBoundary, from_file):
    kind = spec["kind"]
    if kind == "file":
        if from_file is None:
            raise InputError("phi kind 'file' needs a third column in the boundary file")
        return from_file
    if kind == "constant":
        return conf.BoundaryData(b, np.full(b.n, spec["c"]))
    k = spec["k"]
    if kind == "cos":
        w0 = b.centroid
        return conf.BoundaryData(b, np.cos(k * np.angle(b.samples - w0)))
    return conf.BoundaryData.from_function(b, lambda z: (z ** k).real)


def _domain_grid(b: conf.JordanBoundary, n: int) -> fl.GridSpec:
    if b.is_unit_circle():
        return fl.disk_grid(n)
    z = b.samples
    c = complex((z.real.max() + z.real.min()) / 2, (z.imag.max() + z.imag.min()) / 2)
    half = max(np.abs(z.real - c.real).max(), np.abs(z.imag - c.imag).max())
    g = fl.GridSpec.square(n, half, c)
    return g.with_mask(b.contains(g.z))


def cmd_dirichlet(cfg: dict, run: Run, force: bool = False) -> dict:
    with run.stage("build"):
        b, from_file = _boundary(cfg["boundary"])
        phi = _boundary_data(cfg["phi"], b, from_file)
        grid = _domain_grid(b, cfg["grid_n"])
        mu = build_mu(cfg["mu"], grid)
        sc = build_solver_config(cfg["solver"], cfg["grid_n"])
        route_pts = None if cfg["route_points"] is None else [_pt(p) for p in cfg["route_points"]]
        dc = conf.DirichletConfig(solver=sc, boundary_nodes=cfg["boundary_nodes"], collar_width=cfg["collar_width"],
                                  force=cfg["force"] or force, route_points=route_pts,
                                  report=build_report_config(cfg["report"]),
                                  exclusion_radius=cfg["exclusion_radius"])
    with run.stage("pipeline"):
        res = conf.dirichlet_solve(b, mu, phi, dc)
    run.write_grid("f.grid", res.f)
    if cfg["csv"]:
        run.write_csv("f.csv", res.f)
    b.to_csv(run.path("boundary.csv"), phi.phi)
    return {"diagnostics": res.diagnostics(), "config": dc.to_dict()}


def cmd_report(cfg: dict, run: Run) -> dict:
    rows = ["run,command,key,value"]
    out = {"runs": []}
    for r in cfg["runs"]:
        d = Path(r)
        try:
            result = json.loads((d / "result.json").read_text())
            echo = json.loads((d / "config.json").read_text())
        except FileNotFoundError as exc:
            raise InputError(f"{d}: not a run directory ({exc.filename} missing)") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{d}: unreadable run output ({exc})") from None
        command = result.get("command", "?")
        flat = {}

        def walk(prefix, v):
            if isinstance(v, dict):
                for k in sorted(v):
                    walk(f"{prefix}.{k}" if prefix else k, v[k])
            elif isinstance(v, (int, float, str, bool)) or v is None:
                flat[prefix] = v
        walk("", result.get("result", {}))
        for k, v in flat.items():
            rows.append(f"{d.name},{command},{k},{v}")
        out["runs"].append({"run": str(d), "command": command, "scalars": flat, "config": echo})
    run.write_text("report.csv", "\n".join(rows) + "\n")
    return out


COMMANDS = {
    "fields": cmd_fields,
    "conditions": cmd_conditions,
    "modulus": cmd_modulus,
    "solve": cmd_solve,
    "dirichlet": cmd_dirichlet,
    "report": cmd_report,
}


def run_command(command: str, cfg: dict, out: Path, base: Path = Path("."), force: bool = False) -> dict:
    """Validate ``cfg``, run ``command`` into ``out`` and return the result block."""
    cfg = validate_config(command, cfg, base)
    run = Run(Path(out))
    run.write_json("config.json", cfg)
    if command == "dirichlet":
        result = cmd_dirichlet(cfg, run, force=force)
    else:
        result = COMMANDS[command](cfg, run)
    run.write_json("result.json", {"command": command, "result": result})
    run.finish()
    return result


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, InputError):
        return EXIT_INPUT
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, RouteNotEstablished):
        return EXIT_ROUTE
    if isinstance(exc, NumericFailure):
        return EXIT_NUMERIC
    return EXIT_ERROR


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="beltrami", description=__doc__.split("\n\n")[0],
                                 epilog="exit codes: 0 ok, 1 error, 2 input, 3 infeasible, "
                                        "4 route not established, 5 numeric failure")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="JSON config file")
    ap.add_argument("--out", required=True, help="run directory")
    ap.add_argument("--force", action="store_true", help="dirichlet: run even if no route is established")
    args = ap.parse_args(argv)
    try:
        path = Path(args.config)
        try:
            cfg = json.loads(path.read_text())
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}") from None
        result = run_command(args.command, cfg, Path(args.out), path.parent, args.force)
    except BeltramiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    print(dumps({"command": args.command, "out": args.out, "status": "ok"}))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
