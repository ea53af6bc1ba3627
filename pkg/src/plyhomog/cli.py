"""Command line: ``plyhomog <command> CONFIG [--seed N] [--out DIR]``.

The configuration is a TOML file with sections ``geometry``, ``kinetics``,
``numerics``, ``study`` and ``io``. Outputs go to
``<output_dir>/<command>/<config hash>/``. On failure an ``error.json`` is
written there (when possible), the same JSON is printed to stderr, and the
process exits with 2 (invalid input), 3 (solver failure) or 4 (I/O).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cellsolver import EffectiveCache, geometry_hash
from .errors import IoError, ParseError, PlyHomogError, ValidationError
from .harness import StudyReport, convergence_study, scaling_study
from .kinetics import KineticsSpec, ProductionLaw, ReactionLaw, kinetics_battery
from .laws import AngleLaw, Bump, FieldLaw, RadiusLaw, RateLaw
from .lpgeom import chi_l2_difference, partition_cubes
from .macrosim import effective_lattice, run_macro
from .microgeom import Box, MicrostructureSpec, fiber_lattice
from .microsim import MONITOR_FIELDS, run_micro
from .outputs import write_csv, write_json, write_manifest, write_outputs, write_snapshot
from .unfolding import (TwoScaleFunction, boundary_measure_limit_check, direct_norm_sq, manufactured_library,
                        random_smooth_fields, unfold, unfolded_norm_sq, unfolding_cells)

COMMANDS = ("geometry", "cell", "micro", "macro", "converge", "scaling", "unfold-check")

_FIELD_KEYS = {"kind", "value", "grad", "amp", "freq"}
_RATE_KEYS = {"amplitude", "bump"}

SCHEMA = {
    "geometry": {"eps": 0.25, "a": 0.2, "domain_lo": [0.0, 0.0, 0.0], "domain_hi": [1.0, 1.0, 1.0],
                 "gamma": {"kind": "constant", "c0": 0.0, "c1": 0.0}, "rho": {"value": 1.0, "grad": [0.0, 0.0, 0.0]}},
    "kinetics": {"preset": "zero", "A": None, "d_f": None, "d_b": None, "F": None, "p": None, "alpha": None,
                 "beta": None, "c0": None, "rf0": None, "rb0": None},
    "numerics": {"h_factor": 8, "dt": 0.0025, "n_macro": 32, "n_cell": 32, "n_effective_lattice": 5, "tol": 1e-10,
                 "n_axial": 8, "n_angular": 16, "y_grid": 16, "n_snapshots": 16, "mu": None},
    "study": {"kind": "none", "eps_list": [0.25, 0.125], "r": 0.75, "n_samples": 1_000_000, "T": 0.05,
              "psi": "one"},
    "io": {"output_dir": "plyhomog-out", "seed": 0, "cache_path": ""},
}
STUDY_KINDS = ("none", "convergence", "scaling", "apriori")
PSI_KINDS = ("one", "rate")


@dataclass
class RunConfig:
    geometry: MicrostructureSpec
    kinetics: KineticsSpec
    numerics: dict
    study: dict
    io: dict
    canonical: dict = field(default_factory=dict)
    hash: str = ""

    @property
    def output_dir(self):
        return self.io["output_dir"]

    @property
    def seed(self):
        return int(self.io["seed"])

    @property
    def cache_path(self):
        return self.io["cache_path"] or os.path.join(self.output_dir, "cache", "cells.npz")


def _parse_error(err):
    m = re.search(r"line (\d+), column (\d+)", str(err))
    msg = str(err).split(" (at line")[0]
    if m:
        return ParseError(msg, int(m.group(1)), int(m.group(2)))
    return ParseError(msg)


def _check_keys(section, data, allowed):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _field_law(section, d):
    if isinstance(d, (int, float)):
        return FieldLaw("constant", float(d))
    _check_keys(section, d, _FIELD_KEYS)
    kw = {k: (tuple(float(x) for x in v) if isinstance(v, list) else v) for k, v in d.items()}
    return FieldLaw(**kw)


def _rate_law(section, d):
    _check_keys(section, d, _RATE_KEYS)
    return RateLaw(_field_law(section + ".amplitude", d.get("amplitude", 0.0)), Bump(d.get("bump", "flat")))


def _build_geometry(g):
    omega = Box(tuple(float(v) for v in g["domain_lo"]), tuple(float(v) for v in g["domain_hi"]))
    gam = g["gamma"]
    _check_keys("geometry.gamma", gam, {"kind", "c0", "c1"})
    rho = g["rho"]
    _check_keys("geometry.rho", rho, {"value", "grad"})
    return dict(omega=omega, gamma=AngleLaw(**gam),
                rho=RadiusLaw(float(rho.get("value", 1.0)), tuple(float(v) for v in rho.get("grad", (0, 0, 0)))),
                a=float(g["a"]), eps=float(g["eps"]))


def _build_kinetics(k):
    presets = kinetics_battery()
    if k["preset"] not in presets:
        raise ValidationError(f"unknown kinetics preset {k['preset']!r}; expected one of {sorted(presets)}")
    kin = presets[k["preset"]]
    changes = {}
    for name in ("A", "d_f", "d_b"):
        if k[name] is not None:
            changes[name] = float(k[name])
    if k["F"] is not None:
        _check_keys("kinetics.F", k["F"], {"kind", "f0", "lam", "cmax"})
        changes["F"] = ReactionLaw(**k["F"])
    if k["p"] is not None:
        _check_keys("kinetics.p", k["p"], {"kind", "p0", "p1"})
        changes["p"] = ProductionLaw(**k["p"])
    for name in ("alpha", "beta"):
        if k[name] is not None:
            changes[name] = _rate_law(f"kinetics.{name}", k[name])
    if k["c0"] is not None:
        changes["c0"] = _field_law("kinetics.c0", k["c0"])
    for name in ("rf0", "rb0"):
        if k[name] is not None:
            r = _rate_law(f"kinetics.{name}", k[name])
            changes[name + "_1"] = r.amplitude
            changes[name + "_2"] = r.bump
    return replace(kin, **changes)


def _merge(data):
    _check_keys("top level", data, SCHEMA)
    merged = {}
    for sec, defaults in SCHEMA.items():
        given = data.get(sec, {})
        if not isinstance(given, dict):
            raise ValidationError(f"[{sec}] must be a table")
        _check_keys(sec, given, defaults)
        merged[sec] = {**defaults, **given}
    return merged


def config_hash(canonical):
    payload = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def parse_config(path, command=None, seed=None, out=None):
    """Read, validate and default a run configuration.

    The hash covers every resolved setting except the output and cache
    locations, so it does not depend on key order, comments or where results
    are written.
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as err:
        raise IoError(f"cannot read config {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise _parse_error(err) from err
    return config_from_dict(data, command=command, seed=seed, out=out)


def config_from_dict(data, command=None, seed=None, out=None):
    merged = _merge(data)
    if seed is not None:
        merged["io"]["seed"] = int(seed)
    if out is not None:
        merged["io"]["output_dir"] = str(out)
    study = merged["study"]
    if study["kind"] not in STUDY_KINDS:
        raise ValidationError(f"study.kind must be one of {STUDY_KINDS}")
    if study["psi"] not in PSI_KINDS:
        raise ValidationError(f"study.psi must be one of {PSI_KINDS}")
    r = float(study["r"])
    if not 0.0 < r < 1.0:
        raise ValidationError(f"r = {r} must lie in (0, 1)")
    if (command == "scaling" or study["kind"] == "scaling") and not 2.0 / 3.0 < r < 1.0:
        raise ValidationError(f"r = {r} lies outside (2/3, 1), where the indicator differences are known to vanish")
    geometry = MicrostructureSpec(**_build_geometry(merged["geometry"]), r_exp=r)
    kinetics = _build_kinetics(merged["kinetics"])
    lo, hi = geometry.omega.bounds()
    kinetics.validate(lo, hi)
    num = merged["numerics"]
    if not num["h_factor"] >= 8:
        raise ValidationError("numerics.h_factor must be at least 8 (h <= eps/8)")
    if not float(num["dt"]) > 0:
        raise ValidationError("numerics.dt must be positive")
    eps_list = [float(e) for e in study["eps_list"]]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ValidationError("study.eps_list must hold positive values")
    study["eps_list"] = eps_list
    canonical = {"geometry": geometry.to_dict(), "kinetics": kinetics.to_dict(), "numerics": num,
                 "study": study, "seed": int(merged["io"]["seed"])}
    canonical = json.loads(json.dumps(canonical, default=float))
    return RunConfig(geometry=geometry, kinetics=kinetics, numerics=num, study=study, io=merged["io"],
                     canonical=canonical, hash=config_hash(canonical))


def worker_count():
    """Worker cap from ``PLYHOMOG_THREADS`` (default 1)."""
    raw = os.environ.get("PLYHOMOG_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as err:
        raise ValidationError(f"PLYHOMOG_THREADS must be an integer, got {raw!r}") from err
    if n < 1:
        raise ValidationError("PLYHOMOG_THREADS must be at least 1")
    return n


# ------------------------------------------------------------------ commands

def _provenance(cfg):
    return {"config_hash": cfg.hash, "seed": cfg.seed}


def _cmd_geometry(cfg, out):
    spec = cfg.geometry
    cells = fiber_lattice(spec)
    rows = [{"k1": int(c.k[0]), "k2": int(c.k[1]), "k3": int(c.k[2]), "x1": float(c.center[0]),
             "x2": float(c.center[1]), "x3": float(c.center[2]), "rho": float(spec.rho(c.center))} for c in cells]
    fields = ("k1", "k2", "k3", "x1", "x2", "x3", "rho")
    write_csv(os.path.join(out, "lattice.csv"), fields, rows)
    part = partition_cubes(spec)
    n_mc = int(min(cfg.study["n_samples"], 200_000))
    rep = chi_l2_difference(spec, part, max(n_mc, 10_000), seed=cfg.seed)
    summary = {"n_cells": len(rows), "n_cubes": int(part.count), "cube_side": float(part.side),
               "indicator_difference": rep.as_row()}
    return summary, ["lattice.csv"]


def _cmd_cell(cfg, out):
    spec = cfg.geometry
    num = cfg.numerics
    os.makedirs(os.path.dirname(cfg.cache_path) or ".", exist_ok=True)
    key = geometry_hash(spec, num["n_cell"], cfg.kinetics.A) + f"-lattice{num['n_effective_lattice']}"
    cache = EffectiveCache(cfg.cache_path, key)
    before = len(cache.entries)
    axes, theta, tensor = effective_lattice(spec, num["n_effective_lattice"], num["n_cell"], cfg.kinetics.A,
                                            cache, num["tol"], workers=worker_count())
    cache.save()
    rows = []
    for idx in np.ndindex(theta.shape):
        x = [float(axes[d][idx[d]]) for d in range(3)]
        t = tensor[idx]
        rows.append({"i": idx[0], "j": idx[1], "k": idx[2], "x1": x[0], "x2": x[1], "x3": x[2],
                     "theta": float(theta[idx]), **{f"A{m + 1}{n + 1}": float(t[m, n])
                                                     for m in range(3) for n in range(m, 3)}})
    fields = ("i", "j", "k", "x1", "x2", "x3", "theta", "A11", "A12", "A13", "A22", "A23", "A33")
    write_csv(os.path.join(out, "effective.csv"), fields, rows)
    summary = {"cache_path": cfg.cache_path, "cache_hit": cache.misses == 0 and before > 0,
               "cache_hits": cache.hits, "cache_misses": cache.misses, "n_anchors": len(rows)}
    return summary, ["effective.csv"]


def _monitor_files(report, out, extra_fields=()):
    fields = tuple(MONITOR_FIELDS) + tuple(extra_fields)
    write_csv(os.path.join(out, "monitors.csv"), fields, [{k: r.get(k, 0.0) for k in fields} for r in report.rows])
    return ["monitors.csv"]


def _cmd_micro(cfg, out):
    spec = cfg.geometry
    num = cfg.numerics
    T = float(cfg.study["T"])
    run = run_micro(spec, cfg.kinetics, spec.eps / num["h_factor"], dt=float(num["dt"]), T=T,
                    n_snapshots=num["n_snapshots"], mu=num["mu"], tol=num["tol"])
    files = _monitor_files(run.report, out, ("surface_l2", "receptor_mass", "sup_receptor_sum"))
    snap_dir = os.path.join(out, "snapshots")
    for i, s in enumerate(run.snapshots):
        for name, arr in (("c", s.c), ("r_f", s.r_f), ("r_b", s.r_b)):
            files += [os.path.join("snapshots", f) for f in
                      write_snapshot(snap_dir, f"{name}_{i:03d}", arr, {"t": s.t, "h": run.domain.h, "tag": "micro"})]
    summary = {"barrier": list(run.report.barrier), "apriori": run.report.summary(),
               "fluid_fraction": run.domain.fluid_fraction, "n_patches": run.domain.n_faces}
    return summary, files


def _cmd_macro(cfg, out):
    spec = cfg.geometry
    num = cfg.numerics
    os.makedirs(os.path.dirname(cfg.cache_path) or ".", exist_ok=True)
    run = run_macro(spec, cfg.kinetics, num["n_macro"], float(num["dt"]), float(cfg.study["T"]),
                    n_snapshots=num["n_snapshots"], mu=num["mu"], n_effective_lattice=num["n_effective_lattice"],
                    n_cell=num["n_cell"], cache_path=cfg.cache_path, n_axial=num["n_axial"],
                    n_angular=num["n_angular"], tol=num["tol"])
    files = _monitor_files(run.report, out, ("receptor_mass", "sup_receptor_sum", "mean_rf", "mean_rb"))
    snap_dir = os.path.join(out, "snapshots")
    for i, (t, c, rf, rb) in enumerate(run.snapshots):
        for name, arr in (("c", c), ("rf_avg", rf), ("rb_avg", rb)):
            files += [os.path.join("snapshots", f) for f in
                      write_snapshot(snap_dir, f"{name}_{i:03d}", arr, {"t": t, "h": list(run.assembly.h), "tag": "macro"})]
    asm = run.assembly
    summary = {"barrier": list(run.report.barrier), "clamped": asm.clamped, "cross_scaled": asm.cross_scaled,
               "cache_hits": asm.cache_hits, "cache_misses": asm.cache_misses}
    return summary, files


def _cmd_converge(cfg, out):
    num = cfg.numerics
    rep = convergence_study(cfg.geometry, cfg.kinetics, cfg.study["eps_list"],
                            h_rule=lambda e: e / num["h_factor"], T=float(cfg.study["T"]), dt=float(num["dt"]),
                            n_macro=num["n_macro"], n_snapshots=num["n_snapshots"], n_cell=num["n_cell"],
                            n_effective_lattice=num["n_effective_lattice"], provenance=_provenance(cfg))
    return rep, []


def _cmd_scaling(cfg, out):
    rep = scaling_study(cfg.geometry, cfg.study["eps_list"], int(cfg.study["n_samples"]), seed=cfg.seed,
                        provenance=_provenance(cfg))
    return rep, []


def _psi_factory(cfg):
    if cfg.study["psi"] == "one":
        return lambda s: TwoScaleFunction(lambda x, yh: np.ones(len(x)), s, 0.0, "one")
    return lambda s: TwoScaleFunction.from_rate(cfg.kinetics.alpha, s)


def _cmd_unfold(cfg, out):
    spec = cfg.geometry
    num = cfg.numerics
    rows = boundary_measure_limit_check(_psi_factory(cfg), spec, cfg.study["eps_list"], n_axial=num["n_axial"],
                                        n_angular=num["n_angular"])
    table = [{"eps": r.eps, "lhs": r.lhs, "limit": r.limit, "rel_gap": r.rel_gap} for r in rows]
    write_csv(os.path.join(out, "boundary_limit.csv"), ("eps", "lhs", "limit", "rel_gap"), table)
    spec = spec.replace(eps=min(cfg.study["eps_list"]))
    part = partition_cubes(spec)
    cells = unfolding_cells(spec, part)
    if len(cells) == 0:
        raise ValidationError(f"no complete unfolding cell at eps = {spec.eps:g}; use a smaller eps")
    iso = []
    fields_ = [(f"random{i}", u) for i, u in enumerate(random_smooth_fields(cfg.seed, 20))]
    for name, u in fields_:
        un = unfolded_norm_sq(unfold(u, spec, part, y_grid=num["y_grid"], cells=cells), cells.volume)
        dn = direct_norm_sq(u, spec, part, cells)
        iso.append({"field": name, "unfolded": un, "direct": dn, "rel_error": abs(un - dn) / dn})
    write_csv(os.path.join(out, "isometry.csv"), ("field", "unfolded", "direct", "rel_error"), iso)
    rep = StudyReport("unfold_check", ("eps", "lhs", "limit", "rel_gap"), table, provenance=_provenance(cfg))
    gap = table[-1]["rel_gap"]
    worst = max(r["rel_error"] for r in iso)
    rep.verdicts["boundary_limit"] = {"pass": gap <= 0.02, "detail": f"rel_gap {gap:.4g} at eps {table[-1]['eps']:g}"}
    rep.verdicts["isometry"] = {"pass": worst <= 1e-3, "detail": f"max relative error {worst:.3e}"}
    rep.stats["n_library"] = len(manufactured_library(spec))
    return rep, ["boundary_limit.csv", "isometry.csv"]


_DISPATCH = {"geometry": _cmd_geometry, "cell": _cmd_cell, "micro": _cmd_micro, "macro": _cmd_macro,
             "converge": _cmd_converge, "scaling": _cmd_scaling, "unfold-check": _cmd_unfold}


def output_dir_for(cfg, command):
    return os.path.join(cfg.output_dir, command, cfg.hash)


def run_command(cfg, command):
    """Run ``command`` for ``cfg``; returns ``(exit_status, output_dir)``."""
    if command not in _DISPATCH:
        raise ValidationError(f"unknown command {command!r}; expected one of {COMMANDS}")
    out = output_dir_for(cfg, command)
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as err:
        raise IoError(f"cannot create {out}: {err}") from err
    t0 = time.perf_counter()
    result, files = _DISPATCH[command](cfg, out)
    write_json(os.path.join(out, "config.json"), cfg.canonical)
    files = files + ["config.json"]
    if isinstance(result, StudyReport):
        result.stats["seconds"] = time.perf_counter() - t0
        manifest = write_outputs(result, out)
        write_manifest(out, list(manifest) + files)
    else:
        summary = {"command": command, "config_hash": cfg.hash, "seed": cfg.seed,
                   "seconds": time.perf_counter() - t0, **result}
        write_json(os.path.join(out, "summary.json"), summary)
        write_manifest(out, files + ["summary.json"])
    return 0, out


def _error_payload(err):
    payload = {"error": type(err).__name__, "message": str(err), "exit_code": getattr(err, "exit_code", 1)}
    for attr in ("line", "column"):
        if getattr(err, attr, None) is not None:
            payload[attr] = getattr(err, attr)
    return payload


def main(argv=None):
    ap = argparse.ArgumentParser(prog="plyhomog", description="Plywood microstructure homogenization toolkit")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="TOML run configuration")
    ap.add_argument("--seed", type=int, default=None, help="override io.seed")
    ap.add_argument("--out", default=None, help="override io.output_dir")
    args = ap.parse_args(argv)
    cfg = None
    try:
        cfg = parse_config(args.config, command=args.command, seed=args.seed, out=args.out)
        status, out = run_command(cfg, args.command)
        print(out)
        return status
    except PlyHomogError as err:
        payload = _error_payload(err)
        if cfg is not None:
            try:
                out = output_dir_for(cfg, args.command)
                os.makedirs(out, exist_ok=True)
                write_json(os.path.join(out, "error.json"), payload)
            except (OSError, IoError):
                pass
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return payload["exit_code"]
