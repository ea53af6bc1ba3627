"""Numerical studies: micro versus macro convergence, indicator-difference
scaling and a-priori monitors. Each study returns a :class:`StudyReport`."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import NonPositiveValue, PlyHomogError, StudyInconclusive, ValidationError
from .lpgeom import chi_l2_difference, partition_cubes, scaling_fit, two_point_slope
from .macrosim import run_macro
from .microgeom import lattice_centers
from .microsim import extend_field, run_micro

APRIORI_RATIO = 3.0
BARRIER_SLOPE = 0.8
SLOPE_SLACK = 0.15


@dataclass
class StudyReport:
    """Rows, fitted rates and verdicts of one study.

    ``verdicts`` maps a criterion name to ``{"pass": bool, "detail": str}``.
    ``stats`` holds wall-clock and solver counters; it is excluded from the
    CSV so reruns give identical tables.
    """

    study: str
    fields: tuple
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(v["pass"] for v in self.verdicts.values())

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def table(self):
        """Rows with the provenance columns appended, in ``fields`` order."""
        cols = tuple(self.fields) + ("config_hash", "seed")
        out = []
        for r in self.rows:
            row = {k: r[k] for k in self.fields}
            row["config_hash"] = self.provenance.get("config_hash", "")
            row["seed"] = self.provenance.get("seed", 0)
            out.append(row)
        return cols, out

    def summary(self):
        return {"study": self.study, "passed": self.passed, "fits": self.fits, "verdicts": self.verdicts,
                "stats": self.stats, "provenance": self.provenance, "n_rows": len(self.rows)}


def _verdict(ok, detail):
    return {"pass": bool(ok), "detail": detail}


# ---------------------------------------------------------------- convergence

CONVERGENCE_FIELDS = ("eps", "h", "rel_l2_error", "rf_rel_error", "micro_mass_drift", "n_steps")


def sample_macro(field_, origin, h, points):
    """Trilinear interpolation of a cell-centered macro field, constant beyond the outer centers."""
    coords = [(points[..., d] - origin[d]) / h[d] - 0.5 for d in range(3)]
    return map_coordinates(field_, coords, order=1, mode="nearest")


def _time_integral(t, values):
    t = np.asarray(t, float)
    v = np.asarray(values, float)
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))


def micro_cell_average(state, domain, values):
    """Surface average of a per-face quantity over each lattice cell."""
    n_cells = len(domain.cell_k)
    w = domain.face_weight
    num = np.bincount(domain.face_cell, weights=w * values, minlength=n_cells)
    den = np.bincount(domain.face_cell, weights=w, minlength=n_cells)
    return num / np.where(den > 0, den, 1.0), den > 0


def compare_runs(micro, macro, spec):
    """Relative L2 space-time error of the extended micro field against macro.

    Also returns the relative l2 (over lattice cells) mismatch of the
    surface-averaged free receptors at the final time.
    """
    asm = macro.assembly
    dom = micro.domain
    X = dom.centers()
    V = dom.voxel_volume
    times, err, ref = [], [], []
    for s_mic, s_mac in zip(micro.snapshots, macro.snapshots):
        ext = extend_field(s_mic, dom)
        cm = sample_macro(s_mac[1], asm.origin, asm.h, X)
        times.append(s_mic.t)
        err.append(V * float(np.sum((ext - cm) ** 2)))
        ref.append(V * float(np.sum(cm ** 2)))
    if len(times) > 1:
        e2, r2 = _time_integral(times, err), _time_integral(times, ref)
    else:
        e2, r2 = err[0], ref[0]
    rel = float(np.sqrt(e2 / r2)) if r2 > 0 else float(np.sqrt(e2))
    rf_rel = 0.0
    if dom.n_faces:
        avg, ok = micro_cell_average(micro.final, dom, micro.final.r_f)
        centers = lattice_centers(spec, dom.cell_k)
        mac = sample_macro(macro.snapshots[-1][2], asm.origin, asm.h, centers)
        diff = (avg - mac)[ok]
        denom = float(np.linalg.norm(mac[ok]))
        rf_rel = float(np.linalg.norm(diff) / denom) if denom > 0 else float(np.linalg.norm(diff))
    return rel, rf_rel


def convergence_study(spec, kinetics, eps_list, h_rule=None, T=0.05, dt=0.0025, n_macro=32, n_snapshots=16,
                      n_cell=32, n_effective_lattice=5, slack=0.05, provenance=None, micro_kw=None):
    """Micro versus homogenized solution for a decreasing ``eps_list``.

    The macro problem is solved once; every micro run is extended into the
    fibers and compared on its own voxel grid. Verdict: each error is below
    ``(1 + slack)`` times the previous one.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 2 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValidationError("eps_list must be strictly decreasing with at least two entries")
    h_rule = h_rule or (lambda e: e / 8.0)
    t0 = time.perf_counter()
    try:
        macro = run_macro(spec, kinetics, n_macro, dt, T, n_snapshots=n_snapshots, n_cell=n_cell,
                          n_effective_lattice=n_effective_lattice)
    except PlyHomogError as err:
        raise StudyInconclusive(f"macro run failed: {err}") from err
    rows = []
    stats = {"macro_seconds": time.perf_counter() - t0}
    for e in eps_list:
        t1 = time.perf_counter()
        s = spec.replace(eps=e)
        h = h_rule(e)
        try:
            micro = run_micro(s, kinetics, h, dt=dt, T=T, n_snapshots=n_snapshots, **(micro_kw or {}))
        except PlyHomogError as err:
            raise StudyInconclusive(f"micro run at eps={e} failed: {err}") from err
        rel, rf_rel = compare_runs(micro, macro, s)
        mass = micro.report.column("mass")
        drift = float(np.max(np.abs(mass - mass[0])) / max(abs(mass[0]), 1e-300))
        rows.append({"eps": e, "h": h, "rel_l2_error": rel, "rf_rel_error": rf_rel,
                     "micro_mass_drift": drift, "n_steps": len(micro.report.rows) - 1})
        stats[f"micro_seconds_eps_{e:g}"] = time.perf_counter() - t1
    errs = [r["rel_l2_error"] for r in rows]
    ok = all(b < (1 + slack) * a for a, b in zip(errs, errs[1:]))
    report = StudyReport("convergence", CONVERGENCE_FIELDS, rows, stats=stats, provenance=dict(provenance or {}))
    report.verdicts["micro_macro_decrease"] = _verdict(
        ok, "errors " + ", ".join(f"{v:.4g}" for v in errs) + f" (slack {slack:g})")
    if len(errs) >= 2 and min(errs) > 0:
        report.fits["error_slope"] = two_point_slope(eps_list[-2], errs[-2], eps_list[-1], errs[-1])
    return report


# -------------------------------------------------------------------- scaling

SCALING_FIELDS = ("eps", "r_exp", "i1", "i2", "total", "stderr_i1", "stderr_i2", "n_samples")


def _fit_or_zero(eps, values):
    values = np.asarray(values, float)
    if np.all(values == 0):
        return None
    try:
        if len(values) == 2:
            return two_point_slope(eps[0], values[0], eps[1], values[1]), 0.0
        slope, _, resid = scaling_fit(list(zip(eps, values)))
    except NonPositiveValue:
        return float("nan"), float("nan")
    return slope, resid


def scaling_study(spec, eps_list, n_samples=1_000_000, seed=0, provenance=None):
    """Monte Carlo indicator differences per ``eps`` with fitted log-log slopes.

    Targets: slope of ``i1`` at least ``r - 0.15``, of ``i2`` at least
    ``3r - 2 - 0.15``. A quantity that vanishes at every ``eps`` passes as an
    exact zero.
    """
    r = spec.r_exp
    if not 2.0 / 3.0 < r < 1.0:
        raise ValidationError(f"scaling study needs r in (2/3, 1), got r = {r}")
    rows = []
    t0 = time.perf_counter()
    for e in eps_list:
        s = spec.replace(eps=float(e))
        part = partition_cubes(s)
        rep = chi_l2_difference(s, part, n_samples, seed=seed)
        rows.append(rep.as_row())
    report = StudyReport("scaling", SCALING_FIELDS, rows, stats={"seconds": time.perf_counter() - t0},
                         provenance=dict(provenance or {}, seed=seed))
    eps = [row["eps"] for row in rows]
    for name, target in (("i1", r - SLOPE_SLACK), ("i2", 3 * r - 2 - SLOPE_SLACK)):
        fit = _fit_or_zero(eps, [row[name] for row in rows])
        if fit is None:
            report.fits[name] = {"slope": None, "exact_zero": True}
            report.verdicts[f"{name}_slope"] = _verdict(True, f"{name} vanishes identically (exact zero)")
        else:
            slope, resid = fit
            report.fits[name] = {"slope": slope, "residual": resid, "target": target}
            report.verdicts[f"{name}_slope"] = _verdict(slope >= target,
                                                        f"slope {slope:.3f} vs target {target:.3f}")
    return report


# ------------------------------------------------------------------- a priori

APRIORI_QUANTITIES = ("sup_l2_c", "l2_grad_time", "sup_surface_l2", "sup_rf", "sup_rb")


def apriori_monitor(reports, kinetics, eps_list, spec=None, T=None):
    """Verdict table for a series of micro runs.

    Checks that each a-priori quantity stays within a factor
    ``APRIORI_RATIO`` across the series, that the barrier excess decays with
    a two-point slope of at least ``BARRIER_SLOPE``, and, when ``spec`` and
    ``T`` are given, that ``r_f + r_b`` respects the scalar supersolution.
    """
    summaries = [rep.summary() for rep in reports]
    table = {}
    for q in APRIORI_QUANTITIES:
        vals = np.array([s[q] for s in summaries])
        if np.all(vals == 0):
            table[q] = _verdict(True, "identically zero")
            continue
        ratio = float(vals.max() / vals.min()) if vals.min() > 0 else float("inf")
        table[q] = _verdict(ratio <= APRIORI_RATIO, f"max/min = {ratio:.3f}")
    ex = [s["barrier_excess"] for s in summaries]
    if all(v == 0 for v in ex):
        table["barrier_excess"] = _verdict(True, "identically zero")
    elif len(ex) >= 2 and min(ex[-2:]) > 0:
        slope = two_point_slope(eps_list[-2], ex[-2], eps_list[-1], ex[-1])
        table["barrier_excess"] = _verdict(slope >= BARRIER_SLOPE, f"two-point slope {slope:.3f}")
    else:
        table["barrier_excess"] = _verdict(ex[-1] <= ex[0], "excess vanishes at the finest eps")
    if spec is not None and T is not None:
        lo, hi = spec.omega.bounds()
        bound = kinetics.receptor_bound(T, lo, hi)
        worst = max(s["sup_receptor_sum"] for s in summaries)
        table["receptor_bound"] = _verdict(worst <= bound * (1 + 1e-9) + 1e-12,
                                           f"sup(r_f + r_b) = {worst:.4g} vs bound {bound:.4g}")
    return table


def apriori_study(spec, kinetics, eps_list, T, dt_rule=None, h_rule=None, mu=None, provenance=None):
    """Run micro at each ``eps`` and apply :func:`apriori_monitor`."""
    h_rule = h_rule or (lambda e: e / 8.0)
    dt_rule = dt_rule or (lambda e: e * e / 64.0)
    reports = []
    rows = []
    for e in eps_list:
        s = spec.replace(eps=float(e))
        run = run_micro(s, kinetics, h_rule(e), dt=dt_rule(e), T=T, mu=mu)
        reports.append(run.report)
        summ = run.report.summary()
        rows.append({"eps": float(e), **{q: summ[q] for q in APRIORI_QUANTITIES},
                     "barrier_excess": summ["barrier_excess"], "sup_receptor_sum": summ["sup_receptor_sum"]})
    fields = ("eps",) + APRIORI_QUANTITIES + ("barrier_excess", "sup_receptor_sum")
    report = StudyReport("apriori", fields, rows, provenance=dict(provenance or {}))
    report.verdicts = apriori_monitor(reports, kinetics, list(eps_list), spec=spec, T=T)
    return report
