"""Homogenized model on a macroscopic voxel grid.

Effective coefficients are computed by cell solves on a coarse anchor lattice
and interpolated trilinearly to the macro cells. Receptors live on a fixed
quadrature of one axial period of the cell's fiber surface at every node.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .cellsolver import EffectiveCache, build_reference_cell, effective_tensor, geometry_hash
from .errors import (CellSolveFailed, PlyHomogError, PositivityLost, SolverDiverged, SPDViolationAfterClamp,
                     ValidationError)
from .fvops import PAIRS, EnergyOperator, pcg
from .kinetics import barrier_constants
from .microgeom import Box, rotation_matrix
from .microsim import NEG_TOL, MonitorReport

SPD_FLOOR = 1e-10


@dataclass
class MacroAssembly:
    """Macro grid, interpolated coefficients, surface rules and state."""

    spec: object
    shape: tuple
    h: tuple
    origin: np.ndarray
    theta: np.ndarray
    tensor: np.ndarray
    q_weights: np.ndarray
    q_alpha: np.ndarray
    q_beta: np.ndarray
    q_local: np.ndarray
    op: EnergyOperator
    c: np.ndarray = None
    r_f: np.ndarray = None
    r_b: np.ndarray = None
    t: float = 0.0
    clamped: int = 0
    cross_scaled: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    anchors: dict = field(default_factory=dict)

    @property
    def volume(self):
        return float(np.prod(self.h))

    def centers(self):
        axes = [self.origin[d] + self.h[d] * (np.arange(self.shape[d]) + 0.5) for d in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def surface_measure(self):
        return self.q_weights.sum(axis=-1)

    def surface_average(self, values):
        w = self.q_weights
        return np.sum(w * values, axis=-1) / np.sum(w, axis=-1)


def _uniform_geometry(spec):
    return spec.gamma.is_constant and spec.rho.is_constant


def effective_lattice(spec, n_eff=9, n_cell=32, A=1.0, cache=None, tol=1e-10, workers=1):
    """``theta`` and ``A_eff`` on an ``n_eff^3`` lattice spanning the closed box.

    Uniform geometries need a single cell solve. Missing anchors are solved
    by up to ``workers`` threads; results are stored in index order.
    """
    lo, hi = spec.omega.bounds()
    if _uniform_geometry(spec):
        n_eff = 1
    axes = [np.array([0.5 * (l + u)]) if n_eff == 1 else np.linspace(l, u, n_eff) for l, u in zip(lo, hi)]
    theta = np.zeros((n_eff,) * 3)
    tensor = np.zeros((n_eff,) * 3 + (3, 3))
    todo = []
    for idx in np.ndindex(theta.shape):
        hit = cache.get(idx) if cache is not None else None
        if hit is not None:
            theta[idx], tensor[idx] = hit[0], hit[1]
        else:
            todo.append(idx)

    def solve(idx):
        x = np.array([axes[d][idx[d]] for d in range(3)])
        try:
            cell = build_reference_cell(spec, x, n=n_cell, A=A)
            return effective_tensor(cell, tol=tol)
        except PlyHomogError as err:
            raise CellSolveFailed(f"cell solve at {x} failed: {err}") from err

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, todo))
    else:
        results = [solve(idx) for idx in todo]
    for idx, ef in zip(todo, results):
        theta[idx], tensor[idx] = ef.theta, ef.tensor
        if cache is not None:
            cache.put(idx, ef.theta, ef.tensor, ef.residual)
    return axes, theta, tensor


def interpolate_coefficients(axes, theta, tensor, points):
    """Trilinear interpolation of ``theta`` and the tensor, then SPD repair.

    Returns ``(theta, tensor, n_clamped)``; eigenvalues below ``SPD_FLOOR`` are
    raised to it.
    """
    shape = points.shape[:-1]
    pts = points.reshape(-1, 3)
    if theta.size == 1:
        th = np.full(len(pts), float(theta.ravel()[0]))
        te = np.broadcast_to(tensor.reshape(3, 3), (len(pts), 3, 3)).copy()
    else:
        th = RegularGridInterpolator(axes, theta)(pts)
        te = RegularGridInterpolator(axes, tensor.reshape(theta.shape + (9,)))(pts).reshape(-1, 3, 3)
    te = 0.5 * (te + np.transpose(te, (0, 2, 1)))
    lam, vec = np.linalg.eigh(te)
    bad = lam.min(axis=1) < SPD_FLOOR
    n_clamped = int(bad.sum())
    if n_clamped:
        lam_c = np.maximum(lam[bad], SPD_FLOOR)
        te[bad] = np.einsum("nij,nj,nkj->nik", vec[bad], lam_c, vec[bad])
        if np.linalg.eigvalsh(te[bad]).min() < 0.5 * SPD_FLOOR:
            raise SPDViolationAfterClamp("interpolated tensor stays indefinite after eigenvalue clamping")
    return th.reshape(shape), te.reshape(shape + (3, 3)), n_clamped


def macro_operator(tensor, h):
    """Energy operator for ``-div(A grad c)`` with no-flux walls.

    Face coefficients average the two adjacent cells; cross coefficients
    average the eight cells of a block. If a block's matrix (minimal face
    coefficient per direction on the diagonal) is not positive semi-definite
    its cross entries are scaled down until it is.
    """
    shape = tensor.shape[:3]
    face = []
    for d in range(3):
        f = 0.5 * (tensor[..., d, d] + np.roll(tensor[..., d, d], -1, d))
        idx = [slice(None)] * 3
        idx[d] = -1
        f[tuple(idx)] = 0.0
        face.append(f)
    cross = {}
    n_scaled = 0
    if np.any(np.abs(tensor[..., [0, 0, 1], [1, 2, 2]]) > 0):
        wrap = np.zeros(shape, bool)
        for d in range(3):
            idx = [slice(None)] * 3
            idx[d] = -1
            wrap[tuple(idx)] = True
        blocks = tensor.copy()
        for d in range(3):
            blocks = 0.5 * (blocks + np.roll(blocks, -1, d))
        M = np.zeros(shape + (3, 3))
        for d in range(3):
            fmin = face[d]
            e, f_ = [k for k in range(3) if k != d]
            fmin = np.minimum(fmin, np.roll(fmin, -1, e))
            fmin = np.minimum(fmin, np.roll(fmin, -1, f_))
            M[..., d, d] = fmin
        for d, e in PAIRS:
            M[..., d, e] = M[..., e, d] = blocks[..., d, e]
        scale = np.ones(shape)
        active = ~wrap
        for _ in range(60):
            Ms = M.copy()
            for d, e in PAIRS:
                Ms[..., d, e] *= scale
                Ms[..., e, d] *= scale
            lam = np.linalg.eigvalsh(Ms[active]).min(axis=1)
            neg = lam < 0
            if not neg.any():
                break
            sub = scale[active]
            sub[neg] *= 0.9
            scale[active] = sub
        n_scaled = int(np.sum(scale[active] < 1))
        for d, e in PAIRS:
            cross[(d, e)] = np.where(wrap, 0.0, blocks[..., d, e] * scale)
    op = EnergyOperator(h=h, face=face, cross=cross)
    op.n_scaled = n_scaled
    return op


def surface_rules(spec, kinetics, points, n_axial=8, n_angular=16):
    """Per-node quadrature of one axial fiber period.

    Local points are ``K_x yh`` on the centered cell; physical offsets are
    ``R_x K_x yh``; weights sum to ``2 pi rho(x) a``. The periodized rates
    reduce to ``alpha(x, K_x yh)`` on the base cell.
    """
    pts = points.reshape(-1, 3)
    t = -0.5 + (np.arange(n_axial) + 0.5) / n_axial
    phi = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    T, P = np.meshgrid(t, phi, indexing="ij")
    T, P = T.ravel(), P.ravel()
    radius = spec.rho(pts) * spec.a
    Q = len(T)
    local = np.empty((len(pts), Q, 3))
    local[..., 0] = T
    local[..., 1] = radius[:, None] * np.cos(P)
    local[..., 2] = radius[:, None] * np.sin(P)
    weights = np.repeat((radius * 2 * np.pi / Q)[:, None], Q, axis=1)
    xs = np.repeat(pts[:, None, :], Q, axis=1).reshape(-1, 3)
    alpha = kinetics.alpha(xs, local.reshape(-1, 3)).reshape(len(pts), Q)
    beta = kinetics.beta(xs, local.reshape(-1, 3)).reshape(len(pts), Q)
    shape = points.shape[:-1]
    return (weights.reshape(shape + (Q,)), alpha.reshape(shape + (Q,)), beta.reshape(shape + (Q,)),
            local.reshape(shape + (Q, 3)))


def assemble_macro(spec, kinetics, n_macro, n_effective_lattice=9, n_cell=32, cache_path=None,
                   n_axial=8, n_angular=16, tol=1e-10):
    """Build the macro grid, coefficients, surface rules and initial state."""
    if not isinstance(spec.omega, Box):
        raise ValidationError("the macro grid needs a box")
    lo, hi = spec.omega.bounds()
    kinetics.validate(lo, hi)
    shape = (int(n_macro),) * 3
    h = tuple((hi - lo) / n_macro)
    cache = EffectiveCache(cache_path, geometry_hash(spec, n_cell, kinetics.A) + f"-lattice{n_effective_lattice}")
    axes, th_a, te_a = effective_lattice(spec, n_effective_lattice, n_cell, kinetics.A, cache, tol)
    cache.save()
    asm = MacroAssembly(spec=spec, shape=shape, h=h, origin=np.asarray(lo, float), theta=None, tensor=None,
                        q_weights=None, q_alpha=None, q_beta=None, q_local=None, op=None)
    X = asm.centers()
    theta, tensor, n_clamped = interpolate_coefficients(axes, th_a, te_a, X)
    op = macro_operator(tensor, h)
    w, a, b, local = surface_rules(spec, kinetics, X, n_axial, n_angular)
    asm.theta, asm.tensor, asm.op = theta, tensor, op
    asm.q_weights, asm.q_alpha, asm.q_beta, asm.q_local = w, a, b, local
    asm.clamped, asm.cross_scaled = n_clamped, op.n_scaled
    asm.cache_hits, asm.cache_misses = cache.hits, cache.misses
    asm.anchors = {"axes": axes, "theta": th_a, "tensor": te_a}
    init_macro_state(asm, kinetics)
    return asm


def init_macro_state(asm, kinetics):
    X = asm.centers()
    asm.c = kinetics.c0(X)
    xs = np.broadcast_to(X[..., None, :], asm.q_local.shape)
    asm.r_f = kinetics.rf0_1(xs) * kinetics.rf0_2(asm.q_local)
    asm.r_b = kinetics.rb0_1(xs) * kinetics.rb0_2(asm.q_local)
    asm.t = 0.0
    return asm


def _static_receptors(kinetics, asm):
    p = kinetics.p
    no_prod = (p.kind == "saturating" and p.p0 == 0) or (p.kind == "affine" and p.p0 == 0 and p.p1 == 0)
    return (no_prod and kinetics.d_f == 0 and kinetics.d_b == 0
            and not np.any(asm.q_alpha) and not np.any(asm.q_beta))


def step_macro(asm, kinetics, dt, tol=1e-10):
    """One IMEX step, same splitting as the microscopic solver."""
    V = asm.volume
    th = asm.theta
    c, rf, rb = asm.c, asm.r_f, asm.r_b
    w = asm.q_weights
    Fc = kinetics.F(c)
    Fp = kinetics.F.derivative(c)
    sink = V * np.sum(w * asm.q_alpha * rf, axis=-1)
    source = V * np.sum(w * asm.q_beta * rb, axis=-1)
    extra = V * th / dt - 0.5 * V * th * Fp + sink
    if np.any(extra <= 0):
        raise SolverDiverged("time step too large for the implicit reaction part")
    rhs = V * th / dt * c + V * th * (Fc - 0.5 * Fp * c) + source
    op = asm.op

    def apply(u):
        return op.apply(u) + extra * u

    c_new, hist = pcg(apply, rhs, op.diagonal() + extra, x0=c, tol=tol, active=np.ones(c.shape, bool))
    if not np.all(np.isfinite(c_new)):
        raise SolverDiverged("non-finite concentration")
    if _static_receptors(kinetics, asm):
        asm.c = c_new
        asm.t += dt
        if c_new.min() < -NEG_TOL:
            raise PositivityLost(f"negative concentration at t = {asm.t:.4g}")
        return asm
    J = asm.q_alpha * rf * c_new[..., None] - asm.q_beta * rb
    p = kinetics.p
    pb = p(rb)
    rf_pred = rf + dt * (pb - J - kinetics.d_f * rf)
    rb_pred = rb + dt * (J - kinetics.d_b * rb)
    rf_new = rf + dt * (0.5 * (pb + p(rb_pred)) - J - 0.5 * kinetics.d_f * (rf + rf_pred))
    rb_new = rb + dt * (J - 0.5 * kinetics.d_b * (rb + rb_pred))
    if c_new.min() < -NEG_TOL or min(rf_new.min(), rb_new.min()) < -NEG_TOL:
        raise PositivityLost(f"negative values at t = {asm.t + dt:.4g}")
    asm.c, asm.r_f, asm.r_b = c_new, rf_new, rb_new
    asm.t += dt
    return asm


def macro_monitors(asm, barrier=None):
    V = asm.volume
    th = asm.theta
    c = asm.c
    out = {
        "t": asm.t,
        "mass": float(V * np.sum(th * c)),
        "min_c": float(c.min()),
        "max_c": float(c.max()),
        "l2_c": float(np.sqrt(V * np.sum(th * c * c))),
        "l2_grad": float(np.sqrt(max(asm.op.energy(c), 0.0))),
        "barrier_excess": 0.0,
        "sup_rf": float(asm.r_f.max()),
        "sup_rb": float(asm.r_b.max()),
        "receptor_mass": float(V * np.sum(asm.q_weights * asm.r_b)),
        "sup_receptor_sum": float((asm.r_f + asm.r_b).max()),
        "mean_rf": float(np.mean(asm.surface_average(asm.r_f))),
        "mean_rb": float(np.mean(asm.surface_average(asm.r_b))),
    }
    if barrier is not None:
        M1, M2 = barrier
        ex = np.maximum(c - M1 * np.exp(M2 * asm.t), 0.0)
        out["barrier_excess"] = float(np.sqrt(V * np.sum(th * ex * ex)))
    return out


@dataclass
class MacroRun:
    assembly: MacroAssembly
    snapshots: list
    report: MonitorReport


def run_macro(spec, kinetics, n_macro, dt, T, assembly=None, n_snapshots=16, mu=None, **assemble_kw):
    """Advance the homogenized model to ``T``; snapshots as in :func:`run_micro`.

    Each snapshot holds ``(t, c, surface-averaged r_f, surface-averaged r_b)``.
    """
    asm = assembly if assembly is not None else assemble_macro(spec, kinetics, n_macro, **assemble_kw)
    init_macro_state(asm, kinetics)
    barrier = barrier_constants(kinetics, spec, T, mu=mu)
    rows = [macro_monitors(asm, barrier)]
    snaps = [(0.0, asm.c.copy(), asm.surface_average(asm.r_f), asm.surface_average(asm.r_b))]
    times = np.linspace(0.0, T, n_snapshots)
    for t_next in times[1:]:
        n_sub = max(1, int(np.ceil((t_next - asm.t) / dt - 1e-9)))
        sub = (t_next - asm.t) / n_sub
        for _ in range(n_sub):
            step_macro(asm, kinetics, sub)
            rows.append(macro_monitors(asm, barrier))
        asm.t = float(t_next)
        rows[-1]["t"] = float(t_next)
        snaps.append((asm.t, asm.c.copy(), asm.surface_average(asm.r_f), asm.surface_average(asm.r_b)))
    return MacroRun(assembly=asm, snapshots=snaps, report=MonitorReport(rows, barrier, tag="macro"))


def rotated_reference(tensor0, angle):
    """``R(angle) A0 R(angle)^T``, vectorized over ``angle``."""
    R = rotation_matrix(angle)
    return R @ tensor0 @ np.swapaxes(R, -1, -2)
