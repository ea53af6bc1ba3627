"""Direct simulation of the microscopic signalling model on a voxel grid.

Voxels carry their fluid volume fraction and the concentration; faces conduct
with the harmonic mean of the two fractions. Every voxel cut by a fiber
surface carries one free/bound receptor pair on a surface patch; patch areas
are rescaled per fiber so that each fiber's total equals the exact lateral
area ``2 pi rho a eps^2``.

One time step (``IMEX``):

* diffusion by backward Euler;
* ``F`` linearly implicit, ``c' - c = dt [F(c) + F'(c)(c' - c)/2]``;
* boundary exchange ``J = alpha r_f c' - beta r_b`` with ``r`` frozen, so the
  sink is implicit in ``c`` and the same ``J`` enters the receptor update,
  which makes ``int c + eps sum |f| r_b`` exactly conserved without production
  and decay;
* production and decay of receptors by a trapezoidal predictor-corrector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (DisconnectedFluid, NegativeInitialData, PositivityLost, ResolutionTooCoarse,
                     SolverDiverged, ValidationError)
from .fvops import EnergyOperator, pcg
from .kinetics import barrier_constants, kinetic_lipschitz
from .microgeom import Box, Phase, classify_nonperiodic, lattice_centers, rotation_matrix

MONITOR_FIELDS = ("t", "mass", "min_c", "max_c", "l2_c", "l2_grad", "barrier_excess", "sup_rf", "sup_rb")
NEG_TOL = 1e-8
SUBSAMPLES = 4
FRACTION_MIN = 0.02


@dataclass
class VoxelDomain:
    """Voxelized perforated domain with partial volumes.

    ``fraction`` is the fluid volume fraction of each voxel; voxels with at
    least ``FRACTION_MIN`` are active (``fluid``). Each cut voxel carries one
    surface patch; patch arrays are indexed by patch: ``face_voxel`` (flat voxel
    index), ``face_cell`` (row of ``cell_k``), ``face_weight`` (area),
    ``face_y`` (centered-cell coordinate on the fiber surface), ``face_x``
    (the corresponding physical surface point) and ``face_normal`` (out of the
    fiber).
    """

    spec: object
    h: float
    shape: tuple
    origin: np.ndarray
    fraction: np.ndarray
    fluid: np.ndarray
    face_voxel: np.ndarray
    face_cell: np.ndarray
    face_weight: np.ndarray
    face_y: np.ndarray
    face_x: np.ndarray
    face_normal: np.ndarray
    cell_k: np.ndarray
    surface_area_scale: np.ndarray

    @property
    def n_faces(self):
        return len(self.face_voxel)

    @property
    def voxel_volume(self):
        return self.h**3

    @property
    def volumes(self):
        """Fluid volume of each voxel (zero for inactive voxels)."""
        return np.where(self.fluid, self.fraction, 0.0) * self.h**3

    def centers(self):
        axes = [self.origin[d] + self.h * (np.arange(self.shape[d]) + 0.5) for d in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def fluid_fraction(self):
        return float(np.sum(np.where(self.fluid, self.fraction, 0.0)) / self.fraction.size)

    def cell_areas(self):
        return np.bincount(self.face_cell, self.face_weight, minlength=len(self.cell_k))


def _subsample_offsets(S):
    t = (np.arange(S) + 0.5) / S - 0.5
    return np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)


def build_voxel_domain(spec, h):
    """Voxelize the exact geometry with spacing ``h`` (at least 8 voxels per cell).

    Voxels whose corners and center agree are taken as pure; the others are
    sub-sampled on a ``SUBSAMPLES^3`` grid for their fluid fraction and the
    area of the fiber surface they contain (line-crossing count divided by the
    l1 norm of the normal). Areas are then rescaled per fiber to the exact
    lateral area ``2 pi rho a eps^2``.
    """
    if not isinstance(spec.omega, Box):
        raise ValidationError("the voxel domain needs a box")
    if h > spec.eps / 8 * (1 + 1e-9):
        raise ResolutionTooCoarse(f"h = {h:.4g} exceeds eps/8 = {spec.eps / 8:.4g}")
    lo, hi = spec.omega.bounds()
    shape = tuple(int(round(L / h)) for L in hi - lo)
    if any(abs(m * h - L) > 1e-9 * max(1.0, L) for m, L in zip(shape, hi - lo)):
        raise ValidationError(f"h = {h} does not divide the box edges {hi - lo}")
    N = int(np.prod(shape))
    axes = [lo[d] + h * (np.arange(shape[d]) + 0.5) for d in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    # vertices are nudged inwards so the box faces count as inside
    vaxes = [np.clip(lo[d] + h * np.arange(shape[d] + 1), lo[d] + 1e-12, hi[d] - 1e-12) for d in range(3)]
    XV = np.stack(np.meshgrid(*vaxes, indexing="ij"), axis=-1).reshape(-1, 3)
    fib_c = (classify_nonperiodic(spec, X) == Phase.FIBER).reshape(shape)
    fib_v = (classify_nonperiodic(spec, XV) == Phase.FIBER).reshape(tuple(m + 1 for m in shape))
    nv = np.zeros(shape, int)
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                nv += fib_v[i:i + shape[0], j:j + shape[1], k:k + shape[2]]
    nfib = nv + fib_c
    mixed = ((nfib > 0) & (nfib < 9)).reshape(-1)
    fraction = np.where(nfib == 9, 0.0, 1.0).reshape(-1)

    S = SUBSAMPLES
    offs = _subsample_offsets(S) * h
    mid = np.nonzero(mixed)[0]
    face_vox, face_cell_k, face_area, face_y = [], [], [], []
    for chunk in np.array_split(mid, max(1, len(mid) // 20000 + 1)):
        if chunk.size == 0:
            continue
        P = (X[chunk][:, None, :] + offs[None]).reshape(-1, 3)
        ph, kk = classify_nonperiodic(spec, P, return_cell=True)
        fib = (ph == Phase.FIBER).reshape(len(chunk), S, S, S)
        fraction[chunk] = 1.0 - fib.mean(axis=(1, 2, 3))
        crossings = sum(np.sum(np.diff(fib, axis=d + 1) != 0, axis=(1, 2, 3)) for d in range(3))
        has = fib.reshape(len(chunk), -1).any(axis=1) & (crossings > 0)
        first = np.argmax(fib.reshape(len(chunk), -1), axis=1)
        owner = kk.reshape(len(chunk), -1, 3)[np.arange(len(chunk)), first]
        face_vox.append(chunk[has])
        face_cell_k.append(owner[has])
        face_area.append(crossings[has] * (h / S) ** 2 * S / (S - 1))
    face_vox = np.concatenate(face_vox) if face_vox else np.zeros(0, np.int64)
    k = np.concatenate(face_cell_k) if face_cell_k else np.zeros((0, 3), np.int64)
    area = np.concatenate(face_area) if face_area else np.zeros(0)

    fraction = fraction.reshape(shape)
    fluid = fraction >= FRACTION_MIN
    labels, ncomp = ndimage.label(fluid)
    if ncomp != 1:
        raise DisconnectedFluid(f"fluid voxels form {ncomp} components")
    keep = fluid.reshape(-1)[face_vox]
    face_vox, k, area = face_vox[keep], k[keep], area[keep]

    centers = lattice_centers(spec, k)
    R = rotation_matrix(spec.gamma(spec.eps * k[:, 2]))
    y = np.einsum("nji,nj->ni", R, X[face_vox] - centers) / spec.eps
    lateral = np.abs(y[:, 0]) <= 0.5
    # patches beyond the fiber ends sit on end caps: no-flux, no receptors
    face_vox, k, y, centers, R, area = (face_vox[lateral], k[lateral], y[lateral], centers[lateral],
                                        R[lateral], area[lateral])
    radius = spec.rho(centers) * spec.a
    rr = np.hypot(y[:, 1], y[:, 2])
    rr = np.where(rr > 0, rr, 1.0)
    n_loc = np.stack([np.zeros_like(rr), y[:, 1] / rr, y[:, 2] / rr], axis=1)
    normals = np.einsum("nij,nj->ni", R, n_loc)
    area = area / np.maximum(np.abs(normals).sum(axis=1), 1.0)
    y_ref = np.stack([y[:, 0], radius * n_loc[:, 1], radius * n_loc[:, 2]], axis=1)
    x_ref = centers + spec.eps * np.einsum("nij,nj->ni", R, y_ref)
    cell_k, face_cell = np.unique(k.reshape(-1, 3), axis=0, return_inverse=True)
    face_cell = face_cell.ravel()
    raw = np.bincount(face_cell, weights=area, minlength=len(cell_k))
    exact = 2 * np.pi * spec.rho(lattice_centers(spec, cell_k)) * spec.a * spec.eps**2
    scale = exact / raw
    return VoxelDomain(spec=spec, h=float(h), shape=shape, origin=np.asarray(lo, float), fraction=fraction,
                       fluid=fluid, face_voxel=face_vox, face_cell=face_cell, face_weight=area * scale[face_cell],
                       face_y=y_ref, face_x=x_ref, face_normal=normals, cell_k=cell_k, surface_area_scale=scale)


@dataclass
class SimState:
    t: float
    c: np.ndarray
    r_f: np.ndarray
    r_b: np.ndarray
    monitors: dict = field(default_factory=dict)

    def copy(self):
        return SimState(self.t, self.c.copy(), self.r_f.copy(), self.r_b.copy(), dict(self.monitors))


class MicroSystem:
    """Precomputed operator and face rates for one domain and kinetics."""

    def __init__(self, domain, kinetics, tol=1e-10):
        self.domain = domain
        self.kinetics = kinetics
        self.tol = tol
        fl = domain.fluid
        f = np.where(fl, domain.fraction, 0.0)
        face = []
        for d in range(3):
            fn = np.roll(f, -1, d)
            c = np.where(f + fn > 0, 2 * f * fn / np.where(f + fn > 0, f + fn, 1.0), 0.0)
            idx = [slice(None)] * 3
            idx[d] = -1
            c[tuple(idx)] = 0.0
            face.append(kinetics.A * c)
        self.op = EnergyOperator(h=(domain.h,) * 3, face=face, cross={})
        self.alpha = kinetics.alpha(domain.face_x, domain.face_y)
        self.beta = kinetics.beta(domain.face_x, domain.face_y)
        self.eps_w = domain.spec.eps * domain.face_weight
        self.V = domain.volumes
        self.N = int(np.prod(domain.shape))

    def to_voxels(self, per_face):
        return np.bincount(self.domain.face_voxel, per_face, minlength=self.N).reshape(self.domain.shape)

    def face_values(self, c):
        return c.reshape(-1)[self.domain.face_voxel]


def init_state(domain, kinetics):
    """Initial concentration at fluid voxel centers and product-form receptor data."""
    c = np.where(domain.fluid, kinetics.c0(domain.centers()), 0.0)
    rf = kinetics.rf0_1(domain.face_x) * kinetics.rf0_2(domain.face_y)
    rb = kinetics.rb0_1(domain.face_x) * kinetics.rb0_2(domain.face_y)
    if c.min() < 0 or (rf.size and rf.min() < 0) or (rb.size and rb.min() < 0):
        raise NegativeInitialData("initial concentration and receptor densities must be non-negative")
    state = SimState(0.0, c, rf, rb)
    return state


def step_micro(state, domain, kinetics, dt, system=None):
    """Advance one IMEX step of length ``dt``."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    sysm = system if system is not None else MicroSystem(domain, kinetics)
    kin = kinetics
    fl = domain.fluid
    V = sysm.V
    c, rf, rb = state.c, state.r_f, state.r_b
    Fc = np.where(fl, kin.F(c), 0.0)
    Fp = np.where(fl, kin.F.derivative(c), 0.0)
    sink = sysm.to_voxels(sysm.eps_w * sysm.alpha * rf)
    source = sysm.to_voxels(sysm.eps_w * sysm.beta * rb)
    extra = np.where(fl, V / dt - 0.5 * V * Fp + sink, 0.0)
    if np.any(extra[fl] <= 0):
        raise SolverDiverged("time step too large for the implicit reaction part (1 - dt F'/2 <= 0)")
    rhs = np.where(fl, V / dt * c + V * (Fc - 0.5 * Fp * c) + source, 0.0)
    op = sysm.op

    def apply(u):
        return op.apply(u) + extra * u

    c_new, hist = pcg(apply, rhs, op.diagonal() + extra, x0=c, tol=sysm.tol, active=fl)
    if not np.all(np.isfinite(c_new)):
        raise SolverDiverged("non-finite concentration")
    cf = sysm.face_values(c_new)
    J = sysm.alpha * rf * cf - sysm.beta * rb
    p, d_f, d_b = kin.p, kin.d_f, kin.d_b
    pb = p(rb)
    rf_pred = rf + dt * (pb - J - d_f * rf)
    rb_pred = rb + dt * (J - d_b * rb)
    rf_new = rf + dt * (0.5 * (pb + p(rb_pred)) - J - 0.5 * d_f * (rf + rf_pred))
    rb_new = rb + dt * (J - 0.5 * d_b * (rb + rb_pred))
    if c_new[fl].min() < -NEG_TOL or (rf_new.size and min(rf_new.min(), rb_new.min()) < -NEG_TOL):
        raise PositivityLost(f"negative values at t = {state.t + dt:.4g}: min c {c_new[fl].min():.3e}, "
                             f"min r_f {rf_new.min() if rf_new.size else 0:.3e}, "
                             f"min r_b {rb_new.min() if rb_new.size else 0:.3e}")
    new = SimState(state.t + dt, c_new, rf_new, rb_new, {"iterations": len(hist) - 1, "residual": hist[-1]})
    return new


def monitors(state, system, barrier=None):
    """Monitor scalars of a state; ``barrier`` is ``(M1, M2)`` or None."""
    dom = system.domain
    fl = dom.fluid
    c = state.c
    V = system.V[fl]
    vals = c[fl]
    grad_sq = system.op.energy(c) / system.kinetics.A
    out = {
        "t": state.t,
        "mass": float(np.sum(V * vals)),
        "min_c": float(vals.min()),
        "max_c": float(vals.max()),
        "l2_c": float(np.sqrt(np.sum(V * vals**2))),
        "l2_grad": float(np.sqrt(max(grad_sq, 0.0))),
        "barrier_excess": 0.0,
        "sup_rf": float(state.r_f.max()) if state.r_f.size else 0.0,
        "sup_rb": float(state.r_b.max()) if state.r_b.size else 0.0,
    }
    if barrier is not None:
        M1, M2 = barrier
        ex = np.maximum(vals - M1 * np.exp(M2 * state.t), 0.0)
        out["barrier_excess"] = float(np.sqrt(np.sum(V * ex**2)))
    cf = system.face_values(c)
    out["surface_l2"] = float(np.sqrt(np.sum(system.eps_w * cf**2)))
    out["receptor_mass"] = float(np.sum(system.eps_w * state.r_b))
    out["sup_receptor_sum"] = float((state.r_f + state.r_b).max()) if state.r_f.size else 0.0
    return out


@dataclass
class MonitorReport:
    rows: list
    barrier: tuple
    tag: str = "micro"

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def as_rows(self, fields=MONITOR_FIELDS):
        return [{k: r[k] for k in fields} for r in self.rows]

    def summary(self):
        """Uniform-in-time a-priori quantities of the run."""
        t = self.column("t")
        g2 = self.column("l2_grad") ** 2
        grad_time = float(np.sqrt(np.sum(0.5 * (g2[1:] + g2[:-1]) * np.diff(t)))) if len(t) > 1 else 0.0
        return {
            "sup_l2_c": float(self.column("l2_c").max()),
            "l2_grad_time": grad_time,
            "sup_surface_l2": float(self.column("surface_l2").max()) if "surface_l2" in self.rows[0] else 0.0,
            "sup_rf": float(self.column("sup_rf").max()),
            "sup_rb": float(self.column("sup_rb").max()),
            "sup_receptor_sum": float(self.column("sup_receptor_sum").max()) if "sup_receptor_sum" in self.rows[0] else 0.0,
            "barrier_excess": float(self.column("barrier_excess").max()),
        }


@dataclass
class MicroRun:
    domain: VoxelDomain
    final: SimState
    snapshots: list
    report: MonitorReport


def default_dt(h, kinetics, c_bound, spec):
    lip = kinetic_lipschitz(kinetics, c_bound, spec)
    dt = h * h / (6 * kinetics.A)
    if lip > 0:
        dt = min(dt, 0.25 / lip)
    return dt


def snapshot_times(T, n_snapshots):
    return np.linspace(0.0, T, n_snapshots)


def run_micro(spec, kinetics, h, dt=None, T=1.0, n_snapshots=16, mu=None, domain=None,
              tol=1e-10, check_stability=True):
    """Run the microscopic model to ``T`` recording monitors every step.

    Snapshots (copies of the state) are taken at ``n_snapshots`` equally
    spaced times including 0 and ``T``; ``dt`` is shortened so that the
    snapshot times are hit exactly.
    """
    lo, hi = spec.omega.bounds()
    kinetics.validate(lo, hi)
    domain = build_voxel_domain(spec, h) if domain is None else domain
    system = MicroSystem(domain, kinetics, tol=tol)
    barrier = barrier_constants(kinetics, spec, T, mu=mu)
    c_bound = max(barrier[0] * np.exp(barrier[1] * T), 1e-300)
    if dt is None:
        dt = default_dt(h, kinetics, c_bound, spec)
    if check_stability:
        lip = kinetic_lipschitz(kinetics, c_bound, spec)
        if dt * lip > 0.5 + 1e-12:
            raise ValidationError(f"dt = {dt:.3g} violates dt*Lip <= 0.5 (Lip = {lip:.3g})")
    state = init_state(domain, kinetics)
    times = snapshot_times(T, n_snapshots)
    rows = [monitors(state, system, barrier)]
    snaps = [state.copy()]
    for t_next in times[1:]:
        n_sub = max(1, int(np.ceil((t_next - state.t) / dt - 1e-9)))
        sub = (t_next - state.t) / n_sub
        for _ in range(n_sub):
            state = step_micro(state, domain, kinetics, sub, system=system)
            rows.append(monitors(state, system, barrier))
        state.t = float(t_next)
        rows[-1]["t"] = float(t_next)
        snaps.append(state.copy())
    return MicroRun(domain=domain, final=state, snapshots=snaps, report=MonitorReport(rows, barrier))


def extend_field(state, domain, sweeps=3):
    """Fill fiber voxels by neighbor averaging.

    Hole voxels are first filled layer by layer from the average of their
    already known face neighbors, then smoothed by ``sweeps`` Jacobi sweeps of
    the neighbor average (fluid values stay fixed). Every filled value is an
    average of known values, so the extension stays within the fluid range.
    """
    c = np.where(domain.fluid, state.c, 0.0).astype(float)
    known = domain.fluid.copy()
    hole = ~domain.fluid
    shape = domain.shape

    def neighbor_sums(values, weights):
        tot = np.zeros(shape)
        cnt = np.zeros(shape)
        for d in range(3):
            for s in (1, -1):
                v = np.roll(values * weights, s, d)
                w = np.roll(weights, s, d)
                idx = [slice(None)] * 3
                idx[d] = 0 if s == 1 else -1
                v[tuple(idx)] = 0.0
                w[tuple(idx)] = 0.0
                tot += v
                cnt += w
        return tot, cnt

    while not known.all():
        tot, cnt = neighbor_sums(c, known.astype(float))
        front = ~known & (cnt > 0)
        if not front.any():
            break
        c[front] = tot[front] / cnt[front]
        known |= front
    ones = np.ones(shape)
    for _ in range(sweeps):
        tot, cnt = neighbor_sums(c, ones)
        c = np.where(hole, tot / np.maximum(cnt, 1), c)
    return c
