"""Unit cell problems of the plywood structure and the effective tensor.

The physical cell ``D_x Y`` with holes around the corner edges is pulled back
to the reference cube ``Y = (0,1)^3``. There the holes are the sheared
cylinders ``{z : |(W_x (z - k))^| <= rho(x) a}``, the operator has the constant
metric ``G = D^{-1} A D^{-T} |det D| = A W^{-1} W^{-T}`` and the correctors are
1-periodic. Two facts keep the solves small:

* the holes do not depend on ``z1`` and ``G`` has no ``(1, 2)``/``(1, 3)``
  entries, so the correctors are ``z1``-independent and one layer of voxels
  along ``z1`` is exact;
* ``W`` and ``W`` with the shear shifted by an integer generate the same
  lattice, so the shear is reduced to ``[-1/2, 1/2]`` without changing the
  physical cell problem.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AsymmetryExceeded, DegenerateCell, ValidationError
from .fvops import EnergyOperator, mean_projector, pcg
from .microgeom import rotation_matrix, shear_matrix, transforms_at
from .rng import stream

SUBSAMPLES = 8
CACHE_VERSION = 1


def hole_indicator(z2, z3, w, radius):
    """True inside the sheared corner holes, nearest image only (``radius < 1/2``)."""
    k3 = np.rint(z3)
    t3 = z3 - k3
    v2 = z2 + w * t3
    t2 = v2 - np.rint(v2)
    return t2 * t2 + t3 * t3 <= radius * radius


@dataclass(frozen=True)
class ReferenceCell:
    """Voxelized reference cell.

    ``fraction`` holds the fluid volume fraction of each voxel (partial volume
    from ``SUBSAMPLES**2`` sub-samples across the fiber plane); ``fluid_mask``
    thresholds it at 1/2. Arrays have shape ``(n_axial, n, n)``.
    """

    x_anchor: np.ndarray
    transform: object
    w_reduced: float
    radius: float
    n: int
    n_axial: int
    fraction: np.ndarray
    A: float

    @property
    def fluid_mask(self):
        return self.fraction >= 0.5

    @property
    def metric(self):
        w = self.w_reduced
        return self.A * np.array([[1.0, 0.0, 0.0], [0.0, 1.0 + w * w, -w], [0.0, -w, 1.0]])

    @property
    def D_reduced(self):
        return self.transform.R @ shear_matrix(self.w_reduced)

    @property
    def theta(self):
        return float(self.fraction.mean())


def build_reference_cell(spec, x, n=64, A=1.0, n_axial=1, min_fraction=0.05):
    """Voxelize the reference cell at ``x`` on an ``n_axial x n x n`` grid."""
    if n < 16:
        raise ValidationError(f"cell resolution must be at least 16, got {n}")
    x = np.asarray(x, float).reshape(3)
    tr = transforms_at(spec, x)
    w = tr.w - np.rint(tr.w)
    radius = tr.rho * spec.a
    m = n * SUBSAMPLES
    t = (np.arange(m) + 0.5) / m
    Z2, Z3 = np.meshgrid(t, t, indexing="ij")
    holes = hole_indicator(Z2, Z3, w, radius)
    frac2d = 1.0 - holes.reshape(n, SUBSAMPLES, n, SUBSAMPLES).mean(axis=(1, 3))
    fraction = np.broadcast_to(frac2d, (n_axial, n, n)).copy()
    if fraction.mean() < min_fraction:
        raise DegenerateCell(f"fluid fraction {fraction.mean():.3g} below {min_fraction}")
    return ReferenceCell(x_anchor=x, transform=tr, w_reduced=float(w), radius=float(radius),
                         n=int(n), n_axial=int(n_axial), fraction=fraction, A=float(A))


def _harmonic(a, b):
    s = a + b
    return np.where(s > 0, 2 * a * b / np.where(s > 0, s, 1.0), 0.0)


def cell_operator(cell):
    """Energy operator of the pulled-back cell problem.

    Face coefficients are harmonic means of the voxel fractions, so a face next
    to a fully solid voxel carries no flux; cross terms are weighted by the
    smallest fraction in their block, which keeps every block form
    non-negative.
    """
    G = cell.metric
    f = cell.fraction
    face = [G[d, d] * _harmonic(f, np.roll(f, -1, d)) for d in range(3)]
    cross = {}
    if abs(G[1, 2]) > 0:
        kappa = f
        for d in range(3):
            kappa = np.minimum(kappa, np.roll(kappa, -1, d))
        cross[(1, 2)] = G[1, 2] * kappa
    h = (1.0 / cell.n_axial, 1.0 / cell.n, 1.0 / cell.n)
    return EnergyOperator(h=h, face=face, cross=cross)


@dataclass
class CorrectorSolution:
    field: np.ndarray
    history: list
    m: int


def solve_reference_corrector(cell, m, tol=1e-10, maxiter=5000, op=None):
    """Corrector ``chi^m`` of the reference problem ``div(G (grad chi + e_m)) = 0``."""
    op = cell_operator(cell) if op is None else op
    v = np.zeros(3)
    v[m] = 1.0
    b = op.source(v)
    diag = op.diagonal()
    active = diag > 0
    chi, hist = pcg(op.apply, b, diag, tol=tol, maxiter=maxiter, active=active,
                    project=mean_projector(active))
    return CorrectorSolution(field=chi, history=hist, m=m)


def solve_corrector(cell, j, tol=1e-10, maxiter=5000):
    """Physical corrector ``w^j`` (``j`` in 1..3) on the reference grid.

    ``w^j(D z) = sum_m D_jm chi^m(z)`` with ``D`` the reduced-shear matrix;
    the result has zero mean over the fluid volume.
    """
    if j not in (1, 2, 3):
        raise ValidationError("j must be 1, 2 or 3")
    D = cell.D_reduced
    sols = [solve_reference_corrector(cell, m, tol, maxiter) for m in range(3)]
    field_ = sum(D[j - 1, m] * sols[m].field for m in range(3))
    # zero mean over the fluid volume, partial voxels weighted by their fraction
    f = cell.fraction
    field_ = np.where(f > 0, field_ - float(np.sum(f * field_)) / float(np.sum(f)), 0.0)
    hist = max((s.history for s in sols), key=lambda h: h[-1])
    return CorrectorSolution(field=field_, history=hist, m=j - 1)


@dataclass
class EffectiveField:
    """Effective quantities at one macroscopic point."""

    x: np.ndarray
    theta: float
    tensor: np.ndarray
    residual: float
    correctors: list = field(default_factory=list)
    surface_quad: dict = field(default_factory=dict)


def surface_quadrature(spec, x, n_axial=8, n_angular=16):
    """Quadrature on one axial period of the fiber surface of the cell at ``x``.

    Points are ``R_x K_x yh`` for ``yh = (t, a cos phi, a sin phi)``; the
    weights sum to ``2 pi rho(x) a`` exactly. ``local`` holds ``K_x yh``, the
    centered-cell coordinate at which a rate ``alpha(x, .)`` is evaluated.
    """
    tr = transforms_at(spec, x)
    radius = tr.rho * spec.a
    t = -0.5 + (np.arange(n_axial) + 0.5) / n_axial
    phi = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    T, P = np.meshgrid(t, phi, indexing="ij")
    local = np.stack([T.ravel(), radius * np.cos(P).ravel(), radius * np.sin(P).ravel()], axis=1)
    weights = np.full(len(local), radius * 2 * np.pi / (n_axial * n_angular))
    return {"points": local @ tr.R.T, "local": local, "weights": weights}


def effective_tensor(cell, solutions=None, tol=1e-10, spec=None, check=True):
    """Effective tensor and porosity from reference correctors.

    ``B_mn`` is the energy of ``chi^m + z_m`` against ``chi^n + z_n`` under ``G``;
    the physical tensor is ``D B D^T`` (``|det D| = 1``). Off-diagonal
    entries come from polarization of the energy form, so ``B`` is symmetric
    up to solver tolerance.
    """
    op = cell_operator(cell)
    if solutions is None:
        solutions = [solve_reference_corrector(cell, m, tol, op=op) for m in range(3)]
    B = np.zeros((3, 3))
    E = np.eye(3)
    for m in range(3):
        for k in range(m, 3):
            if m == k:
                B[m, m] = op.energy(solutions[m].field, E[m])
            else:
                plus = op.energy(solutions[m].field + solutions[k].field, E[m] + E[k])
                minus = op.energy(solutions[m].field - solutions[k].field, E[m] - E[k])
                B[m, k] = B[k, m] = 0.25 * (plus - minus)
    # asymmetry check from the flux form: int G(grad chi^n + e_n) . e_m
    F = np.zeros((3, 3))
    for n_ in range(3):
        flux = op.face_fluxes(solutions[n_].field, [np.full(op.shape, E[n_, d]) for d in range(3)])
        F[:, n_] = [float(np.sum(flux[d])) * op.volume for d in range(3)]
    D = cell.D_reduced
    tensor = D @ B @ D.T
    flux_tensor = D @ F @ D.T
    residual = max(s.history[-1] for s in solutions)
    if check:
        scale = np.linalg.norm(tensor)
        if scale > 0 and np.linalg.norm(flux_tensor - flux_tensor.T) > 1e-6 * scale:
            raise AsymmetryExceeded(
                f"flux-form tensor asymmetry {np.linalg.norm(flux_tensor - flux_tensor.T):.3e} "
                f"exceeds 1e-6 of its norm {scale:.3e}")
    ef = EffectiveField(x=cell.x_anchor, theta=cell.theta, tensor=0.5 * (tensor + tensor.T),
                        residual=float(residual), correctors=solutions)
    if spec is not None:
        ef.surface_quad = surface_quadrature(spec, cell.x_anchor)
    return ef


def effective_at(spec, x, n=64, A=1.0, tol=1e-10):
    cell = build_reference_cell(spec, x, n=n, A=A)
    return effective_tensor(cell, tol=tol, spec=spec)


def porosity(spec, x, n_mc=100_000, seed=0):
    """Monte Carlo porosity of the cell at ``x``; returns ``(theta, stderr)``."""
    if n_mc < 10_000:
        raise ValidationError("n_mc must be at least 1e4")
    tr = transforms_at(spec, x)
    radius = tr.rho * spec.a
    z = stream(seed, 11).random((int(n_mc), 2))
    fluid = ~hole_indicator(z[:, 0], z[:, 1], tr.w, radius)
    theta = float(fluid.mean())
    return theta, float(np.sqrt(max(theta * (1 - theta), 0.0) / n_mc))


def geometry_hash(spec, n, A):
    payload = json.dumps({"geometry": spec.to_dict(), "n": int(n), "A": float(A), "v": CACHE_VERSION},
                         sort_keys=True, default=float)
    return hashlib.sha256(payload.encode()).hexdigest()


class EffectiveCache:
    """Effective-field table keyed by a geometry hash and quantized anchor points.

    Stored as ``.npz`` holding ``keys`` (integer grid indices), ``theta``,
    ``tensor`` and ``residual`` for one geometry hash.
    """

    def __init__(self, path, key):
        self.path = path
        self.key = key
        self.entries = {}
        self.hits = 0
        self.misses = 0
        if path is not None:
            self._load()

    def _load(self):
        import os
        if not os.path.exists(self.path):
            return
        with np.load(self.path, allow_pickle=False) as data:
            if str(data["key"]) != self.key:
                return
            for k, th, te, r in zip(data["keys"], data["theta"], data["tensor"], data["residual"]):
                self.entries[tuple(int(v) for v in k)] = (float(th), np.array(te), float(r))

    def get(self, index):
        hit = self.entries.get(tuple(int(v) for v in index))
        if hit is None:
            self.misses += 1
        else:
            self.hits += 1
        return hit

    def put(self, index, theta, tensor, residual):
        self.entries[tuple(int(v) for v in index)] = (float(theta), np.asarray(tensor, float), float(residual))

    def save(self):
        if self.path is None:
            return
        keys = sorted(self.entries)
        np.savez(self.path, key=np.array(self.key),
                 keys=np.array(keys, dtype=np.int64).reshape(-1, 3),
                 theta=np.array([self.entries[k][0] for k in keys]),
                 tensor=np.array([self.entries[k][1] for k in keys]).reshape(-1, 3, 3),
                 residual=np.array([self.entries[k][2] for k in keys]))


def rotated(tensor, angle):
    R = rotation_matrix(angle)
    return R @ tensor @ R.T
