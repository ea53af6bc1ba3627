"""Locally-periodic approximation of the plywood geometry.

The domain is tiled by cubes of side ``eps**r``. Each cube gets an anchor
``x_n`` (the lattice center nearest to the cube center) and inside the cube
the fibers form the strictly periodic array ``x_n + eps D_n xi`` with radius
and matrices frozen at the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AnchorMissing, NonPositiveValue, ValidationError
from .microgeom import (Box, Phase, classify_nonperiodic, lattice_centers, rotated_cell_inside,
                        shear_w)
from .rng import N_BATCHES, batch_mean, uniform_in_box

CSV_FIELDS = ("eps", "r_exp", "i1", "i2", "total", "stderr_i1", "stderr_i2", "n_samples")


@dataclass(frozen=True)
class Partition:
    """Cube partition with per-cube anchors.

    Cube ``n`` (flat C-order index over ``shape``) is
    ``origin + side * (idx, idx + 1)``; cubes overhanging the domain are kept
    and clipped where a computation needs it.
    """

    origin: np.ndarray
    side: float
    shape: tuple
    kappa: np.ndarray
    anchors: np.ndarray
    angle: np.ndarray
    w: np.ndarray
    rho: np.ndarray

    @property
    def count(self):
        return int(np.prod(self.shape))

    def cube_bounds(self, n, clip_to=None):
        idx = np.array(np.unravel_index(n, self.shape), dtype=float)
        lo = self.origin + self.side * idx
        hi = lo + self.side
        if clip_to is not None:
            blo, bhi = clip_to.bounds()
            lo, hi = np.maximum(lo, blo), np.minimum(hi, bhi)
        return lo, hi

    @property
    def cubes(self):
        return [self.cube_bounds(n) for n in range(self.count)]

    def cube_index(self, x):
        """Flat cube index of each point (points on the far faces go to the last cube)."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        idx = np.floor((x - self.origin) / self.side).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return np.ravel_multi_index(idx.T, self.shape)


def partition_cubes(spec):
    """Tile the box domain by cubes of side ``eps**r`` and anchor each cube."""
    if not isinstance(spec.omega, Box):
        raise ValidationError("the locally-periodic partition needs a box domain")
    eps = spec.eps
    side = eps**spec.r_exp
    lo, hi = spec.omega.bounds()
    # guard against 1/side landing a hair above an integer
    shape = tuple(int(np.ceil(L / side - 1e-9)) for L in hi - lo)
    idx = np.stack(np.meshgrid(*[np.arange(m) for m in shape], indexing="ij"), axis=-1).reshape(-1, 3)
    centers = lo + side * (idx + 0.5)
    k3 = np.rint(centers[:, 2] / eps)
    g = spec.gamma(eps * k3)
    c, s = np.cos(g), np.sin(g)
    k1 = np.rint((c * centers[:, 0] + s * centers[:, 1]) / eps)
    k2 = np.rint((-s * centers[:, 0] + c * centers[:, 1]) / eps)
    kappa = np.stack([k1, k2, k3], axis=1).astype(np.int64)
    anchors = lattice_centers(spec, kappa)
    cube_lo = lo + side * idx
    tol = 1e-12 * max(1.0, side)
    inside = np.all((anchors >= cube_lo - tol) & (anchors <= cube_lo + side + tol), axis=1)
    if not inside.all():
        bad = int(np.nonzero(~inside)[0][0])
        raise AnchorMissing(
            f"cube {tuple(idx[bad])} of side {side:.4g} contains no lattice center "
            f"(eps = {eps:.4g} is too close to eps**r)")
    return Partition(origin=np.asarray(lo, float), side=float(side), shape=shape, kappa=kappa,
                     anchors=anchors, angle=np.asarray(g, float), w=shear_w(spec, anchors),
                     rho=spec.rho(anchors))


def lp_locate(spec, partition, x):
    """Owning cube, nearest periodic index and local fiber coordinate.

    Returns ``(n, xi, y)`` where ``y = R_n^{-1}(x - x_n)/eps - W_n xi``.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    n = partition.cube_index(x)
    g = partition.angle[n]
    c, s = np.cos(g), np.sin(g)
    d = (x - partition.anchors[n]) / spec.eps
    z1 = c * d[:, 0] + s * d[:, 1]
    z2 = -s * d[:, 0] + c * d[:, 1]
    z3 = d[:, 2]
    w = partition.w[n]
    xi3 = np.rint(z3)
    xi2 = np.rint(z2 - w * xi3)
    xi1 = np.rint(z1)
    y = np.stack([z1 - xi1, z2 - xi2 - w * xi3, z3 - xi3], axis=1)
    return n, np.stack([xi1, xi2, xi3], axis=1), y


def lp_cell_centers(spec, partition, n, xi):
    """Physical centers ``x_n + eps R_n W_n xi`` of locally-periodic cells."""
    g = partition.angle[n]
    c, s = np.cos(g), np.sin(g)
    w = partition.w[n]
    q1 = xi[:, 0]
    q2 = xi[:, 1] + w * xi[:, 2]
    return partition.anchors[n] + spec.eps * np.stack([c * q1 - s * q2, s * q1 + c * q2, xi[:, 2]], axis=1)


def lp_cells_inside(spec, partition, n, xi):
    return rotated_cell_inside(spec.omega, lp_cell_centers(spec, partition, n, xi),
                               partition.angle[n], spec.eps)


def classify_lp(spec, partition, x, return_cell=False):
    """Phase of each point under the locally-periodic geometry.

    A point of cube ``n`` is fiber when it lies in the frozen-anchor fiber of
    its nearest periodic cell and that cell, like the cells of the exact
    lattice, lies inside the domain.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    n, xi, y = lp_locate(spec, partition, x)
    in_omega = spec.omega.contains(x)
    rad = partition.rho[n] * spec.a
    hit = in_omega & (np.abs(y[:, 0]) <= 0.5) & (y[:, 1] ** 2 + y[:, 2] ** 2 <= rad**2)
    idx = np.nonzero(hit)[0]
    if idx.size:
        hit[idx] = lp_cells_inside(spec, partition, n[idx], xi[idx])
    phase = np.where(in_omega, Phase.INTERCELLULAR, Phase.OUTSIDE).astype(np.int8)
    phase[hit] = Phase.FIBER
    if return_cell:
        return phase, n, xi, y
    return phase


def classify_anchor_radius(spec, partition, x):
    """Exact lattice with every fiber radius frozen at the anchor of the point's cube."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    n = partition.cube_index(x)
    return classify_nonperiodic(spec, x, radius=partition.rho[n])


@dataclass(frozen=True)
class ChiDiffReport:
    eps: float
    r_exp: float
    i1: float
    i2: float
    total: float
    cross: float
    stderr_i1: float
    stderr_i2: float
    stderr_total: float
    n_samples: int

    def as_row(self):
        return {k: getattr(self, k) for k in CSV_FIELDS}


def chi_l2_difference(spec, partition, n_samples, seed=0):
    """Monte Carlo estimate of the squared L2 distance between the fiber indicators.

    Three classifiers are evaluated per sample: the exact geometry, the exact
    lattice with radii frozen at cube anchors, and the locally-periodic one.
    ``i1`` measures the first gap (radius mismatch), ``i2`` the second
    (lattice deformation); ``total`` is the direct distance. For indicator
    functions ``total = i1 + i2 - 2 cross`` exactly, with ``cross`` the
    measure of points flipped by both steps.
    """
    if n_samples < 10_000:
        raise ValidationError(f"n_samples must be at least 1e4, got {n_samples}")
    lo, hi = spec.omega.bounds()
    vol = spec.omega.volume
    d1, d2, dt, dc = [], [], [], []
    for _, x in uniform_in_box(seed, 1, lo, hi, n_samples):
        a = classify_nonperiodic(spec, x) == Phase.FIBER
        b = classify_anchor_radius(spec, partition, x) == Phase.FIBER
        c = classify_lp(spec, partition, x) == Phase.FIBER
        d1.append((a != b).astype(float))
        d2.append((b != c).astype(float))
        dt.append((a != c).astype(float))
        dc.append(((a != b) & (b != c)).astype(float))
    i1, s1 = batch_mean(d1)
    i2, s2 = batch_mean(d2)
    tot, st = batch_mean(dt)
    cross, _ = batch_mean(dc)
    return ChiDiffReport(eps=spec.eps, r_exp=spec.r_exp, i1=vol * i1, i2=vol * i2, total=vol * tot,
                         cross=vol * cross, stderr_i1=vol * s1, stderr_i2=vol * s2,
                         stderr_total=vol * st, n_samples=int(n_samples))


def _lens_area(radius, dist):
    """Area of the intersection of two discs of equal radius at center distance ``dist``."""
    if dist >= 2 * radius:
        return 0.0
    return float(2 * radius**2 * np.arccos(dist / (2 * radius))
                 - 0.5 * dist * np.sqrt(4 * radius**2 - dist**2))


SHIFT_CONSTANT = 8.0


def fiber_shift_bound_check(radius, length, tau, mode="finite", constant=SHIFT_CONSTANT):
    """Squared L2 distance between a cylinder indicator and its shift.

    The cylinder has axis ``e1``, the given radius and length. ``tau[0]`` is
    the axial shift, ``tau[1:]`` the transverse one. In ``infinite`` mode the
    cylinder is unbounded along its axis and the distance is measured per
    ``length`` of axis. Returns ``(lhs, bound)`` with
    ``bound = constant * radius * length * |tau|``.
    """
    if radius <= 0 or length <= 0:
        raise ValidationError("radius and length must be positive")
    tau = np.asarray(tau, dtype=float).reshape(3)
    d = float(np.hypot(tau[1], tau[2]))
    lens = _lens_area(radius, d)
    disc = np.pi * radius**2
    if mode == "infinite":
        lhs = 2.0 * (disc - lens) * length
    elif mode == "finite":
        overlap = lens * max(0.0, length - abs(tau[0]))
        lhs = 2.0 * (disc * length - overlap)
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    return float(max(lhs, 0.0)), float(constant * radius * length * np.linalg.norm(tau))


def scaling_fit(pairs):
    """Least-squares power law through ``(eps, value)`` pairs.

    Returns ``(slope, intercept, residual)`` of the line in ``(log eps, log value)``
    with ``residual`` the largest absolute misfit in log space.
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or len(pairs) < 3:
        raise ValidationError("scaling_fit needs at least three (eps, value) pairs")
    if np.any(pairs <= 0):
        raise NonPositiveValue("scaling_fit needs positive eps and values")
    lx, ly = np.log(pairs[:, 0]), np.log(pairs[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    residual = float(np.max(np.abs(slope * lx + intercept - ly)))
    return float(slope), float(intercept), residual


def two_point_slope(e1, v1, e2, v2):
    """Slope of ``log v`` against ``log eps`` through two points."""
    if min(e1, v1, e2, v2) <= 0:
        raise NonPositiveValue("two_point_slope needs positive eps and values")
    return float(np.log(v1 / v2) / np.log(e1 / e2))


__all__ = ["Partition", "partition_cubes", "lp_locate", "lp_cell_centers", "classify_lp",
           "classify_anchor_radius", "ChiDiffReport", "chi_l2_difference",
           "fiber_shift_bound_check", "scaling_fit", "two_point_slope", "CSV_FIELDS",
           "N_BATCHES"]
