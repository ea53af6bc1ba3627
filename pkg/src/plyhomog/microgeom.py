"""Exact non-periodic plywood geometry.

Fibers sit at the rotated lattice points ``x_k = R(gamma(eps*k3)) eps k``.
Inside the cell of ``k`` the local coordinate is
``y = R^{-1}(x - x_k) / eps`` and the fiber is the cylinder piece
``|y1| <= 1/2, |(y2, y3)| <= rho(x_k) a``. Only cells whose rotated cube
lies in the domain carry a fiber.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import (EmptyLattice, NoOwningCell, NotInDomain, SingularTransform,
                     ValidationError)
from .laws import AngleLaw, RadiusLaw

# corners of the centered cell (-1/2, 1/2)^3
CELL_CORNERS = np.array([[i, j, k] for i in (-0.5, 0.5) for j in (-0.5, 0.5) for k in (-0.5, 0.5)])
INSIDE_TOL = 1e-12


class Phase(IntEnum):
    INTERCELLULAR = 0
    FIBER = 1
    OUTSIDE = 2


@dataclass(frozen=True)
class Box:
    lo: tuple = (0.0, 0.0, 0.0)
    hi: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(h <= l for l, h in zip(lo, hi)):
            raise ValidationError(f"degenerate box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def lengths(self):
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def bounds(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def contains(self, x, tol=INSIDE_TOL):
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lo) - tol) & (x <= np.asarray(self.hi) + tol), axis=-1)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Ball:
    """Spherical domain; supported by the lattice and classifiers only."""

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    @property
    def volume(self):
        return 4.0 / 3.0 * np.pi * self.radius**3

    def bounds(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def contains(self, x, tol=INSIDE_TOL):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) <= self.radius + tol

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class MicrostructureSpec:
    """Geometry inputs of the plywood microstructure.

    Parameters
    ----------
    omega : Box or Ball
        Tissue domain.
    gamma : AngleLaw
        Fiber angle as a function of ``x3``, with values in ``[0, pi]``.
    rho : RadiusLaw
        Radius factor; the fiber radius in cell units is ``rho(x) * a``.
    a : float
        Base radius as a fraction of the cell side.
    eps : float
        Cell size.
    r_exp : float
        Exponent of the cube side ``eps**r_exp`` used by the locally-periodic
        partition, in ``(0, 1)``.
    """

    omega: Box = field(default_factory=Box)
    gamma: AngleLaw = field(default_factory=AngleLaw)
    rho: RadiusLaw = field(default_factory=RadiusLaw)
    a: float = 0.2
    eps: float = 0.25
    r_exp: float = 0.75
    check: bool = True

    def __post_init__(self):
        if self.check:
            self.validate()

    def validate(self):
        if not self.eps > 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if not 0.0 < self.r_exp < 1.0:
            raise ValidationError(f"r_exp must lie in (0, 1), got {self.r_exp}")
        if not self.a > 0:
            raise ValidationError(f"a must be positive, got {self.a}")
        lo, hi = self.omega.bounds()
        axes = [np.linspace(l, h, 32) for l, h in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        rho = self.rho(pts)
        if rho.min() <= 0:
            raise ValidationError(f"rho must stay positive on the domain (min {rho.min():.4g})")
        if (rho * self.a).max() > 0.4 + 1e-12:
            raise ValidationError(
                f"rho*a exceeds 2/5 on the domain (max {(rho * self.a).max():.4g}); "
                "fibers must fit inside their cells")
        g = self.gamma(np.linspace(lo[2], hi[2], 257))
        if g.min() < -1e-12 or g.max() > np.pi + 1e-12:
            raise ValidationError(f"gamma must stay in [0, pi] on the domain "
                                  f"(range {g.min():.4g} .. {g.max():.4g})")

    @property
    def radius_bounds(self):
        lo, hi = self.omega.bounds()
        corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(3, -1).T
        r = self.rho(corners)
        return float(r.min()), float(r.max())

    def replace(self, **changes):
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self):
        return {
            "omega": {"type": type(self.omega).__name__.lower(), **self.omega.to_dict()},
            "gamma": self.gamma.to_dict(),
            "rho": self.rho.to_dict(),
            "a": self.a,
            "eps": self.eps,
            "r_exp": self.r_exp,
        }


def rotation_matrix(angle):
    """Rotation about the ``x3`` axis; vectorized over ``angle``."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def shear_w(spec, x):
    """Shear entry ``gamma'(x3) (cos gamma(x3) x1 + sin gamma(x3) x2)``."""
    x = np.asarray(x, dtype=float)
    g = spec.gamma(x[..., 2])
    return spec.gamma.derivative(x[..., 2]) * (np.cos(g) * x[..., 0] + np.sin(g) * x[..., 1])


def shear_matrix(w):
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape + (3, 3))
    out[..., 0, 0] = out[..., 1, 1] = out[..., 2, 2] = 1.0
    out[..., 1, 2] = w
    return out


@dataclass(frozen=True)
class TransformSet:
    """Point-local matrices ``R``, ``W``, ``D = R W``, ``K`` and ``Kt = W^{-1} K``."""

    R: np.ndarray
    W: np.ndarray
    D: np.ndarray
    K: np.ndarray
    Ktilde: np.ndarray
    w: float
    rho: float

    @property
    def R_inv(self):
        return self.R.T

    @property
    def W_inv(self):
        return shear_matrix(-self.w)

    @property
    def D_inv(self):
        return self.W_inv @ self.R.T

    @property
    def K_inv(self):
        return np.diag([1.0, 1.0 / self.rho, 1.0 / self.rho])

    @property
    def Ktilde_inv(self):
        return self.K_inv @ self.W


def transforms_at(spec, x):
    """Evaluate the transform set at one point ``x``."""
    x = np.asarray(x, dtype=float).reshape(3)
    R = rotation_matrix(spec.gamma(x[2]))
    w = float(shear_w(spec, x))
    W = shear_matrix(w)
    rho = float(spec.rho(x))
    K = np.diag([1.0, rho, rho])
    if abs(np.linalg.det(K)) < 1e-12:
        raise SingularTransform(f"|det K| = {rho**2:.3g} at x = {x}")
    W_inv = shear_matrix(-w)
    return TransformSet(R=R, W=W, D=R @ W, K=K, Ktilde=W_inv @ K, w=w, rho=rho)


def lattice_centers(spec, k):
    """Centers ``x_k = R(gamma(eps k3)) eps k`` for integer triples ``k`` of shape (..., 3)."""
    k = np.asarray(k, dtype=float)
    ang = spec.gamma(spec.eps * k[..., 2])
    c, s = np.cos(ang), np.sin(ang)
    e = spec.eps
    return np.stack([e * (c * k[..., 0] - s * k[..., 1]),
                     e * (s * k[..., 0] + c * k[..., 1]),
                     e * k[..., 2]], axis=-1)


def rotated_cell_inside(domain, centers, angles, scale, shift=None):
    """True where the cube ``centers + scale R(angle) (CELL_CORNERS + shift)`` lies in the domain.

    Corner sampling is exact for convex domains.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    angles = np.broadcast_to(np.asarray(angles, dtype=float), centers.shape[:1])
    c, s = np.cos(angles)[:, None], np.sin(angles)[:, None]
    ok = np.ones(len(centers), dtype=bool)
    for corner in CELL_CORNERS:
        q = corner if shift is None else corner + shift
        q = np.broadcast_to(q, centers.shape)
        pt = np.empty_like(centers)
        pt[:, 0] = centers[:, 0] + scale * (c[:, 0] * q[:, 0] - s[:, 0] * q[:, 1])
        pt[:, 1] = centers[:, 1] + scale * (s[:, 0] * q[:, 0] + c[:, 0] * q[:, 1])
        pt[:, 2] = centers[:, 2] + scale * q[:, 2]
        ok &= domain.contains(pt)
    return ok


def cells_inside(spec, k):
    k = np.asarray(k).reshape(-1, 3)
    return rotated_cell_inside(spec.omega, lattice_centers(spec, k),
                               spec.gamma(spec.eps * k[:, 2]), spec.eps)


@dataclass(frozen=True)
class LatticeCell:
    k: tuple
    center: np.ndarray
    inside: bool


def lattice_arrays(spec):
    """All lattice indices whose rotated cell can meet the domain.

    Returns ``(k, centers, inside)`` as arrays.
    """
    eps = spec.eps
    lo, hi = spec.omega.bounds()
    reach = np.sqrt(3.0) / 2.0
    k3 = np.arange(int(np.floor(lo[2] / eps - reach)), int(np.ceil(hi[2] / eps + reach)) + 1)
    blocks = []
    box_corners = np.array([[x, y] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])])
    for kk in k3:
        g = float(spec.gamma(eps * kk))
        c, s = np.cos(g), np.sin(g)
        # in-plane coordinates R^{-1} x / eps of the domain's xy-footprint
        z = np.stack([c * box_corners[:, 0] + s * box_corners[:, 1],
                      -s * box_corners[:, 0] + c * box_corners[:, 1]], axis=1) / eps
        r1 = np.arange(int(np.floor(z[:, 0].min() - reach)), int(np.ceil(z[:, 0].max() + reach)) + 1)
        r2 = np.arange(int(np.floor(z[:, 1].min() - reach)), int(np.ceil(z[:, 1].max() + reach)) + 1)
        g1, g2 = np.meshgrid(r1, r2, indexing="ij")
        blocks.append(np.stack([g1.ravel(), g2.ravel(), np.full(g1.size, kk)], axis=1))
    k = np.concatenate(blocks).astype(np.int64)
    centers = lattice_centers(spec, k)
    # keep cells whose circumscribed ball meets the bounding box
    near = np.all((centers >= lo - reach * eps) & (centers <= hi + reach * eps), axis=1)
    k, centers = k[near], centers[near]
    inside = cells_inside(spec, k)
    return k, centers, inside


def fiber_lattice(spec):
    """List the lattice cells around the domain, flagging those that lie inside it."""
    if spec.eps > float(np.min(np.asarray(spec.omega.bounds()[1]) - spec.omega.bounds()[0])):
        raise EmptyLattice(f"eps = {spec.eps} exceeds the shortest edge of the domain")
    k, centers, inside = lattice_arrays(spec)
    if not inside.any():
        raise EmptyLattice(f"no cell of size eps = {spec.eps} fits in the domain")
    return [LatticeCell(tuple(int(v) for v in kk), c, bool(i)) for kk, c, i in zip(k, centers, inside)]


def nearest_cell(spec, x):
    """Nearest lattice index and local coordinates for each point.

    Since ``rho a <= 2/5 < 1/2`` a fiber can only contain ``x`` if its index is
    the componentwise nearest one, so a single candidate per point suffices.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    eps = spec.eps
    k3 = np.rint(x[:, 2] / eps)
    g = spec.gamma(eps * k3)
    c, s = np.cos(g), np.sin(g)
    z1 = (c * x[:, 0] + s * x[:, 1]) / eps
    z2 = (-s * x[:, 0] + c * x[:, 1]) / eps
    z3 = x[:, 2] / eps
    k = np.stack([np.rint(z1), np.rint(z2), k3], axis=1)
    y = np.stack([z1, z2, z3], axis=1) - k
    return k.astype(np.int64), y


def classify_nonperiodic(spec, x, radius=None, return_cell=False):
    """Phase of each point under the exact plywood microstructure.

    Parameters
    ----------
    spec : MicrostructureSpec
    x : array_like, shape (N, 3)
    radius : array_like, optional
        Radius factor to use instead of ``rho(x_k)`` (per point); used to
        freeze the radius at another location.
    return_cell : bool
        Also return the owning lattice index of fiber points (garbage for
        other phases).
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    k, y = nearest_cell(spec, x)
    in_omega = spec.omega.contains(x)
    if radius is None:
        rad = spec.rho(lattice_centers(spec, k)) * spec.a
    else:
        rad = np.broadcast_to(np.asarray(radius, dtype=float), (len(x),)) * spec.a
    hit = in_omega & (np.abs(y[:, 0]) <= 0.5) & (y[:, 1] ** 2 + y[:, 2] ** 2 <= rad**2)
    idx = np.nonzero(hit)[0]
    if idx.size:
        hit[idx] = cells_inside(spec, k[idx])
    phase = np.where(in_omega, Phase.INTERCELLULAR, Phase.OUTSIDE).astype(np.int8)
    phase[hit] = Phase.FIBER
    if return_cell:
        return phase, k
    return phase


def surface_points_nonperiodic(spec, cell, n_axial=16, n_angular=32):
    """Midpoint rule on the lateral surface of the fiber in ``cell``.

    Returns ``(points, normals, weights)``; normals point out of the fiber.
    The weights sum exactly to the lateral area ``2 pi rho a eps^2``.
    """
    if not cell.inside:
        raise NotInDomain(f"cell {cell.k} does not lie inside the domain")
    if n_axial < 2 or n_angular < 2:
        raise ValueError("need at least two nodes per direction")
    eps = spec.eps
    radius = float(spec.rho(np.asarray(cell.center))) * spec.a
    t = -0.5 + (np.arange(n_axial) + 0.5) / n_axial
    phi = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    T, P = np.meshgrid(t, phi, indexing="ij")
    local = np.stack([T, radius * np.cos(P), radius * np.sin(P)], axis=-1).reshape(-1, 3)
    radial = np.stack([np.zeros_like(P), np.cos(P), np.sin(P)], axis=-1).reshape(-1, 3)
    R = rotation_matrix(spec.gamma(eps * cell.k[2]))
    points = np.asarray(cell.center) + eps * local @ R.T
    normals = radial @ R.T
    weights = np.full(len(points), eps**2 * radius * (2 * np.pi / n_angular) / n_axial)
    return points, normals, weights


def local_coordinates(spec, x, k):
    """``R_k^{-1}(x - x_k) / eps`` for points ``x`` and lattice indices ``k``."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    k = np.asarray(k).reshape(-1, 3)
    centers = lattice_centers(spec, k)
    R = rotation_matrix(spec.gamma(spec.eps * k[:, 2]))
    return np.einsum("nji,nj->ni", R, x - centers) / spec.eps


def reaction_rate_at(spec, rate, x, tol=1e-6):
    """Evaluate a two-scale rate on fiber surface points.

    ``rate(x, y)`` is evaluated with ``y`` the local coordinate of ``x`` in its
    owning cell. Points not lying on the surface of an inside cell raise
    :class:`NoOwningCell`.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    k, y = nearest_cell(spec, x)
    rad = spec.rho(lattice_centers(spec, k)) * spec.a
    on_surface = (np.abs(y[:, 0]) <= 0.5 + tol) & (np.abs(np.hypot(y[:, 1], y[:, 2]) - rad) <= tol)
    on_surface &= cells_inside(spec, k)
    if not on_surface.all():
        bad = x[~on_surface][0]
        raise NoOwningCell(f"point {bad} is not on the surface of a fiber inside the domain")
    return rate(x, y)
