"""Locally-periodic approximation and unfolding operators, discretized.

Two-scale functions are stored through their reference form ``psi~(x, yh)``,
1-periodic in ``yh``; the physical form is ``psi(x, y) = psi~(x, D_x^{-1} y)``.
Inside cube ``n`` the periodic lattice passes through the anchor ``x_n``, so the
cells ``x_n + eps D_n (Y + xi)`` with ``Y = (0, 1)^3`` carry fibers on their
corner edges, matching :mod:`plyhomog.lpgeom`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadExponent, ValidationError
from .lpgeom import Partition, partition_cubes
from .microgeom import rotation_matrix, shear_w
from .rng import stream

UNIT_CORNERS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], float)


def _shear_apply(w, v, inverse=False):
    """``W v`` (or ``W^{-1} v``) for per-row shear entries ``w``."""
    s = -w if inverse else w
    out = np.array(v, dtype=float, copy=True)
    out[..., 1] = v[..., 1] + s * v[..., 2]
    return out


def _rotate(angle, v, inverse=False):
    c, s = np.cos(angle), np.sin(angle)
    if inverse:
        s = -s
    out = np.empty_like(v, dtype=float)
    out[..., 0] = c * v[..., 0] - s * v[..., 1]
    out[..., 1] = s * v[..., 0] + c * v[..., 1]
    out[..., 2] = v[..., 2]
    return out


def d_apply(angle, w, v):
    """``D v = R W v`` with per-row angle and shear."""
    return _rotate(angle, _shear_apply(w, v))


def d_inv_apply(angle, w, v):
    """``D^{-1} v = W^{-1} R^T v``."""
    return _shear_apply(w, _rotate(angle, v, inverse=True), inverse=True)


@dataclass(frozen=True)
class TwoScaleFunction:
    """A two-scale function given by its periodic reference form.

    Parameters
    ----------
    tilde : callable
        ``tilde(x, yh)`` with arrays of shape (N, 3); must be 1-periodic in ``yh``.
    spec : MicrostructureSpec
        Supplies ``D_x`` for the physical form.
    lipschitz : float
        Lipschitz constant in ``x`` (for manufactured functions; informational).
    name : str
    """

    tilde: object
    spec: object
    lipschitz: float = 0.0
    name: str = "psi"

    def __call__(self, x, y):
        """Physical form ``psi(x, y) = psi~(x, D_x^{-1} y)``."""
        x = np.asarray(x, float).reshape(-1, 3)
        y = np.asarray(y, float).reshape(-1, 3)
        angle = self.spec.gamma(x[:, 2])
        return self.tilde(x, d_inv_apply(angle, shear_w(self.spec, x), y))

    @classmethod
    def from_rate(cls, rate, spec):
        """Periodized rate ``sum_k rate(x, R_x^{-1}(y - D_x k))`` in reference form.

        In reference coordinates the summand is ``rate(x, W_x(yh - k))`` and only
        the image with ``W_x(yh - k)`` in the centered cell contributes.
        """
        def tilde(x, yh):
            x = np.asarray(x, float).reshape(-1, 3)
            yh = np.asarray(yh, float).reshape(-1, 3)
            w = shear_w(spec, x)
            z3 = yh[:, 2] - np.rint(yh[:, 2])
            v2 = yh[:, 1] + w * z3
            local = np.stack([yh[:, 0] - np.rint(yh[:, 0]), v2 - np.rint(v2), z3], axis=1)
            return rate(x, local)

        return cls(tilde=tilde, spec=spec, name="rate")


# manufactured two-scale functions: (name, tilde(x, yh), Lipschitz constant in x)
def manufactured_library(spec):
    def const(x, yh):
        return np.ones(len(x))

    def trig1(x, yh):
        return np.sin(2 * np.pi * yh[:, 0]) * (1.0 + 0.5 * x[:, 0])

    def poly_trig(x, yh):
        return (x[:, 0] * x[:, 1] + x[:, 2]) * np.cos(2 * np.pi * yh[:, 1]) * np.cos(2 * np.pi * yh[:, 2])

    def bump(x, yh):
        f = np.prod(np.sin(np.pi * (yh - np.floor(yh))) ** 2, axis=1)
        return (1.0 + np.sin(np.pi * x[:, 2])) * f

    return [TwoScaleFunction(const, spec, 0.0, "const"),
            TwoScaleFunction(trig1, spec, 0.5, "trig1"),
            TwoScaleFunction(poly_trig, spec, np.sqrt(3.0), "poly_trig"),
            TwoScaleFunction(bump, spec, np.pi, "bump")]


def random_smooth_fields(seed, count=20, n_modes=3):
    """Seeded smooth test fields ``u(x) = a0 + sum a_j cos(pi f_j . x + phi_j)``."""
    g = stream(seed, 7)
    out = []
    for _ in range(count):
        a0 = g.uniform(0.5, 1.5)
        amp = g.uniform(-0.5, 0.5, n_modes)
        freq = g.integers(0, 4, (n_modes, 3)).astype(float)
        phase = g.uniform(0, 2 * np.pi, n_modes)

        def u(x, a0=a0, amp=amp, freq=freq, phase=phase):
            x = np.asarray(x, float).reshape(-1, 3)
            return a0 + np.cos(np.pi * x @ freq.T + phase) @ amp

        out.append(u)
    return out


def lp_approximation(psi, spec, partition, x, variant="full"):
    """``(L psi)(x) = psi~(x, D_n^{-1}(x - x_n)/eps)`` on cube ``n``.

    ``variant="frozen"`` evaluates the first argument at the anchor ``x_n``.
    """
    x = np.asarray(x, float).reshape(-1, 3)
    n = partition.cube_index(x)
    yh = d_inv_apply(partition.angle[n], partition.w[n], (x - partition.anchors[n]) / spec.eps)
    if variant == "full":
        return psi.tilde(x, yh)
    if variant == "frozen":
        return psi.tilde(partition.anchors[n], yh)
    raise ValidationError(f"unknown variant {variant!r}")


def lp_difference_norm(psi, spec, partition, n_samples=200_000, seed=0):
    """Monte Carlo ``||L psi - L0 psi||_{L2(Omega)}``."""
    lo, hi = spec.omega.bounds()
    x = lo + (hi - lo) * stream(seed, 3).random((n_samples, 3))
    diff = lp_approximation(psi, spec, partition, x) - lp_approximation(psi, spec, partition, x, "frozen")
    return float(np.sqrt(spec.omega.volume * np.mean(diff**2)))


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _smoothstep_slope(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 6.0 * t * (1.0 - t), 0.0)


@dataclass(frozen=True)
class SmoothPartition:
    """C1 cut-offs ``phi_n`` of the partition cubes.

    ``phi_n(x) = prod_i S(d_i / delta)`` with ``d_i`` the distance to the nearer
    face of cube ``n`` along axis ``i``, ``S`` the cubic smoothstep and
    ``delta = eps**rho_exp``. Cubes have disjoint supports, so one cube owns each
    point.
    """

    partition: Partition
    delta: float
    rho_exp: float

    GRADIENT_CONSTANT = 1.5 * np.sqrt(3.0)

    def _dist(self, x):
        x = np.asarray(x, float).reshape(-1, 3)
        n = self.partition.cube_index(x)
        lo = self.partition.origin + self.partition.side * np.array(np.unravel_index(n, self.partition.shape)).T
        rel = x - lo
        near_lo = rel <= self.partition.side / 2
        d = np.where(near_lo, rel, self.partition.side - rel)
        sign = np.where(near_lo, 1.0, -1.0)
        return n, d, sign

    def __call__(self, x):
        _, d, _ = self._dist(x)
        return np.prod(_smoothstep(d / self.delta), axis=1)

    def gradient(self, x):
        _, d, sign = self._dist(x)
        t = d / self.delta
        s = _smoothstep(t)
        ds = _smoothstep_slope(t) / self.delta * sign
        g = np.empty_like(d)
        for i in range(3):
            others = [j for j in range(3) if j != i]
            g[:, i] = ds[:, i] * s[:, others[0]] * s[:, others[1]]
        return g

    def defect_l2(self, spec, n_samples=200_000, seed=0):
        """``|| sum_n |phi_n - chi_n| ||_{L2(Omega)}`` by Monte Carlo."""
        lo, hi = spec.omega.bounds()
        x = lo + (hi - lo) * stream(seed, 4).random((n_samples, 3))
        return float(np.sqrt(spec.omega.volume * np.mean((1.0 - self(x)) ** 2)))


def smooth_partition(spec, partition, rho_exp):
    if not spec.r_exp < rho_exp < 1.0:
        raise BadExponent(f"rho_exp must lie in (r, 1) = ({spec.r_exp}, 1), got {rho_exp}")
    return SmoothPartition(partition=partition, delta=float(spec.eps**rho_exp), rho_exp=float(rho_exp))


@dataclass(frozen=True)
class UnfoldingCells:
    """Cells ``x_n + eps D_n (Y + xi)`` lying wholly in ``Omega_n`` and ``Omega``."""

    cube: np.ndarray
    xi: np.ndarray
    volume: float

    def __len__(self):
        return len(self.cube)


def unfolding_cells(spec, partition):
    lo_om, hi_om = spec.omega.bounds()
    tol = 1e-12
    cubes, xis = [], []
    for n in range(partition.count):
        clo, chi = partition.cube_bounds(n, clip_to=spec.omega)
        if np.any(chi <= clo):
            continue
        ang, w, xn = partition.angle[n], partition.w[n], partition.anchors[n]
        box = np.array(np.meshgrid(*zip(clo, chi), indexing="ij")).reshape(3, -1).T
        ref = d_inv_apply(np.full(8, ang), np.full(8, w), (box - xn) / spec.eps)
        lo_i = np.floor(ref.min(axis=0)).astype(int)
        hi_i = np.ceil(ref.max(axis=0)).astype(int)
        grid = np.stack(np.meshgrid(*[np.arange(a, b) for a, b in zip(lo_i, hi_i)], indexing="ij"),
                        axis=-1).reshape(-1, 3).astype(float)
        ok = np.ones(len(grid), bool)
        for c in UNIT_CORNERS:
            pt = xn + spec.eps * d_apply(np.full(len(grid), ang), np.full(len(grid), w), grid + c)
            ok &= np.all((pt >= clo - tol) & (pt <= chi + tol), axis=1)
        if ok.any():
            cubes.append(np.full(int(ok.sum()), n))
            xis.append(grid[ok])
    cube = np.concatenate(cubes) if cubes else np.zeros(0, int)
    xi = np.concatenate(xis) if xis else np.zeros((0, 3))
    # |det D| = 1
    return UnfoldingCells(cube=cube, xi=xi, volume=float(spec.eps**3))


def locate_unfolding_cell(spec, partition, x):
    """Cube, reference floor index and a flag for membership in an unfolding cell."""
    x = np.asarray(x, float).reshape(-1, 3)
    n = partition.cube_index(x)
    ref = d_inv_apply(partition.angle[n], partition.w[n], (x - partition.anchors[n]) / spec.eps)
    xi = np.floor(ref)
    ang, w, xn = partition.angle[n], partition.w[n], partition.anchors[n]
    ok = spec.omega.contains(x)
    idx = np.array(np.unravel_index(n, partition.shape)).T
    clo = np.maximum(partition.origin + partition.side * idx, spec.omega.bounds()[0])
    chi = np.minimum(partition.origin + partition.side * (idx + 1), spec.omega.bounds()[1])
    for c in UNIT_CORNERS:
        pt = xn + spec.eps * d_apply(ang, w, xi + c)
        ok &= np.all((pt >= clo - 1e-12) & (pt <= chi + 1e-12), axis=1)
    return n, xi, ok


def midpoint_grid(m):
    t = (np.arange(m) + 0.5) / m
    return np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)


def gamma_grid(a, n_axial=32, n_angular=32):
    """Midpoint rule on one period of the reference fiber surface ``|yh'| = a``.

    Returns ``(points, weights)``; the axial coordinate runs over ``(-1/2, 1/2)``.
    """
    t = -0.5 + (np.arange(n_axial) + 0.5) / n_axial
    phi = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    T, P = np.meshgrid(t, phi, indexing="ij")
    pts = np.stack([T, a * np.cos(P), a * np.sin(P)], axis=-1).reshape(-1, 3)
    return pts, np.full(len(pts), a * 2 * np.pi / (n_axial * n_angular))


@dataclass(frozen=True)
class UnfoldedField:
    """Unfolded samples on ``x-nodes x y-nodes``; rows with ``mask`` set lie in the layer where the operator vanishes."""

    x_nodes: np.ndarray
    y_nodes: np.ndarray
    values: np.ndarray
    mask: np.ndarray


def unfold(u, spec, partition, y_grid=16, x_nodes=None, cells=None):
    """``T(u)(x, yh) = u(x_n + eps D_n floor(D_n^{-1}(x - x_n)/eps) + eps D_n yh)``.

    Without ``x_nodes`` one node per unfolding cell is used (its center), which
    suffices because the result is constant in ``x`` on each cell. Pass
    precomputed ``cells`` to skip rebuilding them.
    """
    yh = midpoint_grid(y_grid) if np.isscalar(y_grid) else np.asarray(y_grid, float)
    if x_nodes is None:
        if cells is None:
            cells = unfolding_cells(spec, partition)
        n, xi = cells.cube, cells.xi
        x_nodes = partition.anchors[n] + spec.eps * d_apply(partition.angle[n], partition.w[n], xi + 0.5)
        mask = np.zeros(len(n), bool)
    else:
        x_nodes = np.asarray(x_nodes, float).reshape(-1, 3)
        n, xi, ok = locate_unfolding_cell(spec, partition, x_nodes)
        mask = ~ok
    values = np.zeros((len(x_nodes), len(yh)))
    for start in range(0, len(x_nodes), 2048):
        sl = slice(start, start + 2048)
        m = len(x_nodes[sl])
        ang = np.repeat(partition.angle[n[sl]], len(yh))
        w = np.repeat(partition.w[n[sl]], len(yh))
        pts = (xi[sl][:, None, :] + yh[None, :, :]).reshape(-1, 3)
        phys = np.repeat(partition.anchors[n[sl]], len(yh), axis=0) + spec.eps * d_apply(ang, w, pts)
        values[sl] = u(phys).reshape(m, len(yh))
    values[mask] = 0.0
    return UnfoldedField(x_nodes=x_nodes, y_nodes=yh, values=values, mask=mask)


def unfolded_norm_sq(field, cell_volume):
    """``sum_cells |cell| * mean_Y |T u|^2`` for a field built with one node per cell."""
    return float(cell_volume * np.sum(np.mean(field.values**2, axis=1)))


def direct_norm_sq(u, spec, partition, cells=None, order=4):
    """``int |u|^2`` over the union of unfolding cells by Gauss-Legendre in each cell."""
    if cells is None:
        cells = unfolding_cells(spec, partition)
    t, wt = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    nodes = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    weights = np.einsum("i,j,k->ijk", wt, wt, wt).ravel()
    total = 0.0
    for start in range(0, len(cells), 4096):
        n = cells.cube[start:start + 4096]
        xi = cells.xi[start:start + 4096]
        pts = (xi[:, None, :] + nodes[None]).reshape(-1, 3)
        ang = np.repeat(partition.angle[n], len(nodes))
        w = np.repeat(partition.w[n], len(nodes))
        phys = np.repeat(partition.anchors[n], len(nodes), axis=0) + spec.eps * d_apply(ang, w, pts)
        total += float(np.sum(u(phys).reshape(len(n), -1) ** 2 @ weights))
    return total * cells.volume


def masked_fraction(spec, partition, cells=None):
    """Volume fraction of the layer not covered by unfolding cells."""
    if cells is None:
        cells = unfolding_cells(spec, partition)
    return 1.0 - len(cells) * cells.volume / spec.omega.volume


def boundary_unfold(g, spec, partition, x_nodes, n_axial=32, n_angular=32):
    """``T^b(g)(x, yh) = g(x_n + eps D_n floor(.) + eps D_n K~_n yh)`` for ``yh`` on the reference fiber surface.

    ``D_n K~_n yh = R_n K_n yh``, so the mapped points sit on the fiber through
    the corner of the owning cell.
    """
    x_nodes = np.asarray(x_nodes, float).reshape(-1, 3)
    n, xi, ok = locate_unfolding_cell(spec, partition, x_nodes)
    yh, _ = gamma_grid(spec.a, n_axial, n_angular)
    m = len(yh)
    ang = np.repeat(partition.angle[n], m)
    w = np.repeat(partition.w[n], m)
    rho = np.repeat(partition.rho[n], m)
    ky = np.tile(yh, (len(n), 1))
    ky[:, 1:] *= rho[:, None]
    base = np.repeat(partition.anchors[n] + spec.eps * d_apply(partition.angle[n], partition.w[n], xi), m, axis=0)
    phys = base + spec.eps * _rotate(ang, ky)
    values = g(phys).reshape(len(n), m)
    values[~ok] = 0.0
    return UnfoldedField(x_nodes=x_nodes, y_nodes=yh, values=values, mask=~ok)


@dataclass(frozen=True)
class BoundaryLimitRow:
    eps: float
    lhs: float
    limit: float

    @property
    def rel_gap(self):
        if self.limit == 0.0:
            return 0.0 if self.lhs == 0.0 else float("inf")
        return abs(self.lhs - self.limit) / abs(self.limit)

    def as_row(self):
        return {"eps": self.eps, "lhs": self.lhs, "limit": self.limit, "rel_gap": self.rel_gap}


def boundary_integral(psi, spec, partition, p=1, n_axial=32, n_angular=32):
    """``eps * int |L psi|^p`` over all locally-periodic fiber surfaces in the domain.

    Every lattice point of every cube carries one axial period of fiber; the
    piece counted for cube ``n`` is the part inside ``Omega_n`` and ``Omega``.
    """
    eps = spec.eps
    t = -0.5 + (np.arange(n_axial) + 0.5) / n_axial
    phi = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    T, P = np.meshgrid(t, phi, indexing="ij")
    unit = np.stack([T.ravel(), np.cos(P).ravel(), np.sin(P).ravel()], axis=1)
    dA = (1.0 / n_axial) * (2 * np.pi / n_angular)
    total = 0.0
    for n in range(partition.count):
        clo, chi = partition.cube_bounds(n, clip_to=spec.omega)
        if np.any(chi <= clo):
            continue
        ang, w, xn, rho = partition.angle[n], partition.w[n], partition.anchors[n], partition.rho[n]
        radius = rho * spec.a
        box = np.array(np.meshgrid(*zip(clo, chi), indexing="ij")).reshape(3, -1).T
        ref = d_inv_apply(np.full(8, ang), np.full(8, w), (box - xn) / eps)
        lo_i = np.floor(ref.min(axis=0) - 1).astype(int)
        hi_i = np.ceil(ref.max(axis=0) + 1).astype(int)
        xi = np.stack(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo_i, hi_i)], indexing="ij"),
                      axis=-1).reshape(-1, 3).astype(float)
        centers = xn + eps * d_apply(np.full(len(xi), ang), np.full(len(xi), w), xi)
        # drop fibers whose circumscribed ball misses the clipped cube
        reach = eps * np.hypot(0.5, radius)
        near = np.all((centers >= clo - reach) & (centers <= chi + reach), axis=1)
        centers = centers[near]
        if not len(centers):
            continue
        local = unit.copy()
        local[:, 1:] *= radius
        offs = eps * _rotate(np.full(len(local), ang), local)
        pts = (centers[:, None, :] + offs[None]).reshape(-1, 3)
        inside = np.all((pts >= clo) & (pts < chi), axis=1)
        # points on the outer faces of the domain belong to the last cube
        on_hi = np.isclose(chi, spec.omega.bounds()[1])
        inside |= np.all((pts >= clo) & ((pts < chi) | (on_hi & (pts <= chi))), axis=1)
        if not inside.any():
            continue
        vals = np.abs(lp_approximation(psi, spec, partition, pts[inside])) ** p
        total += float(vals.sum()) * eps**2 * radius * dA
    return eps * total


def boundary_limit(psi, spec, p=1, n_x=8, n_axial=32, n_angular=32):
    """``int_Omega |Y~_x|^{-1} int_{Gamma~_x} |psi|^p`` with Gauss-Legendre in ``x``.

    On ``Gamma~_x`` the point ``R_x K_x yh`` has reference coordinate
    ``K~_x yh``; ``|Y~_x| = 1``.
    """
    lo, hi = spec.omega.bounds()
    t, wt = np.polynomial.legendre.leggauss(n_x)
    axes = [0.5 * (l + h) + 0.5 * (h - l) * t for l, h in zip(lo, hi)]
    wts = [0.5 * (h - l) * wt for l, h in zip(lo, hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    WX = np.einsum("i,j,k->ijk", *wts).ravel()
    yh, _ = gamma_grid(1.0, n_axial, n_angular)
    dA = (1.0 / n_axial) * (2 * np.pi / n_angular)
    total = 0.0
    for x, wx in zip(X, WX):
        radius = float(spec.rho(x)) * spec.a
        ky = yh.copy()
        ky[:, 1:] *= radius
        w = float(shear_w(spec, x))
        ref = _shear_apply(np.full(len(ky), w), ky, inverse=True)
        xs = np.broadcast_to(x, ref.shape)
        total += wx * radius * dA * float(np.sum(np.abs(psi.tilde(xs, ref)) ** p))
    return total


def boundary_measure_limit_check(psi_factory, spec, eps_list, p=1, n_axial=32, n_angular=32):
    """Compare the scaled surface integral with its two-scale limit along ``eps_list``.

    ``psi_factory(spec)`` builds the two-scale function for a given scale (the
    reference form does not depend on ``eps``, but the function carries ``spec``).
    """
    if p not in (1, 2):
        raise ValidationError("p must be 1 or 2")
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValidationError("eps_list must be decreasing")
    rows = []
    limit = None
    for e in eps_list:
        s = spec.replace(eps=e)
        psi = psi_factory(s)
        if limit is None:
            limit = boundary_limit(psi, s, p, n_axial=n_axial, n_angular=n_angular)
        part = partition_cubes(s)
        rows.append(BoundaryLimitRow(e, boundary_integral(psi, s, part, p, n_axial, n_angular), limit))
    return rows
