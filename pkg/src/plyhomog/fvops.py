"""Cell-centered finite volumes in energy form, and a matrix-free PCG.

The discrete energy of ``(grad u + v)^T G (grad u + v)`` on a grid of cells is

    sum_faces  V c_f G_dd (g_f + v_d)^2
  + sum_blocks V kappa_b sum_{d != e} G_de (gb_d + v_d)(gb_e + v_e)

where ``g_f`` is the face difference quotient and ``gb_d`` the average of the
four ``d``-faces of a 2x2x2 block of cells. Stationarity gives a symmetric
positive semi-definite operator as long as every block matrix (face minima on
the diagonal, ``G_de`` off it) is positive semi-definite. Arrays are periodic
(``np.roll``); homogeneous Neumann boundaries are obtained by zero coefficients
on wrap-around faces and blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence

PAIRS = ((0, 1), (0, 2), (1, 2))


def _others(d):
    return [e for e in range(3) if e != d]


def block_average(g, d):
    """Average of the four ``d``-faces of each block (block indexed by its lowest cell)."""
    e, f = _others(d)
    ge = np.roll(g, -1, e)
    return 0.25 * (g + ge + np.roll(g, -1, f) + np.roll(ge, -1, f))


def block_average_T(b, d):
    e, f = _others(d)
    be = np.roll(b, 1, e)
    return 0.25 * (b + be + np.roll(b, 1, f) + np.roll(be, 1, f))


@dataclass
class EnergyOperator:
    """Quadratic energy operator on a periodic cell grid.

    Parameters
    ----------
    h : sequence of 3 floats
        Cell sizes.
    face : list of 3 arrays
        ``face[d][i]`` is ``c_f G_dd`` on the face between cell ``i`` and ``i + e_d``.
    cross : dict
        ``cross[(d, e)][i]`` is ``kappa_b G_de`` on the block whose lowest cell is ``i``.
    """

    h: tuple
    face: list
    cross: dict

    def __post_init__(self):
        self.h = tuple(float(v) for v in self.h)
        self.volume = float(np.prod(self.h))
        self.shape = np.shape(self.face[0])
        self._diag = None

    def gradients(self, u):
        return [(np.roll(u, -1, d) - u) / self.h[d] for d in range(3)]

    def face_fluxes(self, u, v=None):
        """``dE/dg_d / 2V`` for each direction, for the state ``u`` and shift ``v``."""
        g = self.gradients(u) if u is not None else [np.zeros(self.shape)] * 3
        if v is not None:
            g = [g[d] + v[d] for d in range(3)]
        flux = [self.face[d] * g[d] for d in range(3)]
        if self.cross:
            gb = [block_average(g[d], d) for d in range(3)]
            for (d, e), k in self.cross.items():
                flux[d] = flux[d] + block_average_T(k * gb[e], d)
                flux[e] = flux[e] + block_average_T(k * gb[d], e)
        return flux

    def _divergence(self, flux):
        out = np.zeros(self.shape)
        for d in range(3):
            out += (np.roll(flux[d], 1, d) - flux[d]) / self.h[d]
        return out * self.volume

    def apply(self, u):
        """Stiffness times ``u`` (half the gradient of the energy)."""
        return self._divergence(self.face_fluxes(u))

    def source(self, v):
        """Right-hand side ``-(dE/du)/2`` at ``u = 0`` for a constant shift ``v``."""
        return -self._divergence(self.face_fluxes(None, [np.full(self.shape, vd) for vd in v]))

    def energy(self, u, v=None):
        g = self.gradients(u)
        if v is not None:
            g = [g[d] + v[d] for d in range(3)]
        total = sum(float(np.sum(self.face[d] * g[d] ** 2)) for d in range(3))
        if self.cross:
            gb = [block_average(g[d], d) for d in range(3)]
            for (d, e), k in self.cross.items():
                total += 2.0 * float(np.sum(k * gb[d] * gb[e]))
        return self.volume * total

    def diagonal(self):
        if self._diag is None:
            diag = np.zeros(self.shape)
            for d in range(3):
                diag += (self.face[d] + np.roll(self.face[d], 1, d)) / self.h[d] ** 2
            # face part only; the cross part nearly cancels over the eight blocks of a cell
            self._diag = diag * self.volume
        return self._diag


def pcg(apply, b, diag, x0=None, tol=1e-10, maxiter=5000, active=None, project=None):
    """Jacobi-preconditioned conjugate gradients.

    Iterates until ``||r|| <= tol * ||b||``. Entries outside ``active`` (or with
    zero diagonal) are frozen at zero. ``project`` removes a null-space
    component from iterates and residuals.

    Returns ``(x, history)`` with the relative residual history.
    """
    if active is None:
        active = diag > 0
    inv = np.where(active, 1.0 / np.where(active, diag, 1.0), 0.0)
    b = np.where(active, b, 0.0)
    if project is not None:
        b = project(b)
    x = np.zeros_like(b) if x0 is None else np.where(active, x0, 0.0)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), [0.0]
    r = b - np.where(active, apply(x), 0.0)
    if project is not None:
        r = project(r)
    z = inv * r
    p = z.copy()
    rz = float(np.vdot(r, z))
    history = [float(np.linalg.norm(r)) / bnorm]
    for _ in range(maxiter):
        if history[-1] <= tol:
            break
        q = np.where(active, apply(p), 0.0)
        pq = float(np.vdot(p, q))
        if pq <= 0:
            raise NoConvergence(f"PCG breakdown (p.Ap = {pq:.3e})", history)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        if project is not None:
            r = project(r)
        history.append(float(np.linalg.norm(r)) / bnorm)
        z = inv * r
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        if history[-1] > tol:
            raise NoConvergence(f"PCG did not reach {tol:.1e} in {maxiter} iterations "
                                f"(residual {history[-1]:.3e})", history)
    if project is not None:
        x = project(x)
    return x, history


def mean_projector(active, weights=None):
    """Projection removing the (weighted) mean over ``active`` entries."""
    w = np.where(active, 1.0 if weights is None else weights, 0.0)
    wsum = float(w.sum())

    def project(x):
        return np.where(active, x - float(np.sum(w * x)) / wsum, 0.0)

    return project
