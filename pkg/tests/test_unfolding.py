import numpy as np
import pytest

from plyhomog.errors import BadExponent, ValidationError
from plyhomog.laws import AngleLaw, RadiusLaw
from plyhomog.lpgeom import partition_cubes, scaling_fit
from plyhomog.unfolding import (TwoScaleFunction, boundary_measure_limit_check, boundary_unfold,
                                direct_norm_sq, lp_approximation, lp_difference_norm, manufactured_library,
                                masked_fraction, random_smooth_fields, smooth_partition, unfold,
                                unfolded_norm_sq, unfolding_cells)

from .conftest import make_spec


def _twist(eps, r=0.75):
    return make_spec(eps=eps, r_exp=r, gamma=AngleLaw("linear", 0.0, np.pi))


def test_lp_approximation_y_independent():
    spec = _twist(2**-4)
    p = partition_cubes(spec)
    psi = TwoScaleFunction(lambda x, yh: np.sin(x[:, 0]) + x[:, 2] ** 2, spec)
    x = np.random.default_rng(0).random((1000, 3))
    assert np.array_equal(lp_approximation(psi, spec, p, x), np.sin(x[:, 0]) + x[:, 2] ** 2)


def test_lp_approximation_periodic_substitution():
    spec = make_spec(eps=2**-4)
    p = partition_cubes(spec)
    psi = TwoScaleFunction(lambda x, yh: np.sin(2 * np.pi * yh[:, 0]), spec)
    x = np.random.default_rng(1).random((1000, 3))
    assert np.allclose(lp_approximation(psi, spec, p, x), np.sin(2 * np.pi * x[:, 0] / spec.eps), atol=1e-9)


def test_lp_difference_norm_slope():
    spec0 = _twist(2**-3)
    psi_of = lambda s: manufactured_library(s)[1]
    pairs = []
    for e in (2**-3, 2**-4, 2**-5, 2**-6):
        s = spec0.replace(eps=e)
        pairs.append((e, lp_difference_norm(psi_of(s), s, partition_cubes(s), n_samples=100_000)))
    slope = scaling_fit(pairs)[0]
    assert slope >= spec0.r_exp - 0.15


def test_smooth_partition():
    # the plateau needs half the cube side to exceed delta
    spec = _twist(2**-6)
    p = partition_cubes(spec)
    sp = smooth_partition(spec, p, 0.99)
    assert p.side / 2 > sp.delta
    lo, hi = p.cube_bounds(5)
    assert sp(0.5 * (lo + hi))[0] == pytest.approx(1.0)
    face = 0.5 * (lo + hi)
    face[0] = lo[0]
    assert sp(face)[0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(BadExponent):
        smooth_partition(spec, p, 0.5)


def test_smooth_partition_gradient_bound():
    for e in (2**-3, 2**-4, 2**-5, 2**-6):
        spec = _twist(e)
        sp = smooth_partition(spec, partition_cubes(spec), 0.85)
        x = np.random.default_rng(2).random((50_000, 3))
        gmax = np.linalg.norm(sp.gradient(x), axis=1).max()
        assert gmax * sp.delta <= 4.0


def test_smooth_partition_gradient_matches_finite_difference():
    spec = _twist(2**-4)
    sp = smooth_partition(spec, partition_cubes(spec), 0.85)
    x = np.random.default_rng(3).random((200, 3)) * 0.9 + 0.05
    h = 1e-7
    fd = np.stack([(sp(x + h * e) - sp(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(sp.gradient(x), fd, atol=1e-4 / sp.delta)


def test_unfold_constant_and_periodic():
    spec = make_spec(eps=2**-5)
    p = partition_cubes(spec)
    f1 = unfold(lambda x: np.ones(len(x)), spec, p, y_grid=4)
    assert np.all(f1.values == 1.0)
    f2 = unfold(lambda x: np.sin(2 * np.pi * x[:, 0] / spec.eps), spec, p, y_grid=4)
    ref = np.sin(2 * np.pi * f2.y_nodes[:, 0])
    assert np.abs(f2.values - ref[None, :]).max() < 1e-9


def test_unfolding_isometry():
    spec = _twist(2**-5)
    p = partition_cubes(spec)
    cells = unfolding_cells(spec, p)
    assert len(cells) > 0
    for u in random_smooth_fields(0, count=20):
        lhs = unfolded_norm_sq(unfold(u, spec, p, y_grid=8, cells=cells), cells.volume)
        rhs = direct_norm_sq(u, spec, p, cells)
        assert abs(lhs - rhs) <= 1e-3 * rhs


def test_masked_fraction_shrinks():
    fr = []
    for e in (2**-3, 2**-4, 2**-5, 2**-6):
        s = _twist(e, r=0.5)
        fr.append(masked_fraction(s, partition_cubes(s)))
    assert all(b < a for a, b in zip(fr, fr[1:]))


def test_boundary_unfold_constant_and_product():
    spec = _twist(2**-5)
    p = partition_cubes(spec)
    x = np.random.default_rng(4).random((300, 3))
    f = boundary_unfold(lambda q: np.full(len(q), 2.5), spec, p, x, n_axial=4, n_angular=8)
    assert np.all(f.values[~f.mask] == 2.5)
    assert np.all(f.values[f.mask] == 0.0)


def test_boundary_unfold_lipschitz_gap():
    spec = _twist(2**-5)
    p = partition_cubes(spec)
    x = np.random.default_rng(5).random((300, 3))
    G = lambda q: q[:, 0] + 2 * q[:, 2]
    f = boundary_unfold(G, spec, p, x, n_axial=4, n_angular=8)
    gap = np.abs(f.values - G(x)[:, None])[~f.mask].max()
    assert gap <= np.sqrt(5) * 2 * spec.eps


def test_boundary_limit_constant_one():
    spec = make_spec(eps=2**-3, a=0.2)
    psi = lambda s: TwoScaleFunction(lambda x, yh: np.ones(len(x)), s)
    rows = boundary_measure_limit_check(psi, spec, [2**-3, 2**-4, 2**-5], n_axial=8, n_angular=16)
    assert rows[0].limit == pytest.approx(2 * np.pi * 0.2, rel=1e-10)
    assert rows[-1].rel_gap <= 0.02


def test_boundary_limit_zero():
    spec = make_spec(eps=2**-3, a=0.2)
    psi = lambda s: TwoScaleFunction(lambda x, yh: np.zeros(len(x)), s)
    rows = boundary_measure_limit_check(psi, spec, [2**-3], n_axial=4, n_angular=8)
    assert rows[0].lhs == 0.0 and rows[0].limit == 0.0


def test_boundary_limit_affine_radius():
    spec = make_spec(eps=2**-3, a=1.0, rho=RadiusLaw(0.15, (0, 0, 0.1)))
    psi = lambda s: TwoScaleFunction(lambda x, yh: np.ones(len(x)), s)
    rows = boundary_measure_limit_check(psi, spec, [2**-3], n_axial=4, n_angular=8)
    assert rows[0].limit == pytest.approx(2 * np.pi * 0.2, rel=1e-10)


def test_boundary_limit_rejects_bad_input():
    spec = make_spec()
    psi = lambda s: TwoScaleFunction(lambda x, yh: np.ones(len(x)), s)
    with pytest.raises(ValidationError):
        boundary_measure_limit_check(psi, spec, [0.125, 0.25])
    with pytest.raises(ValidationError):
        boundary_measure_limit_check(psi, spec, [0.25], p=3)
