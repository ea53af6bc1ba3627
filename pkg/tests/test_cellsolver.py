import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plyhomog.cellsolver import (EffectiveCache, build_reference_cell, effective_at, effective_tensor,
                                 geometry_hash, porosity, rotated, solve_corrector, surface_quadrature)
from plyhomog.errors import DegenerateCell, ValidationError
from plyhomog.laws import AngleLaw, RadiusLaw

from .conftest import make_spec

X = [0.5, 0.5, 0.5]


def rayleigh_conductivity(f):
    """Effective transverse conductivity of a square array of insulating cylinders."""
    return 1.0 - 2.0 * f / (1.0 + f + 0.3058 * f**4)


def test_no_hole_cell():
    spec = make_spec(a=1e-9)
    cell = build_reference_cell(spec, X, n=16, A=2.0)
    assert np.all(cell.fraction == 1.0)
    ef = effective_tensor(cell)
    assert ef.theta == 1.0
    assert np.abs(ef.tensor - 2.0 * np.eye(3)).max() < 1e-10
    for j in (1, 2, 3):
        assert np.abs(solve_corrector(cell, j).field).max() < 1e-10


def test_fraction_matches_disc_area():
    cell = build_reference_cell(make_spec(a=0.25), X, n=64)
    assert abs(cell.theta - (1 - np.pi * 0.0625)) <= (1 - np.pi * 0.0625) * 2 / 64


def test_mask_axially_invariant():
    cell = build_reference_cell(make_spec(a=0.25), X, n=32, n_axial=4)
    assert np.array_equal(cell.fraction, np.roll(cell.fraction, 1, axis=0))


def test_axial_corrector_vanishes():
    cell = build_reference_cell(make_spec(a=0.25), X, n=32)
    assert np.abs(solve_corrector(cell, 1).field).max() < 1e-10


def test_transverse_corrector_self_refinement():
    spec = make_spec(a=0.25)
    coarse = solve_corrector(build_reference_cell(spec, X, n=64), 2).field[0]
    fine_cell = build_reference_cell(spec, X, n=256)
    fine = solve_corrector(fine_cell, 2).field[0]
    # restrict the fine field to the coarse grid by fluid-weighted block averages
    f = fine_cell.fraction[0]
    num = (fine * f).reshape(64, 4, 64, 4).sum(axis=(1, 3))
    den = f.reshape(64, 4, 64, 4).sum(axis=(1, 3))
    ok = den > 0
    restricted = np.where(ok, num / np.where(ok, den, 1), 0.0)
    # L2 over the fluid region: each voxel weighted by its fluid fraction
    wts = build_reference_cell(spec, X, n=64).fraction[0]
    gap = np.sqrt(np.sum(wts * (coarse - restricted) ** 2) / np.sum(wts * restricted**2))
    assert gap <= 0.02


def test_flat_tensor_values():
    ef = effective_at(make_spec(a=0.25), X, n=64)
    A = ef.tensor
    theta = 1 - np.pi * 0.0625
    assert A[0, 0] == pytest.approx(theta, rel=0.01)
    assert A[1, 1] == pytest.approx(A[2, 2], rel=0.01)
    assert np.linalg.norm(A - A.T) <= 1e-8 * np.linalg.norm(A)
    ev = np.linalg.eigvalsh(A)
    assert ev.min() > 0 and ev.max() <= ef.theta + 1e-12


def test_transverse_tensor_against_rayleigh():
    # independent closed-form oracle for square arrays of cylinders
    ef = effective_at(make_spec(a=0.25), X, n=64)
    assert ef.tensor[1, 1] == pytest.approx(rayleigh_conductivity(np.pi * 0.0625), rel=0.01)


def test_mesh_convergence_order():
    spec = make_spec(a=0.25)
    vals = [effective_at(spec, X, n=n).tensor[1, 1] for n in (32, 64, 128)]
    d1, d2 = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    assert d1 / d2 >= 1.7


def test_rotation_covariance_constant_angle():
    a0 = effective_at(make_spec(a=0.25), X, n=64).tensor
    a1 = effective_at(make_spec(a=0.25, gamma=AngleLaw("constant", 0.7)), X, n=64).tensor
    assert np.abs(a1 - rotated(a0, 0.7)).max() <= 0.01 * np.abs(a0).max()


def test_rotation_covariance_sheared():
    spec = make_spec(a=0.2, gamma=AngleLaw("linear", 0.0, np.pi))
    a0 = effective_at(make_spec(a=0.2), X, n=64).tensor
    for x3 in (0.2, 0.55):
        a1 = effective_at(spec, [0.4, 0.3, x3], n=64).tensor
        assert np.abs(a1 - rotated(a0, np.pi * x3)).max() <= 0.01 * np.abs(a0).max()


@settings(max_examples=8, deadline=None)
@given(st.floats(0.05, 0.4), st.floats(0.0, np.pi))
def test_tensor_bounds_property(ra, g):
    spec = make_spec(a=ra, gamma=AngleLaw("constant", g))
    ef = effective_at(spec, X, n=32)
    ev = np.linalg.eigvalsh(ef.tensor)
    assert ev.min() > 0 and ev.max() <= ef.theta * (1 + 1e-10)
    assert np.linalg.norm(ef.tensor - ef.tensor.T) <= 1e-8 * np.linalg.norm(ef.tensor)


def test_porosity():
    spec = make_spec(a=0.2)
    th, se = porosity(spec, X, n_mc=200_000)
    assert abs(th - (1 - 0.04 * np.pi)) <= 3 * se
    cell = build_reference_cell(spec, X, n=64)
    assert abs(th - cell.theta) <= 3 * se + 2 / 64
    assert porosity(make_spec(a=1e-9), X)[0] == 1.0
    with pytest.raises(ValidationError):
        porosity(spec, X, n_mc=10)


def test_build_errors():
    with pytest.raises(ValidationError):
        build_reference_cell(make_spec(), X, n=8)
    with pytest.raises(DegenerateCell):
        build_reference_cell(make_spec(a=0.4), X, n=16, min_fraction=0.9)


def test_surface_quadrature_weights():
    spec = make_spec(a=0.2, rho=RadiusLaw(1.0, (0.5, 0, 0)), gamma=AngleLaw("linear", 0, 1))
    q = surface_quadrature(spec, [0.4, 0.2, 0.7])
    assert q["weights"].sum() == pytest.approx(2 * np.pi * 1.2 * 0.2, abs=1e-12)


def test_cache_roundtrip(tmp_path):
    spec = make_spec()
    key = geometry_hash(spec, 32, 1.0)
    assert key != geometry_hash(spec, 64, 1.0)
    path = str(tmp_path / "c.npz")
    cache = EffectiveCache(path, key)
    assert cache.get((0, 1, 2)) is None and cache.misses == 1
    cache.put((0, 1, 2), 0.8, np.eye(3) * 0.7, 1e-11)
    cache.save()
    again = EffectiveCache(path, key)
    th, te, r = again.get((0, 1, 2))
    assert th == 0.8 and np.array_equal(te, np.eye(3) * 0.7) and again.hits == 1
    assert EffectiveCache(path, "other").get((0, 1, 2)) is None
