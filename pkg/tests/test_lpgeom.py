import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plyhomog.errors import AnchorMissing, NonPositiveValue, ValidationError
from plyhomog.laws import AngleLaw, RadiusLaw
from plyhomog.lpgeom import (chi_l2_difference, classify_lp, fiber_shift_bound_check, lp_locate,
                             partition_cubes, scaling_fit, two_point_slope)
from plyhomog.microgeom import Phase, classify_nonperiodic

from .conftest import make_spec


def test_partition_count_at_small_eps():
    p = partition_cubes(make_spec(eps=2**-6, r_exp=0.75))
    assert p.side == pytest.approx(2**-4.5)
    assert p.shape == (23, 23, 23)


def test_partition_tiles_domain():
    spec = make_spec(eps=2**-4, gamma=AngleLaw("linear", 0.0, np.pi))
    p = partition_cubes(spec)
    vol = sum(np.prod(np.subtract(*p.cube_bounds(n, clip_to=spec.omega)[::-1])) for n in range(p.count))
    assert vol == pytest.approx(1.0, abs=1e-12)
    # count bound N <= C eps^{-3r}
    assert p.count <= (1 + 2) ** 3 * spec.eps ** (-3 * spec.r_exp)


def test_anchor_in_own_cube():
    spec = make_spec(eps=2**-4, gamma=AngleLaw("linear", 0.0, np.pi))
    p = partition_cubes(spec)
    assert np.all(p.cube_index(p.anchors) == np.arange(p.count))


def test_anchor_missing_when_cube_near_cell_size():
    with pytest.raises(AnchorMissing):
        partition_cubes(make_spec(eps=0.125, r_exp=0.99, gamma=AngleLaw("linear", 0.0, np.pi)))


def test_exactness_collapse():
    spec = make_spec(eps=2**-4, gamma=AngleLaw("constant", 0.9), rho=RadiusLaw(1.2))
    p = partition_cubes(spec)
    x = np.random.default_rng(3).random((200_000, 3))
    assert np.array_equal(classify_lp(spec, p, x), classify_nonperiodic(spec, x))


def test_anchor_point_is_fiber():
    spec = make_spec(eps=2**-4, gamma=AngleLaw("linear", 0.0, np.pi))
    p = partition_cubes(spec)
    inner = np.all((p.anchors > 0.1) & (p.anchors < 0.9), axis=1)
    assert np.all(classify_lp(spec, p, p.anchors[inner]) == Phase.FIBER)


def test_mismatch_exists_for_twist():
    spec = make_spec(eps=2**-4, gamma=AngleLaw("linear", 0.0, 1.0))
    p = partition_cubes(spec)
    x = np.random.default_rng(4).random((200_000, 3))
    assert np.any(classify_lp(spec, p, x) != classify_nonperiodic(spec, x))


def test_lp_locate_reconstructs_point():
    spec = make_spec(eps=2**-4, gamma=AngleLaw("linear", 0.0, np.pi))
    p = partition_cubes(spec)
    x = np.random.default_rng(5).random((1000, 3))
    n, xi, y = lp_locate(spec, p, x)
    assert np.all(np.abs(y) <= 0.5 + 1e-12)


def test_chi_difference_zero_for_uniform_geometry():
    rep = chi_l2_difference(make_spec(eps=2**-4, gamma=AngleLaw("constant", 0.4)), 
                            partition_cubes(make_spec(eps=2**-4, gamma=AngleLaw("constant", 0.4))), 50_000)
    assert rep.i1 == 0.0 and rep.i2 == 0.0 and rep.total == 0.0


def test_chi_difference_affine_radius_only_i1():
    spec = make_spec(eps=2**-4, rho=RadiusLaw(1.0, (0.0, 0.0, 0.5)), a=0.2)
    rep = chi_l2_difference(spec, partition_cubes(spec), 100_000)
    assert rep.i2 == 0.0
    assert rep.i1 > 3 * rep.stderr_i1


def test_chi_difference_decomposition_identity():
    spec = make_spec(eps=2**-4, gamma=AngleLaw("linear", 0.0, np.pi), rho=RadiusLaw(1.0, (0, 0, 0.4)))
    rep = chi_l2_difference(spec, partition_cubes(spec), 100_000)
    assert rep.total == pytest.approx(rep.i1 + rep.i2 - 2 * rep.cross, abs=1e-12)
    assert rep.total <= rep.i1 + rep.i2 + 1e-15


def test_chi_difference_shrinks():
    tot = []
    for eps in (2**-3, 2**-4, 2**-5):
        spec = make_spec(eps=eps, gamma=AngleLaw("linear", 0.0, np.pi))
        tot.append(chi_l2_difference(spec, partition_cubes(spec), 200_000))
    for a, b in zip(tot, tot[1:]):
        assert b.total < a.total + 2 * np.hypot(a.stderr_total, b.stderr_total)


def test_chi_difference_rejects_few_samples():
    spec = make_spec()
    with pytest.raises(ValidationError):
        chi_l2_difference(spec, partition_cubes(spec), 100)


def test_shift_examples():
    assert fiber_shift_bound_check(0.2, 1.0, [0, 0, 0])[0] == 0.0
    lhs, _ = fiber_shift_bound_check(0.2, 1.0, [0, 0.01, 0])
    assert lhs == pytest.approx(0.008, rel=0.01)
    assert fiber_shift_bound_check(0.2, 1.0, [0.05, 0, 0], mode="infinite")[0] == 0.0


def test_shift_transverse_matches_monte_carlo():
    # independent 2D MC of the disc symmetric difference
    r, d = 0.2, 0.05
    rng = np.random.default_rng(6)
    p = rng.uniform(-0.3, 0.3, size=(400_000, 2))
    a = np.hypot(*p.T) <= r
    b = np.hypot(p[:, 0] - d, p[:, 1]) <= r
    mc = 0.36 * np.mean(a != b)
    lhs, _ = fiber_shift_bound_check(r, 1.0, [0, d, 0], mode="infinite")
    assert lhs == pytest.approx(mc, rel=0.03)


def test_shift_bound_grid():
    for r in np.linspace(0.05, 0.4, 5):
        for L in np.linspace(0.5, 2.0, 5):
            for frac in np.linspace(0.0, 0.5, 5):
                for direction in ([0, 1, 0], [1, 0, 0], [0.6, 0, 0.8]):
                    tau = frac * r * np.asarray(direction)
                    for mode in ("finite", "infinite"):
                        lhs, bound = fiber_shift_bound_check(r, L, tau, mode=mode)
                        assert lhs <= bound + 1e-15


@settings(max_examples=50)
@given(st.floats(0.5, 3.0), st.floats(0.1, 10.0))
def test_scaling_fit_exact_power(p, c):
    eps = 2.0 ** -np.arange(3, 7)
    slope, intercept, res = scaling_fit(np.column_stack([eps, c * eps**p]))
    assert slope == pytest.approx(p, abs=1e-12)
    assert intercept == pytest.approx(np.log(c), abs=1e-10)


def test_scaling_fit_examples():
    eps = 2.0 ** -np.arange(3, 7)
    assert scaling_fit(np.column_stack([eps, eps**2]))[0] == pytest.approx(2.0, abs=1e-12)
    s, b, _ = scaling_fit(np.column_stack([eps, 3 * eps]))
    assert s == pytest.approx(1.0, abs=1e-12) and b == pytest.approx(np.log(3), abs=1e-12)
    rng = np.random.default_rng(7)
    noisy = eps**1.5 * (1 + 0.05 * rng.standard_normal(eps.size))
    assert abs(scaling_fit(np.column_stack([eps, noisy]))[0] - 1.5) < 0.1


def test_scaling_fit_errors():
    with pytest.raises(NonPositiveValue):
        scaling_fit([[0.1, 1.0], [0.05, 0.0], [0.025, 1.0]])
    with pytest.raises(ValidationError):
        scaling_fit([[0.1, 1.0], [0.05, 0.5]])
    assert two_point_slope(0.25, 1.0, 0.125, 0.5) == pytest.approx(1.0)
