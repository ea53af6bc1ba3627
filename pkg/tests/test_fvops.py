import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plyhomog.errors import NoConvergence
from plyhomog.fvops import EnergyOperator, mean_projector, pcg


def _random_operator(seed, shape=(4, 5, 6), cross=True):
    rng = np.random.default_rng(seed)
    face = [rng.uniform(0.5, 2.0, shape) for _ in range(3)]
    cr = {}
    if cross:
        # off-diagonal weights small enough that every block form stays positive
        cr = {(d, e): rng.uniform(-0.2, 0.2, shape) for d, e in ((0, 1), (0, 2), (1, 2))}
    return EnergyOperator(h=(0.3, 0.5, 0.7), face=face, cross=cr)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_operator_symmetric_psd(seed):
    op = _random_operator(seed)
    rng = np.random.default_rng(seed + 1)
    u, v = rng.standard_normal((2,) + op.shape)
    assert np.vdot(u, op.apply(v)) == pytest.approx(np.vdot(op.apply(u), v), rel=1e-10, abs=1e-10)
    assert np.vdot(u, op.apply(u)) >= -1e-12
    assert op.energy(u) == pytest.approx(np.vdot(u, op.apply(u)), rel=1e-10)


def test_constants_in_null_space():
    op = _random_operator(3)
    assert np.abs(op.apply(np.full(op.shape, 2.0))).max() < 1e-12


def test_source_is_energy_gradient():
    op = _random_operator(4)
    rng = np.random.default_rng(5)
    v = np.array([0.3, -0.2, 0.5])
    u = rng.standard_normal(op.shape)
    du = rng.standard_normal(op.shape)
    t = 1e-6
    fd = (op.energy(u + t * du, [np.full(op.shape, x) for x in v])
          - op.energy(u - t * du, [np.full(op.shape, x) for x in v])) / (2 * t)
    exact = 2 * np.vdot(du, op.apply(u) - op.source(v))
    assert fd == pytest.approx(exact, rel=1e-6)


def test_pcg_solves_periodic_problem():
    op = _random_operator(6)
    rng = np.random.default_rng(7)
    active = np.ones(op.shape, bool)
    proj = mean_projector(active)
    x_true = proj(rng.standard_normal(op.shape))
    b = op.apply(x_true)
    x, hist = pcg(op.apply, b, op.diagonal(), tol=1e-12, project=proj)
    assert hist[-1] <= 1e-12
    assert np.abs(x - x_true).max() < 1e-8


def test_pcg_zero_rhs_and_failure():
    op = _random_operator(8, cross=False)
    x, hist = pcg(op.apply, np.zeros(op.shape), op.diagonal())
    assert np.all(x == 0) and hist == [0.0]
    active = np.ones(op.shape, bool)
    b = mean_projector(active)(np.random.default_rng(0).standard_normal(op.shape))
    with pytest.raises(NoConvergence):
        pcg(op.apply, b, op.diagonal(), tol=1e-14, maxiter=2, project=mean_projector(active))
