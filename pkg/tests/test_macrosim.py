import numpy as np
import pytest
from scipy.integrate import solve_ivp

from plyhomog.cellsolver import effective_at
from plyhomog.kinetics import KineticsSpec, ReactionLaw, kinetics_battery
from plyhomog.laws import AngleLaw, Bump, FieldLaw, RadiusLaw, RateLaw
from plyhomog.macrosim import (assemble_macro, effective_lattice, init_macro_state, interpolate_coefficients,
                               macro_monitors, macro_operator, rotated_reference, run_macro, step_macro,
                               surface_rules)

from .conftest import make_spec

const = lambda v: FieldLaw("constant", float(v))  # noqa: E731
SMOOTH = FieldLaw("cosine", 1.0, amp=0.5, freq=(1, 0, 1))


def test_uniform_geometry_single_solve():
    spec = make_spec(gamma=AngleLaw("constant", 0.3))
    asm = assemble_macro(spec, KineticsSpec(), 4, n_cell=32)
    ref = effective_at(spec, [0.5, 0.5, 0.5], n=32)
    assert asm.anchors["theta"].size == 1
    assert np.abs(asm.tensor - ref.tensor).max() < 1e-12
    assert np.all(asm.theta == ref.theta)


def test_surface_rule_weights():
    spec = make_spec(a=0.2, rho=RadiusLaw(1.0, (0.3, 0.0, 0.5)))
    X = np.random.default_rng(0).random((50, 3))
    w, a, b, local = surface_rules(spec, KineticsSpec(), X)
    assert np.abs(w.sum(axis=-1) - 2 * np.pi * spec.rho(X) * spec.a).max() <= 1e-10


def test_surface_term_closed_form():
    spec = make_spec(a=0.2)
    kin = KineticsSpec(alpha=RateLaw(const(0.7), Bump("flat")), beta=RateLaw(const(0.4), Bump("flat")),
                       rf0_1=const(1.5), rb0_1=const(0.5))
    asm = assemble_macro(spec, kin, 4, n_cell=32)
    c = asm.c
    term = np.sum(asm.q_weights * (asm.q_beta * asm.r_b - asm.q_alpha * asm.r_f * c[..., None]), axis=-1)
    closed = 2 * np.pi * 0.2 * (0.4 * 0.5 - 0.7 * 1.5 * c)
    assert np.abs(term - closed).max() < 1e-12


def test_theta_weighted_mass_conserved():
    spec = make_spec(gamma=AngleLaw("linear", 0.0, np.pi))
    kin = KineticsSpec(c0=SMOOTH)
    asm = assemble_macro(spec, kin, 16, n_effective_lattice=3, n_cell=32, tol=1e-12)
    m0 = macro_monitors(asm)["mass"]
    for _ in range(3):
        m1 = macro_monitors(asm)["mass"]
        step_macro(asm, kin, 0.01, tol=1e-12)
        assert abs(macro_monitors(asm)["mass"] - m1) <= 1e-10 * m0


def test_macro_operator_symmetric_psd():
    spec = make_spec(gamma=AngleLaw("linear", 0.0, np.pi))
    asm = assemble_macro(spec, KineticsSpec(), 8, n_effective_lattice=3, n_cell=32)
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal((2,) + asm.shape)
    op = asm.op
    assert np.vdot(u, op.apply(v)) == pytest.approx(np.vdot(op.apply(u), v), rel=1e-10)
    assert op.energy(u) >= 0


def test_detailed_balance_fixed_point():
    kin = KineticsSpec(alpha=RateLaw(const(1.0), Bump("flat")), beta=RateLaw(const(2.0), Bump("flat")),
                       c0=const(2.0), rf0_1=const(0.5), rb0_1=const(0.5))
    asm = assemble_macro(make_spec(), kin, 8, n_cell=32, tol=1e-14)
    step_macro(asm, kin, 0.01, tol=1e-14)
    assert np.abs(asm.c - 2.0).max() <= 1e-12
    assert np.abs(asm.r_f - 0.5).max() <= 1e-12 and np.abs(asm.r_b - 0.5).max() <= 1e-12


def test_zero_kinetics_constant():
    kin = KineticsSpec(c0=const(0.3))
    run = run_macro(make_spec(), kin, 8, dt=0.01, T=0.05, n_snapshots=3, n_cell=32)
    assert np.abs(run.snapshots[-1][1] - 0.3).max() < 1e-12


def test_cosine_mode_decay_rate():
    # uniform tensor; cos(pi x3) satisfies the no-flux walls
    spec = make_spec(a=0.2)
    kin = KineticsSpec(c0=FieldLaw("cosine", 1.0, amp=1.0, freq=(0, 0, 1)))
    asm = assemble_macro(spec, kin, 64, n_cell=32)
    rate = asm.tensor[0, 0, 0, 2, 2] * np.pi**2 / asm.theta[0, 0, 0]
    dt, n = 1e-3, 5
    c0 = asm.c - 1.0
    for _ in range(n):
        step_macro(asm, kin, dt)
    observed = -np.log(np.vdot(asm.c - 1.0, c0) / np.vdot(c0, c0)) / (n * dt)
    assert observed == pytest.approx(rate, rel=0.02)


def test_pure_decay_matches_ode():
    lam = 2.0
    kin = KineticsSpec(F=ReactionLaw("linear", 0.0, lam), c0=const(1.0))
    run = run_macro(make_spec(), kin, 4, dt=1e-4, T=0.1, n_snapshots=2, n_cell=32)
    assert np.abs(run.snapshots[-1][1] - np.exp(-lam * 0.1)).max() <= 1e-8


def test_receptor_relaxation_matches_ode():
    a, b, ra = 1.0, 0.5, 0.2
    kin = KineticsSpec(A=1e-6, alpha=RateLaw(const(a), Bump("flat")), beta=RateLaw(const(b), Bump("flat")),
                       c0=const(1.0), rf0_1=const(1.0), rb0_1=const(0.0))
    spec = make_spec(a=ra)
    T = 2.0
    run = run_macro(spec, kin, 4, dt=0.005, T=T, n_snapshots=2, n_cell=32)
    theta = run.assembly.theta[0, 0, 0]
    S = 2 * np.pi * ra

    def rhs(t, y):
        c, rf, rb = y
        J = a * c * rf - b * rb
        return [-S * J / theta, -J, J]

    ref = solve_ivp(rhs, (0, T), [1.0, 1.0, 0.0], rtol=1e-10, atol=1e-12).y[:, -1]
    _, c, rf, rb = run.snapshots[-1]
    assert np.abs(c - ref[0]).max() <= 0.01 * ref[0]
    assert np.abs(rf - ref[1]).max() <= 0.01 * ref[1]
    assert np.abs(rb - ref[2]).max() <= 0.01 * ref[2]


def test_rotated_tensor_covariance():
    a0 = effective_at(make_spec(a=0.2), [0.5, 0.5, 0.5], n=64).tensor
    spec = make_spec(a=0.2, gamma=AngleLaw("linear", 0.0, np.pi))
    axes, th, te = effective_lattice(spec, n_eff=5, n_cell=64)
    ref = rotated_reference(a0, np.pi * axes[2])
    assert np.abs(te - ref[None, None]).max() <= 0.01 * np.abs(a0).max()


def test_interpolation_exact_for_uniform():
    te = np.diag([0.8, 0.6, 0.6]).reshape(1, 1, 1, 3, 3)
    X = np.random.default_rng(2).random((4, 4, 4, 3))
    th, T, n = interpolate_coefficients(None, np.array([[[0.9]]]), te, X)
    assert n == 0 and np.all(th == 0.9) and np.all(T == te.reshape(3, 3))


def test_battery_macro_nonnegative():
    spec = make_spec(gamma=AngleLaw("linear", 0.0, np.pi))
    for name, kin in kinetics_battery().items():
        run = run_macro(spec, kin, 8, dt=0.005, T=0.05, n_snapshots=2, n_effective_lattice=3, n_cell=32)
        asm = run.assembly
        assert asm.c.min() >= -1e-8 and asm.r_f.min() >= -1e-8 and asm.r_b.min() >= -1e-8, name
