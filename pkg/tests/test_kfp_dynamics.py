import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from hypoflow.entropy_core import DEFAULT_FLOOR, PhiFamily, build_grid
from hypoflow.hypo_algebra import zeta
from hypoflow.kfp_dynamics import (
    AdaptiveLambdaState,
    PhaseField,
    PositivityError,
    adaptive_lambda_update,
    check_lemma_quadratic_form,
    decentred_center,
    decentred_center_closed_form,
    estimate_tau,
    evolve_kfp,
    exact_kfp_oracle,
    kinetic_diagnostics,
    ou_v_step,
    rho_statistics,
    strang_step,
    transport_step,
    v_independent_datum,
)


@pytest.fixture(scope="module")
def grid():
    return build_grid(2, 8.0, 97)


def field_of(grid, fn):
    x, v = grid.mesh
    return PhaseField(grid, fn(x, v), DEFAULT_FLOOR, 0.0)


def l2_error(grid, a, b):
    """Error in L2(dmu), the norm in which the ratio is controlled."""
    return math.sqrt(grid.integrate((a - b) ** 2))


# ---------------------------------------------------------------------------
# split steps
# ---------------------------------------------------------------------------


def test_phase_field_needs_2d():
    with pytest.raises(ValueError):
        PhaseField(build_grid(1, 8.0, 65), np.ones(65))


def test_transport_keeps_constants(grid):
    g = field_of(grid, lambda x, v: np.full_like(x, 1.0))
    out = transport_step(g, 0.3)
    assert np.max(np.abs(out.values - 1.0)) <= 1e-14
    assert out.time == pytest.approx(0.3)


def test_transport_keeps_radial_fields(grid):
    g = field_of(grid, lambda x, v: 1.0 + np.exp(-0.5 * (x * x + v * v)))
    out = transport_step(g, 0.7, conserve_mass=False)
    assert l2_error(grid, out.values, g.values) <= 1e-5


def test_transport_fourth_order():
    a, theta = 0.3, 0.5
    errs = []
    for n in (65, 129):
        g2 = build_grid(2, 8.0, n)
        x, v = g2.mesh
        out = transport_step(field_of(g2, lambda x, v: np.exp(a * x - 0.5 * a * a)), theta, conserve_mass=False)
        exact = np.exp(a * (x * math.cos(theta) - v * math.sin(theta)) - 0.5 * a * a)
        errs.append(l2_error(g2, out.values, exact))
    assert math.log2(errs[0] / errs[1]) >= 3.5


@pytest.mark.parametrize("theta", [0.1, 0.5])
def test_transport_rotates(grid, theta):
    a = 0.3
    g = field_of(grid, lambda x, v: np.exp(a * x - 0.5 * a * a))
    out = transport_step(g, theta, conserve_mass=False)
    x, v = grid.mesh
    exact = np.exp(a * (x * math.cos(theta) - v * math.sin(theta)) - 0.5 * a * a)
    assert l2_error(grid, out.values, exact) <= 2e-6


def test_transport_full_turn(grid):
    g = field_of(grid, lambda x, v: np.exp(0.4 * x + 0.2 * v - 0.1))
    n = 64
    out = g
    for _ in range(n):
        out = transport_step(out, 2 * math.pi / n, conserve_mass=False)
    assert l2_error(grid, out.values, g.values) <= 1e-4


def test_ou_v_step_linear_modes(grid):
    dt, eps = 0.05, 0.1
    x, v = grid.mesh
    gv = ou_v_step(field_of(grid, lambda x, v: 1.0 + eps * v), dt, conserve_mass=False)
    # the conjugated interpolant reproduces linear modes only up to spline error
    assert l2_error(grid, gv.values, 1.0 + eps * math.exp(-dt) * v) <= 1e-6
    gx = ou_v_step(field_of(grid, lambda x, v: 1.0 + eps * x), dt, conserve_mass=False)
    assert l2_error(grid, gx.values, 1.0 + eps * x) <= 1e-6


def test_strang_rejects_dt(grid):
    g = field_of(grid, lambda x, v: np.ones_like(x))
    with pytest.raises(ValueError):
        strang_step(g, 0.2)
    assert strang_step(g, 0.05).time == pytest.approx(0.05)


# ---------------------------------------------------------------------------
# decentred solution
# ---------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(x0=st.floats(-2, 2), v0=st.floats(-2, 2), t=st.floats(0, 10))
def test_center_closed_form_matches_rk4(x0, v0, t):
    a = decentred_center(x0, v0, t)
    b = decentred_center_closed_form(x0, v0, t)
    assert np.allclose(a, b, atol=1e-10)


def test_center_against_scipy():
    sol = solve_ivp(lambda _t, y: [y[1], -y[0] - y[1]], (0, 4), [1.0, -0.5], rtol=1e-12, atol=1e-14)
    assert np.allclose(decentred_center_closed_form(1.0, -0.5, 4.0), sol.y[:, -1], atol=1e-10)


def test_center_coefficient():
    # initial velocity of the v component is -x0 - v0
    h = 1e-6
    for x0, v0 in ((1.0, 0.0), (0.3, 0.7)):
        vs = decentred_center_closed_form(x0, v0, h)[1]
        assert (vs - v0) / h == pytest.approx(-x0 - v0, abs=1e-5)


def test_oracle_bounds(grid):
    with pytest.raises(ValueError):
        exact_kfp_oracle(2.5, 0.0, 0.0, grid)
    with pytest.raises(ValueError):
        decentred_center(1.0, 0.0, -1.0)


def test_v_independent_datum(grid):
    g = v_independent_datum(grid, 1.0)
    assert g.mass == pytest.approx(1.0, abs=1e-11)
    assert np.max(np.abs(np.diff(g.values, axis=1))) == 0.0


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("p", [1.25, 1.5, 2.0])
def test_diagnostics_closed_form(grid, p):
    g = exact_kfp_oracle(1.0, 0.5, 0.0, grid)
    xs, vs = 1.0, 0.5
    # int h_a h_b dgamma = (p/2)**2 c_a c_b exp(p (p - 1) |c|**2 / 2) for h = g**(p/2)
    moment = (0.5 * p) ** 2 * math.exp(0.5 * p * (p - 1.0) * (xs * xs + vs * vs))
    d = kinetic_diagnostics(g, PhiFamily(p))
    # fourth-order stencils at h = 1/6
    assert d.grad_v_sq == pytest.approx(vs * vs * moment, rel=1e-4)
    assert d.grad_x_sq == pytest.approx(xs * xs * moment, rel=1e-4)
    assert d.cross == pytest.approx(xs * vs * moment, rel=1e-4)
    assert d.J == pytest.approx(d.J_expanded, rel=1e-12)
    assert d.j == pytest.approx(d.a + d.b + d.c, rel=1e-14)


def test_diagnostics_lambda(grid):
    g = exact_kfp_oracle(1.0, 0.0, 0.0, grid)
    d = kinetic_diagnostics(g, PhiFamily(1.5), lam=0.5)
    assert d.J_lambda == pytest.approx(d.J_expanded, rel=1e-12)


def test_cauchy_schwarz_along_runs(all_kinetic_traces):
    for name, tr in all_kinetic_traces.items():
        for p in tr.p_list:
            a, b, c = (tr.series(p, k) for k in "abc")
            assert np.all(b * b - a * c <= 1e-10 * np.maximum(a * c, 1.0)), name


@pytest.mark.parametrize("p", [1.25, 1.5, 2.0])
def test_lemma_on_oracle(grid, p):
    rep = check_lemma_quadratic_form(exact_kfp_oracle(1.0, 0.5, 0.3, grid), PhiFamily(p))
    assert rep.margin >= -1e-10
    assert rep.excluded_nodes == 0


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------


def test_controller_invariants(kinetic_long):
    tr = kinetic_long
    for p, rows in tr.controller.items():
        kappa = PhiFamily(p).kappa
        lam, rho, eps = rows["lambda_t"], rows["rho_t"], rows["epsilon_t"]
        assert np.all(lam >= 0.5) and np.all(lam < 1.0)
        near = rows["branch"] != "bulk"
        expect = [zeta(e, l, 1.0, kappa) for e, l in zip(eps[near], lam[near])]
        assert np.allclose(rho[near], expect, atol=1e-14)
        bulk = ~near
        assert np.allclose(lam[bulk], 0.5 * (1.0 + eps[bulk]), atol=1e-15)
        tau = estimate_tau(tr.times, rho)
        assert np.allclose(rows["tau_partial"], tau.partial, atol=1e-12)


def test_controller_argument_checks(grid):
    g = exact_kfp_oracle(1.0, 0.0, 0.0, grid)
    d = kinetic_diagnostics(g, PhiFamily(1.5))
    with pytest.raises(ValueError):
        AdaptiveLambdaState.start(d, PhiFamily(1.5), nu_choice=2.0)
    st0 = AdaptiveLambdaState.start(d, PhiFamily(1.5))
    with pytest.raises(ValueError):
        adaptive_lambda_update(st0, kinetic_diagnostics(g, PhiFamily(2.0)), PhiFamily(2.0), 0.01)


def test_controller_stationary(grid):
    g = field_of(grid, lambda x, v: np.ones_like(x))
    st0 = AdaptiveLambdaState.start(kinetic_diagnostics(g, PhiFamily(1.5)), PhiFamily(1.5))
    assert (st0.lambda_t, st0.rho_t) == (0.5, 0.5)


# ---------------------------------------------------------------------------
# tau and rho statistics
# ---------------------------------------------------------------------------


def test_estimate_tau_examples():
    t = np.linspace(0, 20, 20001)
    flat = estimate_tau(t, np.full_like(t, 0.5))
    assert flat.value == 0.0 and flat.converged
    dec = estimate_tau(t, 0.5 + 0.5 * np.exp(-t))
    assert dec.value == pytest.approx(-math.expm1(-20.0), abs=1e-6)
    assert dec.converged
    grow = estimate_tau(t, np.full_like(t, 0.6))
    assert not grow.converged


def test_rho_statistics():
    t = np.array([0.0, 1.0, 2.0, 4.0])
    stats = rho_statistics(t, np.array([0.6, 0.5, 0.7, 0.4]))
    assert stats["fraction_le_half"] == pytest.approx(0.25)
    assert stats["samples_le_half"] == 2
    assert stats["min_rho"] == 0.4
    with pytest.raises(ValueError):
        rho_statistics([0.0], [0.5])


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def test_stationary_run_stays_flat(grid):
    g = field_of(grid, lambda x, v: np.ones_like(x))
    tr = evolve_kfp(g, 0.2, 0.02, PhiFamily(1.5), sample_every=2)
    assert np.max(np.abs(tr.series(1.5, "entropy"))) <= 1e-20
    assert np.max(np.abs(tr.series(1.5, "J"))) <= 1e-20


def test_mass_and_entropy_decay(kinetic_long):
    assert kinetic_long.mass_drift <= 1e-10
    for p in kinetic_long.p_list:
        assert np.all(np.diff(kinetic_long.series(p, "entropy")) <= 1e-12)


def test_positivity_error(grid):
    g = field_of(grid, lambda x, v: (x > 0).astype(float))
    with pytest.raises(PositivityError):
        evolve_kfp(g, 0.1, 0.05, PhiFamily(2.0), negativity_tol=0.0, mass_tol=1.0)


def test_evolve_argument_checks(grid):
    g = field_of(grid, lambda x, v: np.ones_like(x))
    with pytest.raises(ValueError):
        evolve_kfp(g, 1.0, 0.5)
    with pytest.raises(ValueError):
        evolve_kfp(g, 100.0, 0.01)
    with pytest.raises(ValueError):
        evolve_kfp(g, 1.0, 0.01, sample_every=0)
