import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypoflow.entropy_core import PhiFamily, ScalarField, build_grid, entropy, fisher_information
from hypoflow.inequality_suite import (
    FAMILIES,
    GAUSSIAN_EEP_CONSTANT,
    PerturbedMeasure,
    TestFieldGenerator,
    check_convexity,
    check_csiszar_kullback,
    check_entropy_subadditivity_implies_gap,
    check_holley_stroock,
    check_interpolation_family,
    check_jensen_lemma,
    check_tensorization,
    check_two_norm_interpolation,
    measured_eep_constant,
    run_suite,
    slice_entropy,
)
from hypoflow.inequality_suite import _Grids

P_VALUES = [1.0, 1.25, 1.5, 1.75, 2.0]


@pytest.fixture(scope="module")
def g1():
    return build_grid(1, 8.0, 257)


@pytest.fixture(scope="module")
def g2():
    return build_grid(2, 8.0, 65)


@pytest.fixture(scope="module")
def small_grids(g1, g2):
    return _Grids(g1, g2)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), fam=st.sampled_from(FAMILIES))
def test_generator_bounds(seed, fam):
    for grid in (build_grid(1, 8.0, 129), build_grid(2, 8.0, 33)):
        w = TestFieldGenerator(seed, fam).field(grid)
        assert w.values.min() >= 0.1 - 1e-12
        assert w.values.max() <= 10.0 + 1e-12


def test_generator_deterministic(g1):
    a = TestFieldGenerator(17).field(g1).values
    b = TestFieldGenerator(17).field(g1).values
    assert np.array_equal(a, b)
    assert TestFieldGenerator(17).resolved_family == FAMILIES[17 % 4]


def test_generator_normalize(g1):
    w = TestFieldGenerator(5, "positive_mixture").field(g1, normalize=True)
    assert w.mass == pytest.approx(1.0, abs=1e-14)


def test_generator_rejects_bad_arguments():
    with pytest.raises(ValueError):
        TestFieldGenerator(0, "nope")
    with pytest.raises(ValueError):
        TestFieldGenerator(0, lo=1.5)


# ---------------------------------------------------------------------------
# individual checks on examples with known answers
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("p", P_VALUES)
def test_tensorization_equality_for_one_variable(g2, p):
    w = ScalarField(g2, 1.0 + 0.5 * np.tanh(g2.mesh[0]))
    assert check_tensorization(w, PhiFamily(p)) == pytest.approx(0.0, abs=1e-13)
    assert check_jensen_lemma(w, PhiFamily(p)) == pytest.approx(0.0, abs=1e-13)


def test_slice_entropy_of_product(g2):
    # w = f(x1): every x1-slice has the same entropy, every x2-slice none
    fam = PhiFamily(1.5)
    f = 1.0 + 0.1 * g2.axis_nodes
    w = ScalarField(g2, np.broadcast_to(f[:, None], g2.shape).copy())
    e1 = slice_entropy(w, fam, 0)
    assert np.allclose(e1, entropy(ScalarField(build_grid(1, 8.0, 65), f), fam), atol=1e-14)
    assert np.max(np.abs(slice_entropy(w, fam, 1))) <= 1e-14


@pytest.mark.parametrize("p", P_VALUES)
def test_random_static_checks(g1, g2, p):
    fam = PhiFamily(p)
    for seed in range(12):
        gen = TestFieldGenerator(seed)
        assert check_tensorization(gen.field(g2), fam) >= -1e-10
        assert check_jensen_lemma(gen.field(g2), fam) >= -1e-10
        assert check_csiszar_kullback(gen.field(g1, normalize=True), fam) >= -1e-10
        w1 = TestFieldGenerator(seed + 1).field(g1)
        assert check_convexity(gen.field(g1), w1, fam, 0.3) >= -1e-12


def test_ck_is_equality_at_p2(g1):
    # E_2 = ||w - 1||_2**2 for unit mass, and the bound is the same quantity
    for seed in range(8):
        w = TestFieldGenerator(seed).field(g1, normalize=True)
        assert check_csiszar_kullback(w, PhiFamily(2.0)) == pytest.approx(0.0, abs=1e-12)


def test_convexity_endpoints(g1):
    w0, w1 = TestFieldGenerator(1).field(g1), TestFieldGenerator(2).field(g1)
    for t in (0.0, 1.0):
        assert check_convexity(w0, w1, PhiFamily(1.5), t) == pytest.approx(0.0, abs=1e-14)


def test_checks_need_2d(g1):
    w = TestFieldGenerator(0).field(g1)
    for fn in (check_tensorization, check_jensen_lemma):
        with pytest.raises(ValueError):
            fn(w, PhiFamily(1.5))
    with pytest.raises(ValueError):
        check_entropy_subadditivity_implies_gap(w, PhiFamily(1.5))


@pytest.mark.parametrize("p", P_VALUES)
def test_sharp_witness_ratio(g2, p):
    # I / E -> 2 along 1 + eps x1 as eps -> 0, for every p
    w = ScalarField(g2, 1.0 + 1e-3 * g2.mesh[0])
    rep = check_entropy_subadditivity_implies_gap(w, PhiFamily(p))
    assert rep["ratio"] == pytest.approx(2.0, abs=1e-4)
    assert rep["margin"] >= -1e-12


def test_gap_at_p2_exact(g2):
    w = ScalarField(g2, 1.0 + 0.1 * g2.mesh[0])
    rep = check_entropy_subadditivity_implies_gap(w, PhiFamily(2.0))
    assert rep["entropy"] == pytest.approx(0.01, abs=1e-12)
    assert rep["fisher"] == pytest.approx(0.02, abs=1e-12)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_measured_constant_close_to_gaussian(g1, p):
    lam = measured_eep_constant(PhiFamily(p), g1, range(16))
    assert lam <= GAUSSIAN_EEP_CONSTANT + 1e-6
    assert lam >= GAUSSIAN_EEP_CONSTANT - 1e-4


# ---------------------------------------------------------------------------
# perturbed measure
# ---------------------------------------------------------------------------


def test_perturbed_measure_validation(g1):
    pm = PerturbedMeasure.from_potential(g1, lambda x: 0.3 * np.sin(x))
    assert pm.a == pytest.approx(-0.3, abs=1e-3)
    assert pm.b == pytest.approx(0.3, abs=1e-3)
    with pytest.raises(ValueError):
        PerturbedMeasure(g1, pm.weights, 0.5, 0.1, pm.normalization)
    with pytest.raises(ValueError):
        PerturbedMeasure(g1, 2.0 * pm.weights, pm.a, pm.b, pm.normalization)


@pytest.mark.parametrize("p", P_VALUES)
def test_holley_stroock_reduces_without_perturbation(g1, p):
    fam = PhiFamily(p)
    pm = PerturbedMeasure.from_potential(g1, lambda x: np.zeros_like(x))
    w = TestFieldGenerator(3).field(g1)
    rep = check_holley_stroock(w, fam, pm)
    # normalized grid weights, so dmu = dgamma and the Bregman integral is E
    assert rep["entropy"] == pytest.approx(entropy(w, fam), rel=1e-10, abs=1e-14)
    assert rep["fisher"] == pytest.approx(fisher_information(w, fam), rel=1e-12)
    assert rep["margin"] >= -1e-10


@pytest.mark.parametrize("p", P_VALUES)
def test_holley_stroock_random(g1, p):
    pm = PerturbedMeasure.from_potential(g1, lambda x: 0.3 * np.sin(x))
    for seed in range(10):
        rep = check_holley_stroock(TestFieldGenerator(seed).field(g1), PhiFamily(p), pm)
        assert rep["margin"] >= -1e-10
        assert rep["margin_half_constant"] >= rep["margin"]


def test_holley_stroock_grid_mismatch(g1):
    pm = PerturbedMeasure.from_potential(build_grid(1, 8.0, 129), lambda x: 0.0 * x)
    with pytest.raises(ValueError):
        check_holley_stroock(TestFieldGenerator(0).field(g1), PhiFamily(1.5), pm)


# ---------------------------------------------------------------------------
# interpolation family
# ---------------------------------------------------------------------------


def test_interpolation_constant_is_degenerate(g1):
    rep = check_interpolation_family(ScalarField.from_function(g1, lambda x: np.ones_like(x)), 1.5)
    assert rep.degenerate and rep.ratio == 0.0


def test_interpolation_linear_field(g1):
    f = ScalarField.from_function(g1, lambda x: 1.0 + 0.05 * x)
    rep = check_interpolation_family(f, 1.5)
    assert 0.95 < rep.ratio <= 1.0
    # q = 1: the variance of 1 + eps x is eps**2, the gradient term too
    assert check_interpolation_family(f, 1.0).ratio == pytest.approx(1.0, abs=1e-12)
    assert check_interpolation_family(f, 2.0).ratio < 1.0


def test_interpolation_q_range(g1):
    f = TestFieldGenerator(0).field(g1)
    for q in (0.5, 2.5):
        with pytest.raises(ValueError):
            check_interpolation_family(f, q)


def test_interpolation_random(g1):
    for seed in range(20):
        f = TestFieldGenerator(seed).field(g1)
        ratios = [check_interpolation_family(f, q).ratio for q in (1.0, 1.25, 1.5, 1.75, 2.0)]
        assert max(ratios) <= 1.0 + 1e-8
        # the ratios usually grow with q; reported, not asserted
        print(seed, "monotone in q" if np.all(np.diff(ratios) >= -1e-12) else "not monotone", ratios)


def test_two_norm_factor(g1):
    f = ScalarField.from_function(g1, lambda x: 1.0 + 1e-3 * x)
    rep = check_two_norm_interpolation(f, 1.5)
    # the c = 2 form overshoots by a factor 2 at the equality witness
    assert rep["ratio_c2"] == pytest.approx(2.0, abs=1e-3)
    assert rep["ratio_c1"] == pytest.approx(1.0, abs=1e-3)
    for seed in range(20):
        r = check_two_norm_interpolation(TestFieldGenerator(seed).field(g1), 1.5)
        assert r["ratio_c1"] <= 1.0 + 1e-8
    with pytest.raises(ValueError):
        check_two_norm_interpolation(f, 2.0)


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def test_run_suite_smoke(small_grids):
    reports = run_suite(["ck", "convexity"], seeds=4, p_list=(1.0, 2.0), grids=small_grids)
    assert [(r.check, r.p_or_q) for r in reports] == [
        ("ck", 1.0),
        ("ck", 2.0),
        ("convexity", 1.0),
        ("convexity", 2.0),
    ]
    assert all(r.violations == 0 and r.seeds == 4 for r in reports)


def test_run_suite_flip_reports_violations(small_grids):
    reports = run_suite(["tensorization"], seeds=4, p_list=(1.5,), flip=True, grids=small_grids)
    assert reports[0].violations > 0


def test_run_suite_threads_deterministic(small_grids):
    a = run_suite(["jensen", "interpolation"], seeds=6, p_list=(1.25, 2.0), workers=1, grids=small_grids)
    b = run_suite(["jensen", "interpolation"], seeds=6, p_list=(1.25, 2.0), workers=3, grids=small_grids)
    assert [r.as_dict() for r in a] == [r.as_dict() for r in b]


def test_run_suite_rejects_unknown(small_grids):
    with pytest.raises(ValueError):
        run_suite(["bogus"], seeds=1, grids=small_grids)


def test_thread_env(monkeypatch, small_grids):
    monkeypatch.setenv("HYPOFLOW_THREADS", "many")
    with pytest.raises(ValueError):
        run_suite(["ck"], seeds=1, p_list=(2.0,), grids=small_grids)
    monkeypatch.setenv("HYPOFLOW_THREADS", "2")
    assert run_suite(["ck"], seeds=2, p_list=(2.0,), grids=small_grids)[0].violations == 0


def test_gap_extra_carries_lambda(small_grids):
    rep = run_suite(["gap"], seeds=3, p_list=(1.5,), grids=small_grids)[0]
    assert rep.extra["lambda_used"] == min(rep.extra["lambda_measured"], 2.0)
    assert math.isfinite(rep.min_margin)
