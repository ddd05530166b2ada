"""Shared solver runs; each is computed once per session."""

from __future__ import annotations

import math
from collections import OrderedDict

import pytest

from hypoflow.entropy_core import PhiFamily, ScalarField, build_grid
from hypoflow.fp_dynamics import evolve_fp, exact_fp_oracle
from hypoflow.inequality_suite import TestFieldGenerator
from hypoflow.kfp_dynamics import evolve_kfp, exact_kfp_oracle, v_independent_datum

_ACCEPTANCE_KEY = pytest.StashKey[OrderedDict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = OrderedDict()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """``log(criterion, part, passed, detail)`` collects one entry per sub-check."""
    store = request.config.stash[_ACCEPTANCE_KEY]

    def log(criterion: int, part: str, passed: bool, detail: str) -> None:
        store.setdefault(criterion, []).append((part, bool(passed), detail))
        print(f"criterion {criterion} [{part}] {'PASS' if passed else 'FAIL'}: {detail}")

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE_KEY, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(store):
        parts = store[crit]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name} {'ok' if p else 'FAILED'} ({d})" for name, p, d in parts)
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'} | {detail}")


# ---------------------------------------------------------------------------
# grids and runs
# ---------------------------------------------------------------------------

FP_P = (1.0, 1.25, 1.5, 1.75, 2.0)
KINETIC_P = (1.25, 1.5, 2.0)


@pytest.fixture(scope="session")
def fp_grid():
    return build_grid(1, 8.0, 513)


@pytest.fixture(scope="session")
def phase_grid():
    return build_grid(2, 8.0, 129)


@pytest.fixture(scope="session")
def fp_oracle_trace(fp_grid):
    return evolve_fp(exact_fp_oracle(1.0, 0.0, fp_grid), 5.0, 1e-3, FP_P, sample_every=10, fit_window=(2.0, 5.0))


@pytest.fixture(scope="session")
def fp_hermite_trace(fp_grid):
    w0 = ScalarField.from_function(fp_grid, lambda x: 1.0 + 0.5 * (x * x - 1.0) / math.sqrt(2.0))
    return evolve_fp(w0, 5.0, 1e-3, FP_P, sample_every=10, fit_window=(2.0, 5.0))


@pytest.fixture(scope="session")
def fp_mixture_trace(fp_grid):
    w0 = TestFieldGenerator(3, "positive_mixture").field(fp_grid, normalize=True)
    return evolve_fp(w0, 5.0, 1e-3, FP_P, sample_every=10)


@pytest.fixture(scope="session")
def kinetic_long(phase_grid):
    """Decentred oracle datum, ``T = 15``, controller on."""
    fams = [PhiFamily(p) for p in KINETIC_P]
    return evolve_kfp(exact_kfp_oracle(1.0, 0.0, 0.0, phase_grid), 15.0, 2e-3, fams, controller_on=True, sample_every=5)


@pytest.fixture(scope="session")
def kinetic_v_independent(phase_grid):
    fams = [PhiFamily(p) for p in (1.5, 2.0)]
    return evolve_kfp(v_independent_datum(phase_grid, 1.0), 2.0, 2e-3, fams, sample_every=5)


@pytest.fixture(scope="session")
def kinetic_convergence(phase_grid):
    """``dt -> (trace, L2(dmu) error at t = 1)`` against the exact solution."""
    exact = exact_kfp_oracle(1.0, 0.0, 1.0, phase_grid).values
    out = {}
    for dt, every in ((0.1, 1), (0.05, 1), (0.025, 1), (2e-3, 5)):
        tr = evolve_kfp(exact_kfp_oracle(1.0, 0.0, 0.0, phase_grid), 1.0, dt, PhiFamily(2.0), sample_every=every)
        err = math.sqrt(phase_grid.integrate((tr.final_field.values - exact) ** 2))
        out[dt] = (tr, err)
    return out


@pytest.fixture(scope="session")
def all_kinetic_traces(kinetic_long, kinetic_v_independent, kinetic_convergence):
    traces = {"long": kinetic_long, "v_independent": kinetic_v_independent}
    for dt, (tr, _) in kinetic_convergence.items():
        traces[f"dt={dt:g}"] = tr
    return traces
