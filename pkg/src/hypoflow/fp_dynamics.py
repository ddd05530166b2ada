"""
Ornstein-Uhlenbeck flow of ``w = u / u_star`` in one dimension.

Time stepping uses the exact Mehler transition,

    w(t + dt, x) = E[ w(t, x e^{-dt} + sqrt(1 - e^{-2 dt}) xi) ],   xi ~ N(0, 1),

evaluated with Gauss-Hermite nodes and spline interpolation, so the only
discretisation error is spatial.  The flow is linear, so every phi_p
entropy is a diagnostic of one evolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.interpolate import make_interp_spline

from .entropy_core import (
    PhiFamily,
    QuadratureGrid,
    ScalarField,
    csiszar_kullback_bound,
    entropy,
    fisher_information,
)

__all__ = [
    "MassDriftError",
    "OUState",
    "StepOperator",
    "mehler_operator",
    "ou_step",
    "exact_fp_oracle",
    "DecayTrace",
    "evolve_fp",
    "tol_budget",
    "ImprovedDecayModel",
    "EEPReport",
    "check_improved_eep",
    "integrate_improved_ode",
    "fit_decay_rate",
]

# calibrated on the shifted-Gaussian oracle, see tests/test_fp_dynamics.py
TOL_BUDGET_C = 50.0


class MassDriftError(RuntimeError):
    """Raised when a run loses more mass than allowed."""


# ---------------------------------------------------------------------------
# Mehler step operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StepOperator:
    """
    Dense matrix of one exact OU step on a node vector.

    Attributes
    ----------
    matrix : ndarray, shape (n, n)
        ``w_new = matrix @ w_old``.
    clamp_defect : float
        Gaussian-weighted fraction of quadrature feet that fell outside
        ``[-L, L]`` and were clamped to the boundary.
    """

    matrix: np.ndarray
    clamp_defect: float


@lru_cache(maxsize=32)
def _mehler_cached(L: float, n: int, dt: float, n_gh: int, order: int, conjugate: bool) -> StepOperator:
    x = np.linspace(-L, L, n)
    x = 0.5 * (x - x[::-1])
    xi, om = hermegauss(n_gh)
    om = om / om.sum()
    s = math.sqrt(-math.expm1(-2.0 * dt))
    feet_raw = x[:, None] * math.exp(-dt) + s * xi[None, :]
    outside = np.abs(feet_raw) > L
    feet = np.clip(feet_raw, -L, L)
    basis = make_interp_spline(x, np.eye(n), k=order)(feet.ravel()).reshape(n, n_gh, n)
    if conjugate:
        # interpolate u = w exp(-x^2/4), which decays at the box edge
        basis *= np.exp(0.25 * feet**2)[:, :, None] * np.exp(-0.25 * x**2)[None, None, :]
    mat = np.einsum("ikj,k->ij", basis, om)
    gauss = np.exp(-0.5 * x**2)
    gauss /= gauss.sum()
    defect = float(gauss @ (outside.astype(float) @ om))
    mat.setflags(write=False)
    return StepOperator(mat, defect)


def mehler_operator(
    grid: QuadratureGrid,
    dt: float,
    n_gh: int = 32,
    interp_order: int = 3,
    conjugate: bool = False,
) -> StepOperator:
    """
    Exact OU step of length ``dt`` along one axis of ``grid``.

    Parameters
    ----------
    grid : QuadratureGrid
    dt : float
        Positive step.
    n_gh : int
        Number of Gauss-Hermite nodes.
    interp_order : int
        Spline degree (3 is cubic).
    conjugate : bool
        Interpolate ``w exp(-x**2/4)`` instead of ``w``.  Polynomials in
        ``w`` are then no longer reproduced exactly, but fields with
        exponential growth at the box edge are handled far better.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    return _mehler_cached(grid.L, grid.n, float(dt), int(n_gh), int(interp_order), bool(conjugate))


def _conserve(values: np.ndarray, target_mass: float, grid: QuadratureGrid) -> tuple[np.ndarray, float, float]:
    """Shift by a constant to restore ``target_mass``, then clamp negatives."""
    wsum = grid.weights.sum()
    shift = (target_mass - grid.integrate(values)) / wsum
    values = values + shift
    neg = values < 0
    clamped = float(-(grid.weights[neg] * values[neg]).sum()) if neg.any() else 0.0
    if neg.any():
        values = np.where(neg, 0.0, values)
    return values, shift, clamped


@dataclass(frozen=True, eq=False)
class OUState:
    """
    A 1-D field with its time and mass bookkeeping.

    Attributes
    ----------
    field : ScalarField
    time : float
    mass_shift_total : float
        Sum of ``|shift|`` of the constant mass corrections applied so far.
    clamped_mass : float
        Mass added by clamping interpolation undershoot to zero.
    clamp_defect : float
        Accumulated Gaussian fraction of clamped quadrature feet.
    """

    field: ScalarField
    time: float = 0.0
    mass_shift_total: float = 0.0
    clamped_mass: float = 0.0
    clamp_defect: float = 0.0


def ou_step(
    state: OUState,
    dt: float,
    n_gh: int = 32,
    interp_order: int = 3,
    conserve_mass: bool = True,
    conjugate: bool = False,
) -> OUState:
    """
    Advance ``state`` by one exact OU step.

    Parameters
    ----------
    state : OUState
    dt : float
    n_gh, interp_order, conjugate
        See :func:`mehler_operator`.
    conserve_mass : bool
        Remove the interpolation mass defect by a constant shift.
    """
    grid = state.field.grid
    if grid.dimension != 1:
        raise ValueError("ou_step acts on 1-D fields")
    op = mehler_operator(grid, dt, n_gh, interp_order, conjugate)
    w = op.matrix @ state.field.values
    shift = clamped = 0.0
    if conserve_mass:
        w, shift, clamped = _conserve(w, state.field.mass, grid)
    else:
        neg = w < 0
        if neg.any():
            clamped = float(-(grid.weights[neg] * w[neg]).sum())
            w = np.where(neg, 0.0, w)
    return OUState(
        state.field.with_values(w),
        state.time + dt,
        state.mass_shift_total + abs(shift),
        state.clamped_mass + clamped,
        state.clamp_defect + op.clamp_defect,
    )


def exact_fp_oracle(x0: float, t: float, grid: QuadratureGrid) -> ScalarField:
    """
    Shifted-Gaussian solution ``w(t, x) = exp(x a - a**2 / 2)``, ``a = x0 e^{-t}``.

    Raises
    ------
    ValueError
        When ``|x0| > L / 2``; the ratio then carries visible mass outside the box.
    """
    if abs(x0) > 0.5 * grid.L:
        raise ValueError(f"|x0|={abs(x0)} too large for L={grid.L}")
    a = x0 * math.exp(-t)
    return ScalarField.from_function(grid, lambda *xs: np.exp(xs[0] * a - 0.5 * a * a))


# ---------------------------------------------------------------------------
# decay traces
# ---------------------------------------------------------------------------


def tol_budget(dt: float, h: float, C: float = TOL_BUDGET_C) -> float:
    """Error budget ``C (dt**2 + h**4)`` for the discrete ``dE/dt = -I`` identity."""
    return C * (dt * dt + h**4)


@dataclass(eq=False)
class DecayTrace:
    """
    Sampled entropies and Fisher informations of one OU run.

    Attributes
    ----------
    times : ndarray
    entropy, fisher : dict[float, ndarray]
        One channel per ``p``.
    mass : ndarray
    fitted_rate : dict[float, float]
        Rates of ``entropy`` over ``fit_window`` (empty without a window).
    fit_window : tuple or None
    ck_bound : dict[float, ndarray]
        Csiszar-Kullback lower bound on ``entropy`` per sample (NaN off unit mass).
    identity_residual : dict[float, float]
        ``max |dE/dt + I|`` at interior samples, central differences.
    identity_budget : float
    monotone : bool
        Every entropy channel is nonincreasing up to ``1e-10`` per sample.
    """

    times: np.ndarray
    entropy: dict[float, np.ndarray]
    fisher: dict[float, np.ndarray]
    mass: np.ndarray
    ck_bound: dict[float, np.ndarray] = dc_field(default_factory=dict)
    fitted_rate: dict[float, float] = dc_field(default_factory=dict)
    fit_window: Optional[tuple[float, float]] = None
    identity_residual: dict[float, float] = dc_field(default_factory=dict)
    identity_budget: float = 0.0
    monotone: bool = True
    dt: float = 0.0
    final_state: Optional[OUState] = None

    @property
    def p_list(self) -> list[float]:
        return sorted(self.entropy)

    @property
    def identity_ok(self) -> bool:
        return all(r <= self.identity_budget for r in self.identity_residual.values())

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))


def evolve_fp(
    w0: ScalarField,
    T: float,
    dt: float = 1e-3,
    p_list: Sequence[float] = (2.0,),
    sample_every: int = 1,
    fit_window: Optional[tuple[float, float]] = None,
    n_gh: int = 32,
    interp_order: int = 3,
    conserve_mass: bool = True,
    mass_tol: float = 1e-6,
) -> DecayTrace:
    """
    Evolve ``w0`` to time ``T`` and record ``E`` and ``I`` for every ``p``.

    Parameters
    ----------
    w0 : ScalarField
        Nonnegative 1-D initial datum.
    T : float
        Final time, at most 50.
    dt : float
        Step, at most 0.01.
    p_list : sequence of float
    sample_every : int
        Record every this many steps.
    fit_window : (float, float), optional
        Window for :func:`fit_decay_rate` on every channel.
    mass_tol : float
        Abort threshold on the mass drift.

    Raises
    ------
    MassDriftError
        If the mass drifts by more than ``mass_tol``.
    """
    if not 0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01]")
    if not 0 < T <= 50:
        raise ValueError("T must lie in (0, 50]")
    fams = [PhiFamily(p) for p in p_list]
    n_steps = int(round(T / dt))
    state = OUState(w0)
    m0 = w0.mass
    times, masses = [], []
    ent: dict[float, list[float]] = {f.p: [] for f in fams}
    fis: dict[float, list[float]] = {f.p: [] for f in fams}
    ck: dict[float, list[float]] = {f.p: [] for f in fams}

    def record(st: OUState) -> None:
        times.append(st.time)
        masses.append(st.field.mass)
        for f in fams:
            ent[f.p].append(entropy(st.field, f))
            fis[f.p].append(fisher_information(st.field, f))
            try:
                ck[f.p].append(csiszar_kullback_bound(st.field, f)[0])
            except ValueError:
                ck[f.p].append(float("nan"))

    record(state)
    for k in range(1, n_steps + 1):
        state = ou_step(state, dt, n_gh, interp_order, conserve_mass)
        if k % sample_every == 0 or k == n_steps:
            record(state)
            drift = abs(masses[-1] - m0)
            if drift > mass_tol:
                raise MassDriftError(
                    f"mass drift {drift:.3e} at t={state.time:.4f} exceeds {mass_tol:.1e} "
                    f"(constant shifts {state.mass_shift_total:.3e}, clamped {state.clamped_mass:.3e})"
                )
    t = np.asarray(times)
    trace = DecayTrace(
        times=t,
        entropy={p: np.asarray(v) for p, v in ent.items()},
        fisher={p: np.asarray(v) for p, v in fis.items()},
        mass=np.asarray(masses),
        ck_bound={p: np.asarray(v) for p, v in ck.items()},
        fit_window=fit_window,
        dt=dt,
        final_state=state,
    )
    sample_dt = dt * sample_every
    trace.identity_budget = tol_budget(sample_dt, w0.grid.h)
    for p in trace.p_list:
        e, i = trace.entropy[p], trace.fisher[p]
        if t.size >= 3:
            de = (e[2:] - e[:-2]) / (t[2:] - t[:-2])
            trace.identity_residual[p] = float(np.max(np.abs(de + i[1:-1])))
        if np.any(np.diff(e) > 1e-10):
            trace.monotone = False
        if fit_window is not None:
            trace.fitted_rate[p] = fit_decay_rate(t, e, fit_window)
    return trace


# ---------------------------------------------------------------------------
# improved entropy / entropy-production inequality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImprovedDecayModel:
    """
    The function ``F(s) = (1 + s - (1 + s)**k) / (1 - k)`` with ``k = kappa_p``.

    ``F(s) = s`` when ``kappa_p = 0``.  It solves
    ``F' = 1 + kappa_p F / (1 + s)`` with ``F(0) = 0``.
    """

    fam: PhiFamily

    def F(self, s):
        s = np.asarray(s, dtype=float)
        k = self.fam.kappa_p
        if k == 0.0:
            out = s.copy()
        else:
            out = (1.0 + s - (1.0 + s) ** k) / (1.0 - k)
        return float(out) if out.ndim == 0 else out

    def dF(self, s):
        s = np.asarray(s, dtype=float)
        k = self.fam.kappa_p
        out = np.ones_like(s) if k == 0.0 else (1.0 - k * (1.0 + s) ** (k - 1.0)) / (1.0 - k)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EEPReport:
    """
    Margins of the improved inequalities along a trace.

    ``gap_margin = min_t I - 2 F(E)`` and
    ``ode_margin = min_t -(dI/dt + 2 I) - kappa_p I**2 / (1 + (p - 1) E)``.
    """

    p: float
    gap_margin: float
    gap_argmin_t: float
    ode_margin: float
    ode_argmin_t: float

    def ok(self, tol: float = 1e-6) -> bool:
        return self.gap_margin >= -tol and self.ode_margin >= -tol


def check_improved_eep(trace: DecayTrace, fam: PhiFamily) -> EEPReport:
    """
    Evaluate the improved inequalities on the ``fam.p`` channel of ``trace``.

    Raises
    ------
    ValueError
        If ``p`` is not in ``(1, 2)``, or the trace has fewer than three samples.
    KeyError
        If the trace has no ``fam.p`` channel.
    """
    p = fam.p
    if not 1.0 < p < 2.0 or fam.is_log:
        raise ValueError("the improved inequalities need p in (1, 2)")
    t = trace.times
    if t.size < 3:
        raise ValueError("trace too short")
    e, i = trace.entropy[p], trace.fisher[p]
    model = ImprovedDecayModel(fam)
    gap = i - 2.0 * model.F(np.maximum(e, 0.0))
    di = (i[2:] - i[:-2]) / (t[2:] - t[:-2])
    ii, ee = i[1:-1], e[1:-1]
    ode = -(di + 2.0 * ii) - fam.kappa_p * ii**2 / (1.0 + (p - 1.0) * ee)
    kg, ko = int(np.argmin(gap)), int(np.argmin(ode))
    return EEPReport(p, float(gap[kg]), float(t[kg]), float(ode[ko]), float(t[1:-1][ko]))


def integrate_improved_ode(e0: float, fam: PhiFamily, T: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Classical RK4 solution of ``e' = -2 F(e)``, ``e(0) = e0``.

    Returns
    -------
    times, values : ndarray
    """
    if e0 < 0:
        raise ValueError("e0 must be nonnegative")
    F = ImprovedDecayModel(fam).F
    n = int(round(T / dt))
    times = np.linspace(0.0, n * dt, n + 1)
    out = np.empty(n + 1)
    e = float(e0)
    out[0] = e

    def rhs(y: float) -> float:
        return -2.0 * F(max(y, 0.0))

    for k in range(n):
        k1 = rhs(e)
        k2 = rhs(e + 0.5 * dt * k1)
        k3 = rhs(e + 0.5 * dt * k2)
        k4 = rhs(e + dt * k3)
        e = e + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = e
    return times, out


def fit_decay_rate(times: np.ndarray, values: np.ndarray, window: tuple[float, float]) -> float:
    """
    Least-squares slope of ``-log(values)`` against ``times`` on ``window``.

    Raises
    ------
    ValueError
        Fewer than 10 samples in the window, or nonpositive values.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
    if sel.sum() < 10:
        raise ValueError(f"window {window} holds {int(sel.sum())} samples, need at least 10")
    v = values[sel]
    if np.any(v <= 0):
        raise ValueError("values must be positive on the fit window")
    slope = np.polyfit(times[sel], np.log(v), 1)[0]
    return float(-slope)
