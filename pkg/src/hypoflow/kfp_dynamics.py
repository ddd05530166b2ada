"""
Kinetic Fokker-Planck flow in phase space ``(x, v)`` with harmonic confinement.

The ratio ``g = f / f_star`` solves ``dg/dt + v dg/dx - x dg/dv = d2g/dv2 - v dg/dv``.
The transport part is a rigid rotation of the plane and the collision part
is an Ornstein-Uhlenbeck flow in ``v``, so both sub-flows are applied
exactly up to interpolation and composed by Strang splitting.

Diagnostics are computed on ``h = g**(p/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.ndimage import map_coordinates

from .entropy_core import (
    DEFAULT_FLOOR,
    PhiFamily,
    QuadratureGrid,
    ScalarField,
    derivative,
    entropy,
)
from .fp_dynamics import MassDriftError, fit_decay_rate, mehler_operator
from .hypo_algebra import (
    HypoParams,
    NU_CHOICE_MAX,
    build_matrices,
    eigenvalues_m2_closed_form,
    eigenvalues_numeric,
    zeta,
)

__all__ = [
    "PositivityError",
    "PhaseField",
    "transport_step",
    "ou_v_step",
    "strang_step",
    "decentred_center",
    "decentred_center_closed_form",
    "exact_kfp_oracle",
    "v_independent_datum",
    "compute_h",
    "KineticDiagnostics",
    "kinetic_diagnostics",
    "AdaptiveLambdaState",
    "adaptive_lambda_update",
    "KineticTrace",
    "evolve_kfp",
    "TauEstimate",
    "estimate_tau",
    "rho_statistics",
    "LemmaReport",
    "check_lemma_quadratic_form",
]

OMEGA = math.sqrt(3.0) / 2.0
ZERO_FRACTION = 1e-3


class PositivityError(RuntimeError):
    """Raised when a kinetic run produces a markedly negative ratio."""


# ---------------------------------------------------------------------------
# phase fields and the split steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseField(ScalarField):
    """
    Ratio ``g = f / f_star`` on a 2-D grid over ``(x, v)``, with its time.

    Axis 0 is ``x`` and axis 1 is ``v``.
    """

    time: float = 0.0

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.grid.dimension != 2:
            raise ValueError("a PhaseField lives on a 2-D grid")

    def with_values(self, values: np.ndarray, time: Optional[float] = None) -> "PhaseField":
        return PhaseField(self.grid, values, self.floor, self.time if time is None else time)


def _gauss_root(grid: QuadratureGrid) -> np.ndarray:
    x, v = grid.mesh
    return np.exp(-0.25 * (x * x + v * v))


def _level(values: np.ndarray, grid: QuadratureGrid) -> float:
    """Constant with the same mass as ``values``."""
    return grid.integrate(values) / float(grid.weights.sum())


def _restore_mass(values: np.ndarray, target: float, grid: QuadratureGrid) -> np.ndarray:
    shift = (target - grid.integrate(values)) / grid.weights.sum()
    return values + shift


def _rotate(values: np.ndarray, grid: QuadratureGrid, theta: float, order: int) -> tuple[np.ndarray, float]:
    """Pull ``values`` back along the rotation by ``theta``; returns the clamp defect."""
    x, v = grid.mesh
    L, h = grid.L, grid.h
    c, s = math.cos(theta), math.sin(theta)
    fx, fv = x * c - v * s, x * s + v * c
    outside = (np.abs(fx) > L) | (np.abs(fv) > L)
    fx, fv = np.clip(fx, -L, L), np.clip(fv, -L, L)
    # f_star is radial, so the rotation commutes with multiplying by sqrt(f_star);
    # the conjugated field decays at the box edge where g itself may grow
    # the deviation from the mean level is interpolated, so constants stay exact
    level = _level(values, grid)
    root = _gauss_root(grid)
    coords = [(fx + L) / h, (fv + L) / h]
    u = map_coordinates((values - level) * root, coords, order=order, mode="nearest")
    out = level + u / root
    if outside.any():
        # clamped feet sit in the far corners, where dividing by root would
        # amplify the clamping error; linear interpolation of g is used there
        out[outside] = map_coordinates(values, [c[outside] for c in coords], order=1, mode="nearest")
    defect = float(grid.weights[outside].sum())
    return out, defect


def _apply_ou(values: np.ndarray, grid: QuadratureGrid, op_t: np.ndarray) -> np.ndarray:
    level = _level(values, grid)
    return level + (values - level) @ op_t


def transport_step(field: PhaseField, dt: float, interp_order: int = 3, conserve_mass: bool = True) -> PhaseField:
    """
    Exact transport by the harmonic rotation over ``dt``, spline interpolation.

    ``g(t + dt, x, v) = g(t, x cos dt - v sin dt, x sin dt + v cos dt)``.
    """
    vals, _ = _rotate(field.values, field.grid, dt, interp_order)
    if conserve_mass:
        vals = _restore_mass(vals, field.mass, field.grid)
    return field.with_values(vals, field.time + dt)


def ou_v_step(
    field: PhaseField,
    dt: float,
    n_gh: int = 32,
    interp_order: int = 3,
    conserve_mass: bool = True,
) -> PhaseField:
    """Exact Mehler step in ``v`` on every ``x``-line."""
    op = mehler_operator(field.grid, dt, n_gh, interp_order, conjugate=True)
    vals = _apply_ou(field.values, field.grid, op.matrix.T)
    if conserve_mass:
        vals = _restore_mass(vals, field.mass, field.grid)
    return field.with_values(vals, field.time + dt)


def strang_step(field: PhaseField, dt: float, interp_order: int = 3, conserve_mass: bool = True) -> PhaseField:
    """Transport ``dt/2``, collision ``dt``, transport ``dt/2``."""
    if not 0 < dt <= 0.1:
        raise ValueError("dt must lie in (0, 0.1]")
    out = transport_step(field, 0.5 * dt, interp_order, conserve_mass)
    out = ou_v_step(out, dt, interp_order=interp_order, conserve_mass=conserve_mass)
    out = transport_step(out, 0.5 * dt, interp_order, conserve_mass)
    return out.with_values(out.values, field.time + dt)


# ---------------------------------------------------------------------------
# exact decentred solution
# ---------------------------------------------------------------------------


def _center_rhs(y: np.ndarray) -> np.ndarray:
    return np.array([y[1], -y[0] - y[1]])


def decentred_center(x0: float, v0: float, t: float, max_step: float = 1e-3) -> tuple[float, float]:
    """
    Centre ``(x_s, v_s)(t)`` of the translated Maxwellian, by RK4 on
    ``x' = v, v' = -x - v``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    y = np.array([x0, v0], dtype=float)
    if t == 0:
        return float(y[0]), float(y[1])
    n = max(1, int(math.ceil(t / max_step)))
    h = t / n
    for _ in range(n):
        k1 = _center_rhs(y)
        k2 = _center_rhs(y + 0.5 * h * k1)
        k3 = _center_rhs(y + 0.5 * h * k2)
        k4 = _center_rhs(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(y[0]), float(y[1])


def decentred_center_closed_form(x0: float, v0: float, t: float) -> tuple[float, float]:
    """
    Closed form of :func:`decentred_center`.

    The ``v`` component carries the coefficient ``2/sqrt(3)`` in front of
    ``sin(omega t)(x0 + v0/2)``, which is what the characteristic system
    requires.
    """
    e = math.exp(-0.5 * t)
    c, s = math.cos(OMEGA * t), math.sin(OMEGA * t)
    k = 2.0 / math.sqrt(3.0)
    xs = e * (x0 * c + k * s * (v0 + 0.5 * x0))
    vs = e * (v0 * c - k * s * (x0 + 0.5 * v0))
    return xs, vs


def exact_kfp_oracle(x0: float, v0: float, t: float, grid: QuadratureGrid) -> PhaseField:
    """
    Decentred solution ``g = f_star(x - x_s, v - v_s) / f_star(x, v)``.

    Raises
    ------
    ValueError
        When ``|x0|`` or ``|v0|`` exceeds ``L / 4``.
    """
    if max(abs(x0), abs(v0)) > 0.25 * grid.L:
        raise ValueError("initial centre too far out for this grid")
    xs, vs = decentred_center(x0, v0, t)
    x, v = grid.mesh
    vals = np.exp(x * xs + v * vs - 0.5 * (xs * xs + vs * vs))
    return PhaseField(grid, vals, DEFAULT_FLOOR, float(t))


def v_independent_datum(grid: QuadratureGrid, shift: float = 1.0) -> PhaseField:
    """Unit-mass datum ``g0 = exp(shift x - shift**2/2)``, constant in ``v``."""
    x, _ = grid.mesh
    return PhaseField(grid, np.exp(shift * x - 0.5 * shift * shift), DEFAULT_FLOOR, 0.0)


def compute_h(field: PhaseField, fam: PhiFamily) -> PhaseField:
    """``h = g**(p/2)`` with the positivity floor; ``h = g`` for ``p = 2``."""
    if np.any(field.values < 0):
        raise ValueError("g must be nonnegative")
    if fam.p == 2.0:
        return field
    return field.with_values(field.floored() ** (0.5 * fam.p))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KineticDiagnostics:
    """
    Gradient integrals of ``h`` at one time for one ``p``.

    ``J`` is evaluated from ``|grad_v h|**2 + |grad_x h|**2 + |grad_x h + grad_v h|**2``
    (halved), ``J_expanded`` from ``grad_v_sq + grad_x_sq + cross``.
    ``a, b, c`` are ``e^t`` times ``grad_v_sq, cross, grad_x_sq``.
    When second-order terms are requested, ``y_form`` is
    ``int Y.M2 Y`` at ``(1/2, 1)`` and ``dj_dt_identity = -2 e^t y_form``.
    """

    t: float
    p: float
    entropy: float
    grad_v_sq: float
    grad_x_sq: float
    cross: float
    J: float
    J_expanded: float
    a: float
    b: float
    c: float
    j: float
    lam: Optional[float] = None
    J_lambda: Optional[float] = None
    y_form: Optional[float] = None
    dj_dt_identity: Optional[float] = None
    floored_nodes: int = 0


def _first_derivatives(h: np.ndarray, grid: QuadratureGrid) -> tuple[np.ndarray, np.ndarray]:
    return derivative(h, grid, 0), derivative(h, grid, 1)


def _y_components(field: PhaseField, fam: PhiFamily) -> tuple[np.ndarray, ...]:
    """``H_vv, H_xv, M_vv, M_xv`` of ``h = g**(p/2)`` at every node."""
    grid = field.grid
    h = compute_h(field, fam).values
    root = field.floored() ** (0.25 * fam.p)
    h_vv = derivative(h, grid, 1, deriv=2)
    h_xv = derivative(derivative(h, grid, 1), grid, 0)
    r_x, r_v = derivative(root, grid, 0), derivative(root, grid, 1)
    return h_vv, h_xv, r_v * r_v, r_x * r_v


def _quad_form(m: np.ndarray, comps: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros_like(comps[0])
    for i, ci in enumerate(comps):
        for k, ck in enumerate(comps):
            if m[i, k] != 0.0:
                out = out + m[i, k] * ci * ck
    return out


def kinetic_diagnostics(
    field: PhaseField,
    fam: PhiFamily,
    lam: Optional[float] = None,
    second_order: bool = False,
) -> KineticDiagnostics:
    """
    Entropy, twisted Fisher functionals and the ``a, b, c, j`` system.

    Parameters
    ----------
    field : PhaseField
    fam : PhiFamily
    lam : float, optional
        Also evaluate ``J_lam = grad_v_sq + grad_x_sq + 2 lam cross``.
    second_order : bool
        Also evaluate ``int Y.M2 Y`` and the ``dj/dt`` identity.
    """
    grid = field.grid
    h = compute_h(field, fam).values
    hx, hv = _first_derivatives(h, grid)
    gv = grid.integrate(hv * hv)
    gx = grid.integrate(hx * hx)
    cr = grid.integrate(hx * hv)
    s = hx + hv
    J = 0.5 * (gv + gx + grid.integrate(s * s))
    J_exp = gv + gx + cr
    et = math.exp(field.time)
    a, b, c = et * gv, et * cr, et * gx
    out = dict(
        t=field.time,
        p=fam.p,
        entropy=entropy(field, fam),
        grad_v_sq=gv,
        grad_x_sq=gx,
        cross=cr,
        J=J,
        J_expanded=J_exp,
        a=a,
        b=b,
        c=c,
        j=a + b + c,
        floored_nodes=int((field.values < field.floor).sum()),
    )
    if lam is not None:
        out["lam"] = float(lam)
        out["J_lambda"] = gv + gx + 2.0 * lam * cr
    if second_order:
        m2 = build_matrices(HypoParams(0.5, 1.0, fam.kappa)).m2
        yform = grid.integrate(_quad_form(m2, _y_components(field, fam)))
        out["y_form"] = yform
        out["dj_dt_identity"] = -2.0 * et * yform
    return KineticDiagnostics(**out)


# ---------------------------------------------------------------------------
# adaptive lambda controller
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdaptiveLambdaState:
    """
    State of the adaptive ``lambda(t)``, ``rho(t)`` controller.

    Attributes
    ----------
    lambda_t, rho_t, epsilon_t : float
    nu_choice : float
        Free scalar in ``(0, 1 + sqrt(3)/2)``.
    tau_partial : float
        ``2 int_0^t rho - t``, trapezoid rule.
    time : float
    branch : str
        ``"bulk"`` (``a >= a_star``), ``"approach"`` (``a`` small and
        falling), ``"zero"`` (``a < 1e-3 j``) or ``"depart"`` (``a`` small
        and rising).
    c0 : float
        ``1 + (p - 1) E[g0]``.
    a_star_fraction : float
    a_history : tuple of float
        Past ``a`` values; ``a_star`` is the fraction times their median.
    zero_events : tuple of float
        Times where a zero of ``a`` was declared.
    """

    lambda_t: float = 0.5
    rho_t: float = 0.5
    epsilon_t: float = 0.0
    nu_choice: float = 1.0
    tau_partial: float = 0.0
    time: float = 0.0
    branch: str = "zero"
    c0: float = 1.0
    a_star_fraction: float = 0.1
    a_history: tuple = ()
    zero_events: tuple = ()
    a_star: float = 0.0

    @classmethod
    def start(
        cls,
        diag0: KineticDiagnostics,
        fam: PhiFamily,
        nu_choice: float = 1.0,
        a_star_fraction: float = 0.1,
    ) -> "AdaptiveLambdaState":
        """Initial state from the diagnostics of the initial datum."""
        if not 0.0 < nu_choice < NU_CHOICE_MAX:
            raise ValueError(f"nu_choice must lie in (0, {NU_CHOICE_MAX:.6f})")
        c0 = 1.0 + (fam.p - 1.0) * diag0.entropy
        st = cls(nu_choice=nu_choice, c0=c0, a_star_fraction=a_star_fraction, time=diag0.t)
        return _controller_eval(st, diag0, fam, dt=0.0, first=True)


def _lambda1(lam: float, kappa: float) -> float:
    if lam == 0.5:
        return max(eigenvalues_m2_closed_form(kappa)["l1"], 0.0)
    m2 = build_matrices(HypoParams(lam, 1.0, kappa)).m2
    return max(float(eigenvalues_numeric(m2)[0]), 0.0)


def _controller_eval(
    state: AdaptiveLambdaState,
    diag: KineticDiagnostics,
    fam: PhiFamily,
    dt: float,
    first: bool = False,
) -> AdaptiveLambdaState:
    t = diag.t
    a, j = diag.a, diag.j
    if j <= 1e-300:
        # stationary datum: nothing to control
        return replace(state, lambda_t=0.5, rho_t=0.5, epsilon_t=0.0, time=t, branch="zero")
    hist = state.a_history + (a,)
    a_star = state.a_star_fraction * float(np.median(hist))
    zero = a < ZERO_FRACTION * j
    events = state.zero_events
    kappa = fam.kappa
    if not zero and a_star > 0 and a >= a_star:
        nu1 = _lambda1(0.5, kappa) * a_star / state.c0
        eps = nu1 * math.exp(-t)
        lam = 0.5 * (1.0 + eps)
        rho = 0.5 * (1.0 + nu1 / (nu1 + 3.0 * math.exp(t)))
        branch = "bulk"
    else:
        lam_prev = state.lambda_t
        eps = _lambda1(lam_prev, kappa) * diag.grad_v_sq / state.c0
        rising = (not first) and bool(state.a_history) and a > state.a_history[-1]
        if zero:
            if state.branch != "zero":
                events = events + (t,)
            lam, branch = 0.5, "zero"
        elif not rising:
            # the backward solution from the coming zero lies below 1/2: clamped
            lam, branch = 0.5, "approach"
        elif state.branch in ("depart", "zero"):
            lam, branch = lam_prev + state.nu_choice * eps * dt, "depart"
        else:
            # a turned upward without reaching the zero threshold: anchor here
            lam, branch = 0.5, "depart"
        lam = min(max(lam, 0.5), 1.0 - 1e-12)
        rho = zeta(eps, lam, state.nu_choice, kappa)
    tau = 0.0 if first else state.tau_partial + 0.5 * dt * ((2.0 * state.rho_t - 1.0) + (2.0 * rho - 1.0))
    return replace(
        state,
        lambda_t=lam,
        rho_t=rho,
        epsilon_t=eps,
        tau_partial=tau,
        time=t,
        branch=branch,
        a_history=hist,
        zero_events=events,
        a_star=a_star,
    )


def adaptive_lambda_update(
    state: AdaptiveLambdaState,
    diag: KineticDiagnostics,
    fam: PhiFamily,
    dt: float,
) -> AdaptiveLambdaState:
    """
    Advance the controller to the time of ``diag``.

    Far from zeros of ``a`` (``a >= a_star``) the explicit branch
    ``eps = nu1 e^{-t}``, ``lam = (1 + eps)/2``,
    ``rho = (1 + nu1 / (nu1 + 3 e^t)) / 2`` is used, with
    ``nu1 = lambda_1 a_star / c0``.  Near a zero, ``lam`` is re-anchored at
    ``1/2``; after the zero it follows ``dlam/dt = nu eps`` with
    ``eps = lambda_1 int |grad_v h|**2 / c0``, and ``rho = zeta(eps, lam, nu)``.

    Parameters
    ----------
    state : AdaptiveLambdaState
    diag : KineticDiagnostics
        Diagnostics at the new time.
    fam : PhiFamily
        ``p`` must lie in ``(1, 2)``.
    dt : float
        Time since the previous update.
    """
    if not 1.0 < fam.p < 2.0:
        raise ValueError("the controller needs p in (1, 2)")
    return _controller_eval(state, diag, fam, dt)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class KineticTrace:
    """
    Time series of a kinetic run.

    ``channels[p]`` holds the list of :class:`KineticDiagnostics`;
    ``controller[p]`` the arrays ``lambda_t, rho_t, epsilon_t,
    tau_partial, branch`` for every controlled ``p``.
    """

    times: np.ndarray
    channels: dict[float, list[KineticDiagnostics]]
    mass: np.ndarray
    controller: dict[float, dict[str, np.ndarray]] = dc_field(default_factory=dict)
    zero_events: dict[float, list[float]] = dc_field(default_factory=dict)
    dt: float = 0.0
    clamp_defect: float = 0.0
    clamped_mass: float = 0.0
    final_field: Optional[PhaseField] = None

    def series(self, p: float, name: str) -> np.ndarray:
        """Array of attribute ``name`` over the samples of channel ``p``."""
        return np.array([getattr(d, name) for d in self.channels[p]], dtype=float)

    @property
    def p_list(self) -> list[float]:
        return sorted(self.channels)

    def fitted_rate(self, p: float, window: tuple[float, float]) -> float:
        return fit_decay_rate(self.times, self.series(p, "entropy"), window)

    def dj_dt_fd(self, p: float) -> np.ndarray:
        """Central differences of ``j`` at interior samples."""
        j, t = self.series(p, "j"), self.times
        return (j[2:] - j[:-2]) / (t[2:] - t[:-2])

    def log_slope(self, p: float, name: str = "J") -> np.ndarray:
        """Central differences of ``log(name)`` at interior samples."""
        y, t = np.log(self.series(p, name)), self.times
        return (y[2:] - y[:-2]) / (t[2:] - t[:-2])

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))


def _fams(fam: Union[PhiFamily, Sequence[PhiFamily]]) -> list[PhiFamily]:
    if isinstance(fam, PhiFamily):
        return [fam]
    return list(fam)


def evolve_kfp(
    g0: PhaseField,
    T: float,
    dt: float = 2e-3,
    fam: Union[PhiFamily, Sequence[PhiFamily]] = PhiFamily(2.0),
    controller_on: bool = False,
    sample_every: int = 5,
    nu_choice: float = 1.0,
    a_star_fraction: float = 0.1,
    interp_order: int = 3,
    second_order: bool = True,
    conserve_mass: bool = True,
    mass_tol: float = 1e-6,
    negativity_tol: float = 1e-10,
) -> KineticTrace:
    """
    Strang-split evolution of ``g0`` with diagnostics every ``sample_every`` steps.

    Parameters
    ----------
    g0 : PhaseField
    T, dt : float
    fam : PhiFamily or sequence of PhiFamily
        One diagnostic channel per family; ``g`` does not depend on ``p``.
    controller_on : bool
        Run the adaptive controller on every channel with ``p`` in ``(1, 2)``.
    sample_every : int
    nu_choice, a_star_fraction : float
        Controller parameters.
    interp_order : int
        Spline degree of both sub-steps.
    second_order : bool
        Record ``int Y.M2 Y`` and the ``dj/dt`` identity at every sample.
    mass_tol : float
        Abort threshold on the mass drift.
    negativity_tol : float
        Largest Gaussian-weighted mass of negative undershoot tolerated in
        one sub-step; smaller undershoots are clamped and recorded.

    Raises
    ------
    MassDriftError, PositivityError
    """
    if not 0 < dt <= 0.1:
        raise ValueError("dt must lie in (0, 0.1]")
    if not 0 < T <= 50:
        raise ValueError("T must lie in (0, 50]")
    if sample_every < 1:
        raise ValueError("sample_every must be positive")
    fams = _fams(fam)
    grid = g0.grid
    n_steps = int(round(T / dt))
    ou = mehler_operator(grid, dt, 32, interp_order, conjugate=True).matrix.T
    m0 = g0.mass
    vals = g0.values.copy()
    t = g0.time
    channels: dict[float, list[KineticDiagnostics]] = {f.p: [] for f in fams}
    ctrl_fams = [f for f in fams if controller_on and 1.0 < f.p < 2.0]
    states: dict[float, AdaptiveLambdaState] = {}
    ctrl_rows: dict[float, dict[str, list]] = {
        f.p: {k: [] for k in ("lambda_t", "rho_t", "epsilon_t", "tau_partial", "branch", "a_star")} for f in ctrl_fams
    }
    times, masses = [], []
    clamp_defect = clamped = 0.0
    last_sample_t = t

    def sample(field: PhaseField) -> None:
        nonlocal last_sample_t
        times.append(field.time)
        masses.append(field.mass)
        for f in fams:
            lam = states[f.p].lambda_t if f.p in states else None
            d = kinetic_diagnostics(field, f, lam=lam, second_order=second_order)
            if f in ctrl_fams:
                if f.p not in states:
                    states[f.p] = AdaptiveLambdaState.start(d, f, nu_choice, a_star_fraction)
                else:
                    states[f.p] = adaptive_lambda_update(states[f.p], d, f, field.time - last_sample_t)
                st = states[f.p]
                # J_lambda at the controller's current lambda
                d = replace(d, lam=st.lambda_t, J_lambda=d.grad_v_sq + d.grad_x_sq + 2.0 * st.lambda_t * d.cross)
                for k in ctrl_rows[f.p]:
                    ctrl_rows[f.p][k].append(getattr(st, k))
            channels[f.p].append(d)
        last_sample_t = field.time

    def fix(v: np.ndarray) -> np.ndarray:
        nonlocal clamped
        if conserve_mass:
            v = _restore_mass(v, m0, grid)
        neg = v < 0
        if neg.any():
            lost = float(-(grid.weights[neg] * v[neg]).sum())
            if lost > negativity_tol:
                raise PositivityError(f"negative mass {lost:.3e} at t={t:.4f} exceeds {negativity_tol:.1e}")
            clamped += lost
            v = np.where(neg, 0.0, v)
        return v

    sample(PhaseField(grid, vals, g0.floor, t))
    k = 0
    while k < n_steps:
        block = min(sample_every, n_steps - k)
        # fused Strang steps: R(dt/2) [O R(dt)]* O R(dt/2)
        vals, d = _rotate(vals, grid, 0.5 * dt, interp_order)
        clamp_defect += d
        vals = fix(vals)
        for i in range(block):
            vals = fix(_apply_ou(vals, grid, ou))
            theta = dt if i < block - 1 else 0.5 * dt
            vals, d = _rotate(vals, grid, theta, interp_order)
            clamp_defect += d
            vals = fix(vals)
        k += block
        t = g0.time + k * dt
        field = PhaseField(grid, vals, g0.floor, t)
        sample(field)
        drift = abs(masses[-1] - m0)
        if drift > mass_tol:
            raise MassDriftError(f"mass drift {drift:.3e} at t={t:.4f} exceeds {mass_tol:.1e}")
    trace = KineticTrace(
        times=np.asarray(times),
        channels=channels,
        mass=np.asarray(masses),
        dt=dt,
        clamp_defect=clamp_defect,
        clamped_mass=clamped,
        final_field=PhaseField(grid, vals, g0.floor, t),
    )
    for p, rows in ctrl_rows.items():
        trace.controller[p] = {k: np.asarray(v) for k, v in rows.items()}
        trace.zero_events[p] = list(states[p].zero_events)
    return trace


# ---------------------------------------------------------------------------
# delay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TauEstimate:
    value: float
    converged: bool
    partial: np.ndarray


def estimate_tau(times: np.ndarray, rho: np.ndarray, rel_tol: float = 0.01) -> TauEstimate:
    """
    ``tau = lim 2 int_0^t rho - t`` by the trapezoid rule.

    ``converged`` is set when the partial integral changes by less than
    ``rel_tol`` (relative) over the last quarter of the run, or stays
    below ``1e-12`` in absolute value.
    """
    times = np.asarray(times, dtype=float)
    rho = np.asarray(rho, dtype=float)
    f = 2.0 * rho - 1.0
    partial = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(times))])
    value = float(partial[-1])
    q = np.searchsorted(times, times[0] + 0.75 * (times[-1] - times[0]))
    change = float(np.max(np.abs(partial[q:] - value))) if q < partial.size else 0.0
    if abs(value) < 1e-12:
        converged = change < 1e-12
    else:
        converged = change < rel_tol * abs(value)
    return TauEstimate(value, bool(converged), partial)


# ---------------------------------------------------------------------------
# pointwise quadratic-form lemma
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LemmaReport:
    """
    Both sides of ``int X.M1 X + int Y.M2 Y >= 1/2 int X.M0 X + lambda_1 int |Y|**2``.
    """

    p: float
    lhs: float
    rhs: float
    margin: float
    excluded_nodes: int


def check_lemma_quadratic_form(field: PhaseField, fam: PhiFamily, exclude_below: float = 1e-10) -> LemmaReport:
    """
    Evaluate the quadratic-form lemma at ``(lam, nu) = (1/2, 1)`` on ``field``.

    ``X = (h_v, h_x)`` and ``Y = (h_vv, h_xv, (sqrt h)_v**2, (sqrt h)_x (sqrt h)_v)``
    are assembled from the grid stencils.  Nodes with ``g < exclude_below``
    are left out of every integral and counted.
    """
    grid = field.grid
    ms = build_matrices(HypoParams(0.5, 1.0, fam.kappa))
    h = compute_h(field, fam).values
    hx, hv = _first_derivatives(h, grid)
    X = (hv, hx)
    Y = _y_components(field, fam)
    keep = field.values >= exclude_below
    w = np.where(keep, 1.0, 0.0)
    l1 = eigenvalues_m2_closed_form(fam.kappa)["l1"]
    lhs = grid.integrate(w * (_quad_form(ms.m1, X) + _quad_form(ms.m2, Y)))
    rhs = grid.integrate(w * (0.5 * _quad_form(ms.m0, X) + l1 * sum(y * y for y in Y)))
    return LemmaReport(fam.p, lhs, rhs, lhs - rhs, int((~keep).sum()))


def rho_statistics(times: np.ndarray, rho: np.ndarray) -> dict:
    """
    Share of the run where ``rho <= 1/2`` and the smallest ``rho``.

    The share is the sampled measure: each sample owns the interval up to
    the next one, divided by the run length.
    """
    times = np.asarray(times, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if times.size < 2:
        raise ValueError("need at least two samples")
    span = np.diff(times)
    low = rho[:-1] <= 0.5
    return {
        "fraction_le_half": float(span[low].sum() / (times[-1] - times[0])),
        "samples_le_half": int((rho <= 0.5).sum()),
        "min_rho": float(rho.min()),
    }
