"""
Sampled checks of static functional inequalities for the Gaussian measure.

Every check returns a margin that is nonnegative when the inequality holds;
:func:`run_suite` sweeps seeded random fields and collects the worst margin
per check and per ``p`` (or ``q``).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermeval

from .entropy_core import (
    PhiFamily,
    QuadratureGrid,
    ScalarField,
    build_grid,
    csiszar_kullback_bound,
    derivative,
    entropy,
    fisher_information,
    phi_eval,
)

__all__ = [
    "FAMILIES",
    "GAUSSIAN_EEP_CONSTANT",
    "TestFieldGenerator",
    "PerturbedMeasure",
    "slice_entropy",
    "check_csiszar_kullback",
    "check_tensorization",
    "check_entropy_subadditivity_implies_gap",
    "check_convexity",
    "check_holley_stroock",
    "InterpolationReport",
    "check_interpolation_family",
    "check_two_norm_interpolation",
    "check_jensen_lemma",
    "measured_eep_constant",
    "CheckReport",
    "SUITES",
    "run_suite",
]

FAMILIES = ("hermite_perturbation", "shifted_gaussian_ratio", "positive_mixture", "step_like")

# I >= 2 E for every phi_p under the standard Gaussian
GAUSSIAN_EEP_CONSTANT = 2.0


# ---------------------------------------------------------------------------
# random fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFieldGenerator:
    """
    Seeded positive test fields on 1-D or product 2-D grids.

    Parameters
    ----------
    seed : int
    family : str, optional
        One of :data:`FAMILIES`; by default chosen from the seed.
    lo, hi : float
        Every field takes values in ``[lo, hi]`` on the grid.
    """

    __test__ = False  # not a pytest class

    seed: int
    family: Optional[str] = None
    lo: float = 0.1
    hi: float = 10.0

    def __post_init__(self) -> None:
        if self.family is not None and self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0 < self.lo < 1 < self.hi:
            raise ValueError("need 0 < lo < 1 < hi")

    @property
    def resolved_family(self) -> str:
        return self.family if self.family is not None else FAMILIES[self.seed % len(FAMILIES)]

    def _rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, salt])

    def _amp_bound(self, shape_vals: np.ndarray, sign: float) -> float:
        """Largest ``eps`` with ``1 + sign eps s`` inside ``[lo, hi]``."""
        s = sign * shape_vals
        up, down = s.max(), s.min()
        bound = np.inf
        if up > 0:
            bound = min(bound, (self.hi - 1.0) / up)
        if down < 0:
            bound = min(bound, (1.0 - self.lo) / (-down))
        return float(bound)

    def _shift_bound(self, L: float, dim: int) -> float:
        # |a.x| + |a|**2/2 <= dim (amax L + amax**2/2) must stay below c
        c = min(math.log(self.hi), -math.log(self.lo))
        return (math.sqrt(dim * dim * L * L + 2.0 * dim * c) - dim * L) / dim

    def field(self, grid: QuadratureGrid, normalize: bool = False) -> ScalarField:
        """Draw one field on ``grid`` (1-D or 2-D)."""
        rng = self._rng(grid.dimension)
        mesh = grid.mesh
        dim = grid.dimension
        fam = self.resolved_family
        if fam == "hermite_perturbation":
            degs = rng.integers(0, 5, size=dim)
            if not degs.any():
                degs[rng.integers(dim)] = int(rng.integers(1, 5))
            shape_vals = np.ones(grid.shape)
            for ax, k in enumerate(degs):
                coeffs = np.zeros(int(k) + 1)
                coeffs[-1] = 1.0
                shape_vals = shape_vals * hermeval(mesh[ax], coeffs)
            sign = 1.0 if rng.random() < 0.5 else -1.0
            eps = rng.uniform(0.05, 0.95) * self._amp_bound(shape_vals, sign)
            vals = 1.0 + sign * eps * shape_vals
        elif fam == "shifted_gaussian_ratio":
            vals = self._shifted(rng, mesh, grid.L, dim)
        elif fam == "positive_mixture":
            m = int(rng.integers(2, 5))
            wts = rng.dirichlet(np.ones(m))
            vals = sum(wk * self._shifted(rng, mesh, grid.L, dim) for wk in wts)
        else:
            theta = rng.uniform(0, 2 * math.pi) if dim == 2 else 0.0
            direction = (math.cos(theta), math.sin(theta))[:dim] if dim == 2 else (1.0,)
            proj = sum(d * c for d, c in zip(direction, mesh))
            c = rng.uniform(-0.8, 0.8)
            center = rng.uniform(-2.0, 2.0)
            width = rng.uniform(0.5, 2.0)
            vals = 1.0 + c * np.tanh((proj - center) / width)
        vals = np.asarray(vals, dtype=float)
        if normalize:
            vals = vals / grid.integrate(vals)
        return ScalarField(grid, vals)

    def _shifted(self, rng: np.random.Generator, mesh, L: float, dim: int) -> np.ndarray:
        amax = self._shift_bound(L, dim)
        a = rng.uniform(-amax, amax, size=dim)
        return np.exp(sum(ai * xi for ai, xi in zip(a, mesh)) - 0.5 * float(a @ a))


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------


def check_csiszar_kullback(w: ScalarField, fam: PhiFamily) -> float:
    """``E[w] - bound`` for a unit-mass field."""
    bound, ent = csiszar_kullback_bound(w, fam)
    return ent - bound


def slice_entropy(w: ScalarField, fam: PhiFamily, axis: int) -> np.ndarray:
    """
    Entropy along ``axis`` for every fixed value of the other coordinate.

    For ``axis = 0`` the result is ``E_{gamma_1}[w(., x2)]`` as a function of ``x2``.
    """
    wts = w.grid.axis_weights
    vals = np.moveaxis(w.values, axis, 0)
    mean = wts @ vals
    return wts @ phi_eval(fam, vals) - phi_eval(fam, mean)


def _require_2d(w: ScalarField) -> None:
    if w.grid.dimension != 2:
        raise ValueError("this check needs a field on a product 2-D grid")


def check_tensorization(w: ScalarField, fam: PhiFamily) -> float:
    """
    Sub-additivity residual
    ``int E_1[w] dgamma_2 + int E_2[w] dgamma_1 - E_{12}[w]``.
    """
    _require_2d(w)
    wts = w.grid.axis_weights
    rhs = float(wts @ slice_entropy(w, fam, 0) + wts @ slice_entropy(w, fam, 1))
    return rhs - entropy(w, fam)


def check_entropy_subadditivity_implies_gap(
    w: ScalarField,
    fam: PhiFamily,
    lambda_1: float = GAUSSIAN_EEP_CONSTANT,
    lambda_2: float = GAUSSIAN_EEP_CONSTANT,
) -> dict:
    """
    Margin of ``I_{12}[w] >= min(lambda_1, lambda_2) E_{12}[w]``.

    Returns
    -------
    dict
        ``margin``, ``ratio = I / E`` and the two sides.
    """
    _require_2d(w)
    ent = entropy(w, fam)
    fis = fisher_information(w, fam)
    lam = min(lambda_1, lambda_2)
    return {
        "margin": fis - lam * ent,
        "ratio": fis / ent if ent > 0 else math.inf,
        "fisher": fis,
        "entropy": ent,
    }


def check_convexity(w0: ScalarField, w1: ScalarField, fam: PhiFamily, t: float) -> float:
    """``t E[w1] + (1 - t) E[w0] - E[t w1 + (1 - t) w0]``."""
    mix = w0.with_values(t * w1.values + (1.0 - t) * w0.values)
    return t * entropy(w1, fam) + (1.0 - t) * entropy(w0, fam) - entropy(mix, fam)


def check_jensen_lemma(w: ScalarField, fam: PhiFamily) -> float:
    """``int E_1[w] dgamma_2 - E_1[int w dgamma_2]``."""
    _require_2d(w)
    grid = w.grid
    wts = grid.axis_weights
    lhs = float(wts @ slice_entropy(w, fam, 0))
    marginal = w.values @ wts  # function of x1
    rhs = float(wts @ phi_eval(fam, marginal) - phi_eval(fam, wts @ marginal))
    return lhs - rhs


@dataclass(frozen=True, eq=False)
class PerturbedMeasure:
    """
    Bounded perturbation ``dmu = exp(-chi) dgamma`` of the grid measure.

    Attributes
    ----------
    grid : QuadratureGrid
    weights : ndarray
        Nodal weights of ``mu``.
    a, b : float
        ``a = min chi``, ``b = max chi`` so ``e^{-b} dgamma <= dmu <= e^{-a} dgamma``.
    normalization : float
        ``int dmu``.
    """

    grid: QuadratureGrid
    weights: np.ndarray
    a: float
    b: float
    normalization: float

    @classmethod
    def from_potential(cls, grid: QuadratureGrid, chi: Callable[..., np.ndarray]) -> "PerturbedMeasure":
        vals = np.broadcast_to(np.asarray(chi(*grid.mesh), dtype=float), grid.shape)
        w = grid.weights * np.exp(-vals)
        return cls(grid, w, float(vals.min()), float(vals.max()), float(w.sum()))

    def __post_init__(self) -> None:
        if self.a > self.b:
            raise ValueError("need a <= b")
        base = self.grid.weights
        lo, hi = math.exp(-self.b) * base, math.exp(-self.a) * base
        tol = 1e-14 * base
        if np.any(self.weights < lo - tol) or np.any(self.weights > hi + tol) or np.any(self.weights <= 0):
            raise ValueError("weights violate exp(-b) dgamma <= dmu <= exp(-a) dgamma")


def check_holley_stroock(
    w: ScalarField,
    fam: PhiFamily,
    perturbed: PerturbedMeasure,
    base_constant: float = GAUSSIAN_EEP_CONSTANT,
) -> dict:
    """
    Perturbed entropy / entropy-production inequality.

    ``margin = int phi''(w)|grad w|**2 dmu
    - e^{a-b} base_constant int [phi(w) - phi(wt) - phi'(wt)(w - wt)] dmu``
    with ``wt = int w dmu / int dmu``.  The report also carries the margin
    for ``base_constant / 2``.
    """
    if not w.grid.same_as(perturbed.grid):
        raise ValueError("field and measure live on different grids")
    grid = w.grid
    wmu = perturbed.weights
    vals = w.values
    wt = float((wmu * vals).sum() / perturbed.normalization)
    if fam.p < 2.0 and wt <= 0:
        raise ValueError("field must have positive mean")
    bregman = phi_eval(fam, vals) - phi_eval(fam, wt) - phi_eval(fam, wt, 1) * (vals - wt)
    ent = float((wmu * bregman).sum())
    grad_sq = sum(derivative(vals, grid, ax) ** 2 for ax in range(grid.dimension))
    fis = float((wmu * phi_eval(fam, w.floored(), 2) * grad_sq).sum())
    factor = math.exp(perturbed.a - perturbed.b)
    return {
        "margin": fis - factor * base_constant * ent,
        "margin_half_constant": fis - factor * 0.5 * base_constant * ent,
        "fisher": fis,
        "entropy": ent,
        "a": perturbed.a,
        "b": perturbed.b,
    }


@dataclass(frozen=True)
class InterpolationReport:
    """``lhs / rhs`` of the interpolation inequality with unit constant."""

    q: float
    lhs: float
    rhs: float
    ratio: float
    degenerate: bool


# gradient energies below this fraction of ||f||_2**2 are stencil round-off
_DEGENERATE = 1e-24


def _norm(values: np.ndarray, grid: QuadratureGrid, q: float) -> float:
    return grid.integrate(np.abs(values) ** q) ** (1.0 / q)


def check_interpolation_family(f: ScalarField, q: float) -> InterpolationReport:
    """
    ``(||f||_2**2 - ||f||_q**2) / (2 - q)`` against ``int |grad f|**2``.

    At ``q = 1`` the left side is the variance ``||f - mean f||_2**2``,
    which is the Poincare form of the family and coincides with the
    general expression for nonnegative ``f``.  ``q = 2`` selects the
    logarithmic Sobolev limit ``1/2 int f**2 log(f**2 / ||f||_2**2)``.
    """
    if not 1.0 <= q <= 2.0:
        raise ValueError("q must lie in [1, 2]")
    grid = f.grid
    v = f.values
    n2 = grid.integrate(v * v)
    if q == 1.0:
        lhs = n2 - grid.integrate(v) ** 2
    elif q == 2.0:
        sq = v * v
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(sq > 0, sq * np.log(sq / n2), 0.0)
        lhs = 0.5 * grid.integrate(ent)
    else:
        lhs = (n2 - _norm(v, grid, q) ** 2) / (2.0 - q)
    rhs = grid.integrate(sum(derivative(v, grid, ax) ** 2 for ax in range(grid.dimension)))
    if rhs <= _DEGENERATE * n2:
        return InterpolationReport(q, lhs, rhs, 0.0, True)
    return InterpolationReport(q, lhs, rhs, lhs / rhs, False)


def check_two_norm_interpolation(f: ScalarField, q: float) -> dict:
    """
    Two-norm strengthening
    ``c / (2 - q)**2 [||f||_2**2 - ||f||_q**(2(2-q)) ||f||_2**(2(q-1))] <= int |grad f|**2``.

    Ratios are returned for ``c = 2`` (``ratio_c2``) and ``c = 1``
    (``ratio_c1``).  Near the equality witness ``1 + eps x`` the left side
    with ``c = 2`` is twice the gradient term, so only the ``c = 1``
    version can hold with unit constant.
    """
    if not 1.0 < q < 2.0:
        raise ValueError("q must lie in (1, 2)")
    grid = f.grid
    v = f.values
    n2 = math.sqrt(grid.integrate(v * v))
    nq = _norm(v, grid, q)
    core = (n2**2 - nq ** (2 * (2 - q)) * n2 ** (2 * (q - 1))) / (2.0 - q) ** 2
    rhs = grid.integrate(sum(derivative(v, grid, ax) ** 2 for ax in range(grid.dimension)))
    if rhs <= _DEGENERATE * n2**2:
        return {"q": q, "ratio_c2": 0.0, "ratio_c1": 0.0, "degenerate": True}
    return {"q": q, "ratio_c2": 2.0 * core / rhs, "ratio_c1": core / rhs, "degenerate": False}


def measured_eep_constant(fam: PhiFamily, grid: QuadratureGrid, seeds: Iterable[int]) -> float:
    """
    Smallest ``I / E`` over generated 1-D fields and the witness ``1 + 1e-3 x``.
    """
    best = math.inf
    fields = [TestFieldGenerator(s).field(grid) for s in seeds]
    fields.append(ScalarField.from_function(grid, lambda x: 1.0 + 1e-3 * x))
    for w in fields:
        e = entropy(w, fam)
        if e > 1e-14:
            best = min(best, fisher_information(w, fam) / e)
    return best


# ---------------------------------------------------------------------------
# suite runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckReport:
    """Worst margin of one check at one ``p`` (or ``q``) over a seed range."""

    check: str
    p_or_q: float
    seeds: int
    min_margin: float
    argmin_seed: int
    violations: int
    tolerance: float
    extra: Optional[dict] = None

    def as_dict(self) -> dict:
        d = asdict(self)
        if d["extra"] is None:
            d.pop("extra")
        return d


@dataclass(frozen=True, eq=False)
class _Grids:
    one: QuadratureGrid
    two: QuadratureGrid


def _default_grids() -> _Grids:
    return _Grids(build_grid(1, 8.0, 257), build_grid(2, 8.0, 129))


def _margins_ck(seed, fam, grids, ctx):
    return check_csiszar_kullback(TestFieldGenerator(seed).field(grids.one, normalize=True), fam)


def _margins_tens(seed, fam, grids, ctx):
    return check_tensorization(TestFieldGenerator(seed).field(grids.two), fam)


def _margins_gap(seed, fam, grids, ctx):
    lam = ctx["lambda"][fam.p]
    return check_entropy_subadditivity_implies_gap(TestFieldGenerator(seed).field(grids.two), fam, lam, lam)["margin"]


def _margins_jensen(seed, fam, grids, ctx):
    return check_jensen_lemma(TestFieldGenerator(seed).field(grids.two), fam)


def _margins_convexity(seed, fam, grids, ctx):
    w0 = TestFieldGenerator(seed).field(grids.one)
    w1 = TestFieldGenerator(seed + 7919, FAMILIES[(seed + 1) % 4]).field(grids.one)
    return min(check_convexity(w0, w1, fam, t) for t in (0.25, 0.5, 0.75))


def _margins_hs(seed, fam, grids, ctx):
    w = TestFieldGenerator(seed).field(grids.one)
    return check_holley_stroock(w, fam, ctx["perturbed"])["margin"]


def _margins_interp(seed, fam, grids, ctx):
    # q = 2/p links the interpolation exponent to the entropy exponent
    q = 2.0 / fam.p
    rep = check_interpolation_family(TestFieldGenerator(seed).field(grids.one), q)
    return 1.0 - rep.ratio


def _margins_lemma(seed, fam, grids, ctx):
    from .kfp_dynamics import PhaseField, check_lemma_quadratic_form

    w = TestFieldGenerator(seed).field(grids.two)
    return check_lemma_quadratic_form(PhaseField(grids.two, w.values), fam).margin


SUITES: dict[str, Callable] = {
    "ck": _margins_ck,
    "tensorization": _margins_tens,
    "gap": _margins_gap,
    "jensen": _margins_jensen,
    "convexity": _margins_convexity,
    "holley_stroock": _margins_hs,
    "interpolation": _margins_interp,
    "quadratic_form": _margins_lemma,
}

# the interpolation margin is a ratio defect, the others absolute
TOLERANCES = {name: 1e-8 for name in SUITES}


def _context(p_list: Sequence[float], grids: _Grids, need_lambda: bool) -> dict:
    ctx: dict = {
        "perturbed": PerturbedMeasure.from_potential(grids.one, lambda x: 0.3 * np.sin(x)),
        "lambda": {},
        "lambda_measured": {},
    }
    if need_lambda:
        for p in p_list:
            measured = measured_eep_constant(PhiFamily(p), grids.one, range(64))
            ctx["lambda_measured"][p] = measured
            ctx["lambda"][p] = min(measured, GAUSSIAN_EEP_CONSTANT)
    return ctx


def _worker_count() -> int:
    env = os.environ.get("HYPOFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"HYPOFLOW_THREADS must be an integer, got {env!r}") from None
    return 1


def run_suite(
    selector: Sequence[str] = tuple(SUITES),
    seeds: int = 200,
    p_list: Sequence[float] = (1.0, 1.25, 1.5, 1.75, 2.0),
    flip: bool = False,
    workers: Optional[int] = None,
    grids: Optional[_Grids] = None,
    first_seed: int = 0,
) -> list[CheckReport]:
    """
    Run the selected checks over ``seeds`` random fields for every ``p``.

    Parameters
    ----------
    selector : sequence of str
        Keys of :data:`SUITES`.
    seeds : int
        Number of seeds, starting at ``first_seed``.
    p_list : sequence of float
    flip : bool
        Negate every margin; a harness self-test that must report violations.
    workers : int, optional
        Thread count; defaults to ``HYPOFLOW_THREADS`` or 1.

    Returns
    -------
    list of CheckReport
        Sorted by check name then ``p``.
    """
    unknown = [s for s in selector if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown checks: {unknown}")
    grids = grids or _default_grids()
    ctx = _context(p_list, grids, "gap" in selector)
    jobs = [(name, p) for name in sorted(set(selector)) for p in p_list]
    sign = -1.0 if flip else 1.0

    def one(job):
        name, p = job
        fam = PhiFamily(p)
        fn = SUITES[name]
        seed_list = range(first_seed, first_seed + seeds)
        margins = np.array([sign * fn(s, fam, grids, ctx) for s in seed_list])
        k = int(np.argmin(margins))
        tol = TOLERANCES[name]
        extra = None
        if name == "gap":
            extra = {"lambda_used": ctx["lambda"][p], "lambda_measured": ctx["lambda_measured"][p]}
        elif name == "holley_stroock":
            extra = {"a": ctx["perturbed"].a, "b": ctx["perturbed"].b, "normalization": ctx["perturbed"].normalization}
        elif name == "interpolation":
            extra = {"q": 2.0 / p}
        return CheckReport(name, p, seeds, float(margins[k]), seed_list[k], int((margins < -tol).sum()), tol, extra)

    n_workers = workers if workers is not None else _worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            reports = list(pool.map(one, jobs))
    else:
        reports = [one(j) for j in jobs]
    return sorted(reports, key=lambda r: (r.check, r.p_or_q))
