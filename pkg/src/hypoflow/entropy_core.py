"""
phi-entropies on Gaussian-weighted grids.

The module provides the power-law entropy generators ``phi_p``, a uniform
quadrature grid carrying the standard Gaussian measure, finite-difference
stencils, and the scalar functionals built from them (entropy, Fisher
information, L^p norms, the Csiszar-Kullback lower bound).

Conventions
-----------
A 2-D grid is a tensor product; ``values[i, j]`` lives at
``(axis_nodes[i], axis_nodes[j])``.  In phase space axis 0 is ``x`` and
axis 1 is ``v``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Union

import numpy as np
from scipy.special import erfc

__all__ = [
    "GridConfigurationError",
    "PhiFamily",
    "QuadratureGrid",
    "ScalarField",
    "DEFAULT_FLOOR",
    "phi_eval",
    "build_grid",
    "entropy",
    "fisher_information",
    "grad_field",
    "derivative",
    "lp_norm",
    "csiszar_kullback_bound",
    "save_field",
    "load_field",
]

DEFAULT_FLOOR = 1e-14
_P1_SWITCH = 1e-12

ArrayLike = Union[float, np.ndarray]


class GridConfigurationError(ValueError):
    """Raised when a grid cannot represent the Gaussian measure accurately."""


# ---------------------------------------------------------------------------
# entropy generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiFamily:
    """
    The generator ``phi_p(s) = (s**p - 1 - p (s - 1)) / (p - 1)``.

    For ``p = 1`` the limit ``s log s - (s - 1)`` is used.

    Parameters
    ----------
    p : float
        Exponent in ``[1, 2]``.
    """

    p: float

    def __post_init__(self) -> None:
        p = float(self.p)
        if not (1.0 - 1e-15 <= p <= 2.0 + 1e-15):
            raise ValueError(f"p must lie in [1, 2], got {self.p!r}")
        object.__setattr__(self, "p", p)

    @property
    def is_log(self) -> bool:
        """True when the ``p = 1`` (Boltzmann) branch is selected."""
        return abs(self.p - 1.0) < _P1_SWITCH

    @property
    def kappa(self) -> float:
        """``8 (2 - p) / p``; the coupling constant of the matrix ``M2``."""
        return 8.0 * (2.0 - self.p) / self.p

    @property
    def kappa_p(self) -> float:
        """``(p - 1)(2 - p) / p``; the improvement constant."""
        return (self.p - 1.0) * (2.0 - self.p) / self.p

    @property
    def ck_constant(self) -> float:
        """Csiszar-Kullback constant ``A``, equal to ``p`` for this family."""
        return self.p

    def __call__(self, s: ArrayLike, order: int = 0) -> ArrayLike:
        return phi_eval(self, s, order)


def _as_array(s: ArrayLike) -> tuple[np.ndarray, bool]:
    arr = np.asarray(s, dtype=float)
    return arr, arr.ndim == 0


def phi_eval(fam: PhiFamily, s: ArrayLike, order: int = 0) -> ArrayLike:
    """
    Evaluate ``phi_p`` or one of its first two derivatives.

    Parameters
    ----------
    fam : PhiFamily
    s : float or ndarray
        Nonnegative argument.
    order : {0, 1, 2}

    Returns
    -------
    float or ndarray
        Same shape as ``s``.

    Raises
    ------
    ValueError
        For negative ``s``, or ``s = 0`` with ``order >= 1`` when the
        derivative is singular there (``p < 2``).
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    arr, scalar = _as_array(s)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("phi_p is defined on s >= 0 only")
    p = fam.p
    if order >= 1 and p < 2.0 and np.any(arr == 0):
        raise ValueError("phi_p derivatives are singular at s = 0; apply a floor first")

    if fam.is_log:
        if order == 0:
            out = np.where(arr > 0, arr * np.log(np.where(arr > 0, arr, 1.0)), 0.0) - (arr - 1.0)
        elif order == 1:
            out = np.log(arr)
        else:
            out = 1.0 / arr
    elif p == 2.0:
        if order == 0:
            out = (arr - 1.0) ** 2
        elif order == 1:
            out = 2.0 * (arr - 1.0)
        else:
            out = np.full_like(arr, 2.0)
    else:
        if order == 0:
            # s * expm1((p-1) log s) / (p-1) - (s-1) avoids cancellation near p = 1
            with np.errstate(divide="ignore"):
                logs = np.log(np.where(arr > 0, arr, 1.0))
            out = np.where(
                arr > 0,
                arr * np.expm1((p - 1.0) * logs) / (p - 1.0) - (arr - 1.0),
                1.0,
            )
        elif order == 1:
            out = p * np.expm1((p - 1.0) * np.log(arr)) / (p - 1.0)
        else:
            out = p * arr ** (p - 2.0)
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# grids and stencils
# ---------------------------------------------------------------------------


def _fd_weights(offsets: np.ndarray, deriv: int) -> np.ndarray:
    """Finite-difference weights on integer ``offsets`` (unit spacing)."""
    m = len(offsets)
    vander = np.vander(offsets.astype(float), m, increasing=True).T
    rhs = np.zeros(m)
    rhs[deriv] = math.factorial(deriv)
    return np.linalg.solve(vander, rhs)


@lru_cache(maxsize=64)
def _diff_matrix(n: int, h: float, deriv: int, order: int) -> np.ndarray:
    """Dense differentiation matrix with one-sided closures at the ends."""
    half = order // 2
    width_b = order + deriv  # one-sided stencil reaching the same order
    D = np.zeros((n, n))
    interior_w = _fd_weights(np.arange(-half, half + 1), deriv)
    for i in range(n):
        if half <= i < n - half:
            D[i, i - half : i + half + 1] = interior_w
        elif i < half:
            offs = np.arange(width_b) - i
            D[i, :width_b] = _fd_weights(offs, deriv)
        else:
            offs = np.arange(n - width_b, n) - i
            D[i, n - width_b :] = _fd_weights(offs, deriv)
    D /= h**deriv
    D.setflags(write=False)
    return D


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """
    Uniform tensor grid on ``[-L, L]**dimension`` with Gaussian weights.

    Attributes
    ----------
    dimension : int
        1 or 2.
    axis_nodes : ndarray
        Shared 1-D node vector of every axis.
    axis_weights : ndarray
        Trapezoid weights times the standard normal density.
    L : float
    stencil_order : int
    tail_tol : float
    """

    dimension: int
    axis_nodes: np.ndarray
    axis_weights: np.ndarray
    L: float
    stencil_order: int = 4
    tail_tol: float = 1e-10

    @property
    def n(self) -> int:
        return self.axis_nodes.size

    @property
    def h(self) -> float:
        return float(self.axis_nodes[1] - self.axis_nodes[0])

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dimension

    @property
    def weights(self) -> np.ndarray:
        if self.dimension == 1:
            return self.axis_weights
        return np.multiply.outer(self.axis_weights, self.axis_weights)

    @property
    def mesh(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        return tuple(np.meshgrid(*([self.axis_nodes] * self.dimension), indexing="ij"))

    @property
    def mass_defect(self) -> float:
        """``1 - sum(weights)``."""
        return float(1.0 - self.weights.sum())

    @property
    def tail_mass(self) -> float:
        """Gaussian mass outside the truncation box."""
        return _tail_mass(self.L, self.dimension)

    def integrate(self, values: np.ndarray) -> float:
        """Integral of nodal ``values`` against the grid measure."""
        values = np.asarray(values, dtype=float)
        if values.shape != self.shape:
            raise ValueError(f"values have shape {values.shape}, grid is {self.shape}")
        if self.dimension == 1:
            return float(self.axis_weights @ values)
        return float(self.axis_weights @ values @ self.axis_weights)

    def diff_matrix(self, deriv: int = 1) -> np.ndarray:
        """Differentiation matrix acting along one axis."""
        return _diff_matrix(self.n, self.h, deriv, self.stencil_order)

    def metadata(self) -> dict[str, Any]:
        return {
            "dimension": self.dimension,
            "L": self.L,
            "n": self.n,
            "stencil_order": self.stencil_order,
            "tail_tol": self.tail_tol,
            "tail_defect": self.mass_defect,
        }

    def same_as(self, other: "QuadratureGrid") -> bool:
        return (
            self.dimension == other.dimension
            and self.n == other.n
            and self.L == other.L
            and self.stencil_order == other.stencil_order
        )


def _tail_mass(L: float, dimension: int) -> float:
    t = float(erfc(L / math.sqrt(2.0)))
    return -math.expm1(dimension * math.log1p(-t))


def build_grid(
    dimension: int,
    L: float,
    n_per_axis: int,
    stencil_order: int = 4,
    tail_tol: float = 1e-10,
) -> QuadratureGrid:
    """
    Build a uniform Gaussian quadrature grid.

    Parameters
    ----------
    dimension : {1, 2}
    L : float
        Half-width of the box.
    n_per_axis : int
        Number of nodes per axis, at least 16.
    stencil_order : {2, 4}
    tail_tol : float
        Largest acceptable Gaussian mass outside the box.

    Raises
    ------
    GridConfigurationError
        When the truncated tail mass exceeds ``tail_tol``.

    Examples
    --------
    >>> g = build_grid(1, 8.0, 257)
    >>> abs(g.weights.sum() - 1) < 1e-10
    True
    """
    if dimension not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    if not L > 0:
        raise ValueError("L must be positive")
    if n_per_axis < 16:
        raise ValueError("n_per_axis must be at least 16")
    if stencil_order not in (2, 4):
        raise ValueError("stencil_order must be 2 or 4")
    tail = _tail_mass(L, dimension)
    if tail > tail_tol:
        raise GridConfigurationError(
            f"Gaussian tail mass {tail:.3e} beyond L={L} exceeds tail_tol={tail_tol:.1e}"
        )
    x = np.linspace(-L, L, n_per_axis)
    x = 0.5 * (x - x[::-1])  # exact symmetry about 0
    h = x[1] - x[0]
    trap = np.full(n_per_axis, h)
    trap[[0, -1]] = 0.5 * h
    w = trap * np.exp(-0.5 * x**2) / math.sqrt(2.0 * math.pi)
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureGrid(dimension, x, w, float(L), int(stencil_order), float(tail_tol))


# ---------------------------------------------------------------------------
# fields and functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalarField:
    """
    Nodal values of a function on a :class:`QuadratureGrid`.

    Parameters
    ----------
    grid : QuadratureGrid
    values : ndarray
        Array of shape ``grid.shape``.
    floor : float
        Positivity floor used before evaluating ``phi''`` or logarithms.
    """

    grid: QuadratureGrid
    values: np.ndarray
    floor: float = DEFAULT_FLOOR

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values have shape {vals.shape}, grid is {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.floor < 0:
            raise ValueError("floor must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: QuadratureGrid, fn, floor: float = DEFAULT_FLOOR) -> "ScalarField":
        """Sample ``fn(*mesh)`` on ``grid``."""
        vals = np.broadcast_to(np.asarray(fn(*grid.mesh), dtype=float), grid.shape)
        return cls(grid, vals, floor)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return type(self)(self.grid, values, self.floor)

    @property
    def mass(self) -> float:
        return self.grid.integrate(self.values)

    def floored(self) -> np.ndarray:
        return np.maximum(self.values, self.floor)


def _require_nonnegative(field: ScalarField) -> None:
    if np.any(field.values < 0):
        raise ValueError(f"field has negative values (min {field.values.min():.3e})")


def derivative(values: np.ndarray, grid: QuadratureGrid, axis: int = 0, deriv: int = 1) -> np.ndarray:
    """
    Finite-difference derivative of nodal ``values`` along ``axis``.

    Interior rows use centred stencils of ``grid.stencil_order``; the end
    rows use one-sided stencils of the same order.
    """
    if not 0 <= axis < grid.dimension:
        raise ValueError(f"axis {axis} out of range for a {grid.dimension}-D grid")
    D = grid.diff_matrix(deriv)
    return np.moveaxis(np.tensordot(D, values, axes=(1, axis)), 0, axis)


def grad_field(field: ScalarField, axis: int = 0) -> ScalarField:
    """Partial derivative of ``field`` along ``axis`` as a new field (may be signed)."""
    return ScalarField(field.grid, derivative(field.values, field.grid, axis), floor=0.0)


def entropy(field: ScalarField, fam: PhiFamily) -> float:
    """
    Non-normalized phi-entropy ``int phi(w) dgamma - phi(int w dgamma)``.

    Reduces to ``int phi(w) dgamma`` when the field has unit mass.
    """
    _require_nonnegative(field)
    grid = field.grid
    w = field.values
    mean = grid.integrate(w)
    return grid.integrate(phi_eval(fam, w)) - phi_eval(fam, mean)


def fisher_information(field: ScalarField, fam: PhiFamily, full_output: bool = False):
    """
    phi-Fisher information ``int phi''(w) |grad w|**2 dgamma``.

    Parameters
    ----------
    field : ScalarField
    fam : PhiFamily
    full_output : bool
        Also return a metadata dict with the number and mass of nodes
        where the positivity floor was active.

    Returns
    -------
    float or (float, dict)
    """
    _require_nonnegative(field)
    grid = field.grid
    w = field.values
    grad_sq = sum(derivative(w, grid, ax) ** 2 for ax in range(grid.dimension))
    floored = w < field.floor
    value = grid.integrate(phi_eval(fam, field.floored(), 2) * grad_sq)
    if not full_output:
        return value
    info = {
        "floored_nodes": int(floored.sum()),
        "floored_mass": float(grid.weights[floored].sum()),
        "floor_warning": bool(floored.any() and fam.p < 2.0),
    }
    return value, info


def lp_norm(field: ScalarField, p: float) -> float:
    """``(int |w|**p dgamma)**(1/p)`` for ``p >= 1``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return field.grid.integrate(np.abs(field.values) ** p) ** (1.0 / p)


def csiszar_kullback_bound(field: ScalarField, fam: PhiFamily, mass_tol: float = 1e-8) -> tuple[float, float]:
    """
    Both sides of the Csiszar-Kullback inequality for a unit-mass field.

    Returns
    -------
    bound : float
        ``2**(-2/p) * p * min(1, ||w||_p**(p-2)) * ||w - 1||_p**2``.
    entropy : float
        ``E[w]``; the inequality states ``entropy >= bound``.

    Raises
    ------
    ValueError
        If ``|int w dgamma - 1| > mass_tol``.
    """
    mass = field.mass
    if abs(mass - 1.0) > mass_tol:
        raise ValueError(f"Csiszar-Kullback bound needs unit mass, got {mass:.12g}")
    p = fam.p
    norm_w = lp_norm(field, p)
    dev = field.grid.integrate(np.abs(field.values - 1.0) ** p) ** (1.0 / p)
    bound = 2.0 ** (-2.0 / p) * fam.ck_constant * min(1.0, norm_w ** (p - 2.0)) * dev**2
    return bound, entropy(field, fam)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_field(field: ScalarField, path: Union[str, Path]) -> tuple[Path, Path]:
    """
    Write ``field`` as ``<path>.csv`` (``index,x[,v],value``) and ``<path>.json``.

    Returns the two paths written.
    """
    base = Path(path)
    base = base.with_suffix("") if base.suffix in (".csv", ".json") else base
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    grid = field.grid
    cols = [c.ravel() for c in grid.mesh]
    header = "index,x,value" if grid.dimension == 1 else "index,x,v,value"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for k, row in enumerate(zip(*cols, field.values.ravel())):
            fh.write(",".join([str(k)] + [format(r, ".17g") for r in row]) + "\n")
    meta = grid.metadata()
    meta["floor"] = field.floor
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def load_field(path: Union[str, Path]) -> ScalarField:
    """Inverse of :func:`save_field`."""
    base = Path(path)
    base = base.with_suffix("") if base.suffix in (".csv", ".json") else base
    meta = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    grid = build_grid(meta["dimension"], meta["L"], meta["n"], meta["stencil_order"], meta["tail_tol"])
    data = np.loadtxt(base.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    values = data[:, -1].reshape(grid.shape)
    return ScalarField(grid, values, meta.get("floor", DEFAULT_FLOOR))
