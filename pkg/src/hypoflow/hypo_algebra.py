"""
Matrix algebra behind the twisted Fisher functionals.

The quadratic forms ``X.M0 X``, ``X.M1 X``, ``Y.M2 Y`` and ``X.M3 X`` depend
on two Lyapunov parameters ``(lam, nu)`` and on the coupling ``kappa``.
Only the scalar blocks are assembled; a Kronecker factor ``Id_d`` would
replicate every eigenvalue ``d`` times and change nothing below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "HypoParams",
    "HypoMatrixSet",
    "Feasibility",
    "OptimumResult",
    "build_matrices",
    "eigenvalues_m2_closed_form",
    "jacobi_eigh",
    "eigenvalues_numeric",
    "generalized_min_eig",
    "is_feasible",
    "lambda_star",
    "optimize_lambda_star",
    "zeta",
    "NU_CHOICE_MAX",
]

NU_CHOICE_MAX = 1.0 + math.sqrt(3.0) / 2.0
_PSD_TOL = 1e-12


@dataclass(frozen=True)
class HypoParams:
    """Lyapunov parameters ``lam``, ``nu`` and coupling ``kappa`` in ``[0, 8]``."""

    lam: float
    nu: float
    kappa: float


@dataclass(frozen=True, eq=False)
class HypoMatrixSet:
    """The symmetric matrices ``m0``, ``m1`` (2x2), ``m2`` (4x4) and ``m3`` (2x2)."""

    params: HypoParams
    m0: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray


def build_matrices(params: HypoParams) -> HypoMatrixSet:
    """
    Assemble ``M0 .. M3`` at ``params``.

    Entries are written so that each matrix is symmetric exactly.

    Examples
    --------
    >>> ms = build_matrices(HypoParams(0.5, 1.0, 3.0))
    >>> bool(np.all(ms.m1 == 0.5 * ms.m0))
    True
    """
    lam, nu, k = float(params.lam), float(params.nu), float(params.kappa)
    off = 0.5 * (1.0 + lam - nu)
    m0 = np.array([[1.0, lam], [lam, nu]])
    m1 = np.array([[1.0 - lam, off], [off, lam]])
    a, b, c = -0.5 * k, -0.5 * k * lam, -0.5 * k * nu
    m2 = np.array(
        [
            [1.0, lam, a, b],
            [lam, nu, b, c],
            [a, b, 2.0 * k, 2.0 * k * lam],
            [b, c, 2.0 * k * lam, 2.0 * k * nu],
        ]
    )
    m3 = np.array([[1.0, 0.0], [0.0, 0.0]])
    for m in (m0, m1, m2, m3):
        m.setflags(write=False)
    return HypoMatrixSet(params, m0, m1, m2, m3)


def eigenvalues_m2_closed_form(kappa: float) -> dict[str, float]:
    """
    Closed-form eigenvalues of ``M2(1/2, 1, kappa)``.

    Returns
    -------
    dict
        Keys ``"l1" .. "l4"``; the labels are not sorted for every kappa.
    """
    if not 0.0 <= kappa <= 8.0:
        raise ValueError(f"kappa must lie in [0, 8], got {kappa}")
    r = math.sqrt(5.0 * kappa**2 - 4.0 * kappa + 1.0)
    s = 2.0 * kappa + 1.0
    return {"l1": 0.25 * (s - r), "l2": 0.75 * (s - r), "l3": 0.25 * (s + r), "l4": 0.75 * (s + r)}


def _check_symmetric(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.array_equal(a, a.T):
        raise ValueError("matrix is not exactly symmetric")
    return a


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """
    Cyclic Jacobi eigensolver for small symmetric matrices.

    Parameters
    ----------
    a : ndarray, shape (n, n)
        Exactly symmetric matrix.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm drops below
        ``tol * ||a||_F``.

    Returns
    -------
    w : ndarray
        Ascending eigenvalues.
    q : ndarray
        Orthonormal eigenvectors as columns, ``a = q @ diag(w) @ q.T``.
    """
    a = _check_symmetric(a).copy()
    n = a.shape[0]
    q = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), q
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off <= tol * scale:
            break
        for i in range(n - 1):
            for j in range(i + 1, n):
                if abs(a[i, j]) <= 1e-18 * scale:
                    # below rounding of the diagonal; dropping it avoids overflow in theta
                    a[i, j] = a[j, i] = 0.0
                    continue
                theta = (a[j, j] - a[i, i]) / (2.0 * a[i, j])
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(1.0, theta))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                rot = np.eye(n)
                rot[i, i] = rot[j, j] = c
                rot[i, j], rot[j, i] = s, -s
                a = rot.T @ a @ rot
                a[i, j] = a[j, i] = 0.0
                q = q @ rot
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], q[:, order]


def _eig2(a: np.ndarray) -> np.ndarray:
    tr = 0.5 * (a[0, 0] + a[1, 1])
    disc = math.hypot(0.5 * (a[0, 0] - a[1, 1]), a[0, 1])
    return np.array([tr - disc, tr + disc])


def eigenvalues_numeric(matrix: np.ndarray) -> np.ndarray:
    """
    Ascending eigenvalues of a symmetric matrix with ``n <= 4``.

    Uses the closed form for ``n = 2`` and cyclic Jacobi otherwise.
    """
    a = _check_symmetric(matrix)
    if a.shape[0] > 4:
        raise ValueError("eigenvalues_numeric handles n <= 4")
    if a.shape[0] == 1:
        return a[0].copy()
    if a.shape[0] == 2:
        return _eig2(a)
    return jacobi_eigh(a)[0]


def generalized_min_eig(a: np.ndarray, b: np.ndarray) -> float:
    """
    Smallest root ``mu`` of ``det(a - mu b) = 0`` for 2x2 symmetric ``a`` and
    positive definite ``b``.
    """
    detb = b[0, 0] * b[1, 1] - b[0, 1] ** 2
    if not (detb > 0 and b[0, 0] > 0):
        raise ValueError("the pencil matrix is not positive definite")
    # reduce to C = L^{-1} a L^{-T} with b = L L^T; the 2x2 symmetric
    # eigenvalue formula then has no cancellation near double roots
    l11 = math.sqrt(b[0, 0])
    l21 = b[0, 1] / l11
    l22 = math.sqrt(detb) / l11
    c00 = a[0, 0] / b[0, 0]
    c01 = (a[0, 1] - l21 * a[0, 0] / l11) / (l11 * l22)
    c11 = (a[1, 1] - 2.0 * l21 * a[0, 1] / l11 + l21 * l21 * a[0, 0] / b[0, 0]) / (l22 * l22)
    return float(0.5 * (c00 + c11) - math.hypot(0.5 * (c00 - c11), c01))


class Feasibility(NamedTuple):
    feasible: bool
    lambda_sq_le_nu: bool
    m0_min_eig: float
    m2_min_eig: float


def is_feasible(params: HypoParams) -> Feasibility:
    """
    Admissibility of ``(lam, nu)`` for a given ``kappa``.

    Feasible means ``lam**2 <= nu``, ``M0`` positive definite and
    ``min eig M2 >= -1e-12``.
    """
    ms = build_matrices(params)
    cond = params.lam**2 <= params.nu
    e0 = float(_eig2(ms.m0)[0])
    e2 = float(eigenvalues_numeric(ms.m2)[0])
    return Feasibility(bool(cond and e0 > 0 and e2 >= -_PSD_TOL), bool(cond), e0, e2)


def lambda_star(params: HypoParams) -> float:
    """Smallest generalized eigenvalue of the pencil ``(M1, M0)``."""
    ms = build_matrices(params)
    return generalized_min_eig(ms.m1, ms.m0)


class OptimumResult(NamedTuple):
    lambda_opt: float
    nu_opt: float
    value: float


def _lambda_star_grid(lam: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Vectorised ``lambda_star`` on broadcast arrays; NaN where M0 is singular."""
    m1a, m1b, m1c = 1.0 - lam, 0.5 * (1.0 + lam - nu), lam
    detb = nu - lam**2
    deta = m1a * m1c - m1b**2
    mid = m1a * nu + m1c - 2.0 * m1b * lam
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.sqrt(np.maximum(mid**2 - 4.0 * detb * deta, 0.0))
        out = (mid - root) / (2.0 * detb)
    return np.where(detb > 0, out, np.nan)


def _m2_psd_grid(lam: np.ndarray, nu: np.ndarray, kappa: float) -> np.ndarray:
    lam, nu = np.broadcast_arrays(lam, nu)
    k = kappa
    m = np.zeros(lam.shape + (4, 4))
    a, b, c = -0.5 * k, -0.5 * k * lam, -0.5 * k * nu
    m[..., 0, 0] = 1.0
    m[..., 0, 1] = m[..., 1, 0] = lam
    m[..., 1, 1] = nu
    m[..., 0, 2] = m[..., 2, 0] = a
    m[..., 0, 3] = m[..., 3, 0] = b
    m[..., 1, 2] = m[..., 2, 1] = b
    m[..., 1, 3] = m[..., 3, 1] = c
    m[..., 2, 2] = 2.0 * k
    m[..., 2, 3] = m[..., 3, 2] = 2.0 * k * lam
    m[..., 3, 3] = 2.0 * k * nu
    return np.linalg.eigvalsh(m)[..., 0] >= -_PSD_TOL


def _masked_values(lam: np.ndarray, nu: np.ndarray, kappa: float) -> np.ndarray:
    lam, nu = np.meshgrid(lam, nu, indexing="ij")
    vals = _lambda_star_grid(lam, nu)
    ok = (lam**2 <= nu) & (nu - lam**2 > 0) & _m2_psd_grid(lam, nu, kappa)
    return np.where(ok & np.isfinite(vals), vals, -np.inf)


def optimize_lambda_star(
    kappa: float,
    coarse_step: float = 0.01,
    fine_step: float = 1e-5,
    lam_range: tuple[float, float] = (0.0, 1.0),
    nu_range: tuple[float, float] = (0.0, 2.0),
    zoom_points: int = 21,
) -> OptimumResult:
    """
    Maximise ``lambda_star`` over the feasible set.

    A coarse grid locates the maximiser; nested local grids of
    ``zoom_points**2`` points then shrink the step by 10 until it reaches
    ``fine_step``.  The feasible boundary is nonsmooth, so no gradients are
    used.

    Raises
    ------
    ValueError
        For ``kappa`` outside ``[0, 8]`` or an empty feasible set.
    """
    if not 0.0 <= kappa <= 8.0:
        raise ValueError(f"kappa must lie in [0, 8], got {kappa}")
    lam = np.arange(lam_range[0], lam_range[1] + 0.5 * coarse_step, coarse_step)
    nu = np.arange(nu_range[0], nu_range[1] + 0.5 * coarse_step, coarse_step)
    vals = _masked_values(lam, nu, kappa)
    if not np.isfinite(vals).any():
        raise ValueError(f"empty feasible set for kappa={kappa}")
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    best = (float(lam[i]), float(nu[j]), float(vals[i, j]))
    step = coarse_step
    half = zoom_points // 2
    while step > fine_step * (1 + 1e-9):
        step /= 10.0
        offs = np.arange(-half, half + 1) * step
        lam = np.clip(best[0] + offs, *lam_range)
        nu = np.clip(best[1] + offs, *nu_range)
        vals = _masked_values(lam, nu, kappa)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        if vals[i, j] >= best[2]:
            best = (float(lam[i]), float(nu[j]), float(vals[i, j]))
    return OptimumResult(*best)


def zeta(epsilon: float, lam: float, nu_param: float, kappa: float = 0.0) -> float:
    """
    Smallest generalized eigenvalue of
    ``(M1(lam, 1) + nu_param * epsilon / 2 * M0(lam, 1) + epsilon * M3, M0(lam, 1))``.

    The matrices are taken at grid value ``nu = 1``; ``nu_param`` is the
    separate free scalar of the perturbation.  ``kappa`` does not enter
    the 2x2 blocks and is accepted for signature uniformity.
    """
    ms = build_matrices(HypoParams(lam, 1.0, kappa))
    a = ms.m1 + 0.5 * nu_param * epsilon * ms.m0 + epsilon * ms.m3
    return generalized_min_eig(a, ms.m0)
