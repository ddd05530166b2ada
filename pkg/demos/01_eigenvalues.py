"""
Eigenvalues of the coupling matrix
==================================

The smallest eigenvalue of M2 at (lambda, nu) = (1/2, 1) stays nonnegative
for kappa in [0, 8], and the rate lambda_star is 1/2 for every p.
"""

import numpy as np

from hypoflow.entropy_core import PhiFamily
from hypoflow.hypo_algebra import (
    HypoParams,
    build_matrices,
    eigenvalues_m2_closed_form,
    eigenvalues_numeric,
    optimize_lambda_star,
)

# closed form against the Jacobi solver on a coarse kappa scan
for kappa in np.linspace(0.0, 8.0, 9):
    closed = eigenvalues_m2_closed_form(kappa)
    numeric = eigenvalues_numeric(build_matrices(HypoParams(0.5, 1.0, kappa)).m2)
    gap = np.max(np.abs(np.sort(list(closed.values())) - numeric))
    print(f"kappa={kappa:4.1f}  l1={closed['l1']:.6f}  l4={closed['l4']:.6f}  |closed-numeric|={gap:.1e}")

# every p in [1, 2] maps to a kappa in [0, 8]
for p in (1.0, 1.5, 2.0):
    fam = PhiFamily(p)
    res = optimize_lambda_star(fam.kappa)
    print(f"p={p}: kappa={fam.kappa:.3f}  lambda_star={res.value:.6f} at lambda={res.lambda_opt:.4f}, nu={res.nu_opt:.4f}")
