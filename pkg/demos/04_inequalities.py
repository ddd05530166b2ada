"""
Sampled functional inequalities
===============================

Random positive fields are pushed through the static checks.  The margins
should never drop below zero; the linear witness 1 + eps x shows which
constants are sharp.
"""

from hypoflow.entropy_core import PhiFamily, ScalarField, build_grid
from hypoflow.inequality_suite import (
    check_interpolation_family,
    check_two_norm_interpolation,
    run_suite,
)

for rep in run_suite(["ck", "tensorization", "gap", "holley_stroock"], seeds=40, p_list=(1.0, 1.5, 2.0)):
    print(f"{rep.check:15s} p={rep.p_or_q:<5} min margin {rep.min_margin: .3e}  violations {rep.violations}")

grid = build_grid(1, 8.0, 257)
witness = ScalarField.from_function(grid, lambda x: 1.0 + 1e-3 * x)
for q in (1.0, 1.5, 2.0):
    print(f"q={q}: interpolation ratio at the witness {check_interpolation_family(witness, q).ratio:.6f}")
two = check_two_norm_interpolation(witness, 1.5)
print(f"two-norm form at q=1.5: c=2 ratio {two['ratio_c2']:.4f}, c=1 ratio {two['ratio_c1']:.4f}")
