"""Explicit solutions: the impulse matrix equation and the LQ Riccati problem.

In 2D with a = I and Sigma_D = diag(1, 4) the optimal band is the ellipsoid
{x^T B x < 2 sqrt(k/r)}, and Tr(aB) sqrt(rk) bounds every impulse strategy
from below.  The oracle cost of that ellipsoid should meet the bound.
"""

from __future__ import annotations

import numpy as np

from _paths import CONFIGS
from feedback_tracking import (
    EllipsoidDomain,
    ImpulseTriplet,
    impulse_lower_bound,
    limit_cost,
    load_scenario,
    solve_lq,
    solve_matrix_B,
)

a = np.eye(2)
SD = np.diag([1.0, 4.0])
sol = solve_matrix_B(a, SD)
print("B =\n", np.round(sol.B, 6))
print(f"residual {sol.residual:.1e}   Tr(aB) {sol.I_value:.6f}")

bound, domain = impulse_lower_bound(a, 1.0, 1.0, SD)
spec = load_scenario(CONFIGS / "impulse_2d_optimal.json").cost
est = limit_cost(a, ImpulseTriplet(EllipsoidDomain(domain)), spec, cells=200)
print(f"lower bound {bound:.5f}   oracle cost of the optimal ellipsoid {est.value:.5f}")

lq = solve_lq(1.0, 1.0, 1.0)
print(f"\nLQ: G {lq.G[0, 0]:.4f}  feedback {lq.feedback_matrix[0, 0]:.4f}")
for sigma in (0.5, 1.0, 2.0, 4.0):
    # feedback u = -sigma x gives variance a/(2 sigma)
    var = 1.0 / (2 * sigma)
    cost = var + sigma**2 * var
    print(f"feedback {sigma:3.1f}: cost {cost:.4f}   optimum Tr(aG) {lq.I_value:.4f}")
