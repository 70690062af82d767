"""How much a mis-sized band costs.

The limit cost of a symmetric impulse band of half width L is
L^2/6 + 1/L^2; the ratio to the optimum is flat near L* = 6**(1/4) and
grows quickly away from it.  The shipped scenarios measure the doubled
band and an LQ feedback detuned by a factor 2.
"""

from __future__ import annotations

import numpy as np

from _paths import CONFIGS
from feedback_tracking import load_scenario, suboptimality_report

L_star = 6 ** 0.25
c_star = np.sqrt(2 / 3)
for f in (0.5, 0.75, 1.0, 1.25, 1.5, 2.0):
    L = f * L_star
    print(f"L = {f:4.2f} L*: ratio {(L**2 / 6 + 1 / L**2) / c_star:.4f}")

for name in ("impulse_1d_optimal", "impulse_1d_doubled", "regular_1d_lq_detuned"):
    rep = suboptimality_report(load_scenario(CONFIGS / f"{name}.json"))
    print(f"{name:>24}: limit {rep.limit:.5f}  bound {rep.lower_bound:.5f}  ratio {rep.ratio:.4f}")
