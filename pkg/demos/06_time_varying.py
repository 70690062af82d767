"""Time-dependent volatility: a ramp and a stochastic factor.

The limit of the renormalised cost is the time integral of the pointwise
limit, evaluated with the band that follows the current volatility.  For
the factor-driven model the pointwise limit is averaged over the factor's
Gaussian law.
"""

from __future__ import annotations

from _paths import CONFIGS
from feedback_tracking import load_scenario, run_sweep
from feedback_tracking.experiments import lower_bound, scenario_limit_value

for name in ("impulse_1d_ramp", "impulse_1d_factor"):
    scenario = load_scenario(CONFIGS / f"{name}.json")
    value, err, terms = scenario_limit_value(scenario, "closed_form")
    print(f"{name}: integrated limit {value:.5f}  lower bound {lower_bound(scenario):.5f}")
    res = run_sweep(scenario, with_limit=False)
    for row in res.rows:
        print(f"   eps {row.eps:5.3f}: {row.mean:.5f} +/- {row.stderr:.5f}")
