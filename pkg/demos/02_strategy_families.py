"""One controlled path per strategy family.

Impulse jumps, singular reflection and a linear regular control all keep
the deviation X = -X0 + controls of order eps.  The path identity checks
that the recorded controls reproduce X exactly.
"""

from __future__ import annotations

import numpy as np

from feedback_tracking import (
    CostSpec,
    ImpulseTriplet,
    IntervalDomain,
    LinearField,
    RegularPolicy,
    SingularTriplet,
    TargetModel,
    derive_exponents,
    eval_cost,
    renormalize,
    run_batch,
)

eps, T = 0.1, 1.0
model = TargetModel.constant([0.0], [[1.0]])
spec = CostSpec.quadratic(dim=1, D=1.0, Q=1.0, F=1.0, P=1.0)
sc = derive_exponents(1.0, spec)

families = {
    "impulse": (ImpulseTriplet(IntervalDomain(6 ** 0.25)), {"bridge": True}),
    "singular": (SingularTriplet(IntervalDomain(0.75 ** (1 / 3))), {"reflection": "mirror"}),
    "regular": (RegularPolicy(LinearField(1.0)), {}),
}

for name, (strategy, opts) in families.items():
    path = run_batch(strategy, model, sc, eps, T, [11], **opts)[0]
    cost = renormalize(eval_cost(path, spec, sc, eps), eps, sc)
    spread = np.abs(path.deviation).max() / eps
    print(f"{name:>8}: max|X|/eps = {spread:5.2f}  jumps = {path.n_jumps:4d}  "
          f"reflection = {path.reflection_dphi.sum():7.4f}  cost = {cost.total:7.4f}  "
          f"identity error = {path.path_identity_error():.1e}")
