"""Stationary occupation pairs: simulation against the Markov chain oracle.

For the reflected band the interior density is uniform and the boundary
mass is 1/(2L); for the impulse band the density is a tent and jumps
occur at rate 1/L^2.  Both estimates should satisfy the stationarity
identities, measured by the separability residual over polynomial test
functions.
"""

from __future__ import annotations

from feedback_tracking import (
    EpsilonScaling,
    ImpulseTriplet,
    IntervalDomain,
    SingularTriplet,
    TargetModel,
    empirical_occupation,
    markov_chain_oracle,
    run_batch,
    separability_residual,
)

L = 1.0
model = TargetModel.constant([0.0], [[1.0]])
sc = EpsilonScaling(1.0, 2.0)

cases = [
    ("singular", SingularTriplet(IntervalDomain(L)), {"reflection": "mirror"}, 1 / (2 * L)),
    ("impulse", ImpulseTriplet(IntervalDomain(L)), {"bridge": True}, 1 / L**2),
]
second = {"singular": L**2 / 3, "impulse": L**2 / 6}
for name, strategy, opts, boundary in cases:
    path = run_batch(strategy, model, sc, 1.0, 4000.0, [5], **opts)[0]
    emp = empirical_occupation(path, bins=40, bounds=(-L, L))
    orc = markov_chain_oracle(1.0, strategy, 400)
    print(f"{name}:")
    print(f"  boundary mass  simulation {emp.total_boundary_mass:.4f}  "
          f"oracle {orc.total_boundary_mass:.4f}  exact {boundary:.4f}")
    print(f"  E[x^2]         simulation {emp.moment(lambda x: x[:, 0] ** 2):.4f}  "
          f"oracle {orc.moment(lambda x: x[:, 0] ** 2):.4f}  exact {second[name]:.4f}")
    print(f"  separability   simulation {separability_residual(emp, 1.0):.2e}  "
          f"oracle {separability_residual(orc, 1.0):.2e}")

# refinement drives the oracle residual down
strategy = ImpulseTriplet(IntervalDomain(L))
for cells in (100, 200, 400, 800):
    r = separability_residual(markov_chain_oracle(1.0, strategy, cells), 1.0)
    print(f"oracle cells {cells:4d}: residual {r:.2e}")
