"""Stationary pairs of the unit-scale controlled diffusion and limit costs.

A stationary pair is the long-run occupation measure ``pi`` of the state
together with a boundary measure: ``nu`` (jumps per unit time, impulse
strategies) or ``rho`` (local time per unit time, singular strategies).
The limit of the renormalised cost is the integral of the cost densities
against the pair:

    c = int (r D + l Q(U)) dpi + int (k F(xi) + h P(xi)) dnu     (impulse)
    c = int (r D + l Q(U)) dpi + int h P(gamma) drho             (singular)
    c = int (r D + l Q(U)) dpi                                   (regular)

Pairs come from long simulations (:func:`empirical_occupation`) or from
the Markov chain approximation (:func:`markov_chain_oracle`); both are
checked against the adjoint stationarity constraint by
:func:`separability_residual`.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from .closed_form import (
    impulse_interval_cost,
    ou_stationary_covariance,
    singular_interval_cost,
    solve_matrix_B,
)
from .cost_model import (
    ConstantFixedCost,
    CostBreakdown,
    CostSpec,
    EpsilonScaling,
    QuadraticCost,
)
from .oracle import (
    OracleConvergenceError,
    build_chain,
    stationary_vector,
    uniqueness_probe,
)
from .sde_engine import FactorDiffusion, TargetModel

Array = np.ndarray

__all__ = [
    "OccupationPair",
    "TestFunction",
    "TestFunctionSet",
    "LimitEstimate",
    "ConsistencyAlarm",
    "OracleConvergenceError",
    "empirical_occupation",
    "total_variation",
    "interval_masses",
    "separability_residual",
    "separability_residuals",
    "markov_chain_oracle",
    "pair_cost",
    "closed_form_limit",
    "limit_cost",
    "integrate_limit_over_time",
    "scenario_limit",
]


@dataclass
class OccupationPair:
    """Interior measure ``pi`` and boundary intensity ``nu`` / ``rho`` as weighted atoms.

    ``boundary_directions`` holds the jump vector ``xi(x)`` at each impulse
    atom and the unit (l1) reflection direction ``gamma`` at each singular
    atom.
    """

    kind: str
    interior_points: Array
    interior_mass: Array
    boundary_points: Array
    boundary_mass: Array
    boundary_directions: Array
    edges: list[Array] | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        total = float(np.sum(self.interior_mass))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"interior mass sums to {total}, expected 1")
        if np.any(self.boundary_mass < 0) or not np.all(np.isfinite(self.boundary_mass)):
            raise ValueError("boundary mass must be finite and nonnegative")

    @property
    def dim(self) -> int:
        return self.interior_points.shape[1]

    @property
    def total_boundary_mass(self) -> float:
        return float(np.sum(self.boundary_mass))

    def moment(self, fn: Callable[[Array], Array]) -> float:
        """``int fn dpi``."""
        return float(np.sum(self.interior_mass * fn(self.interior_points)))

    def binned_boundary(self, n_bins: int = 16) -> tuple[Array, Array]:
        """Boundary mass aggregated by side (d = 1) or by polar angle (d = 2)."""
        pts = self.boundary_points
        if self.dim == 1:
            labels = (pts[:, 0] > 0).astype(int)
            n_bins = 2
        else:
            ang = np.arctan2(pts[:, 1], pts[:, 0])
            labels = np.minimum(((ang + np.pi) / (2 * np.pi) * n_bins).astype(int), n_bins - 1)
        mass = np.bincount(labels, weights=self.boundary_mass, minlength=n_bins)
        centre = np.zeros((n_bins, self.dim))
        for j in range(self.dim):
            s = np.bincount(labels, weights=self.boundary_mass * pts[:, j], minlength=n_bins)
            centre[:, j] = np.divide(s, mass, out=np.zeros(n_bins), where=mass > 0)
        return centre, mass

    def to_csv(self, fh) -> None:
        """``part, x_i..., mass`` rows; boundary rows are binned."""
        d = self.dim
        w = csv.writer(fh)
        w.writerow(["part"] + [f"x{i}" for i in range(d)] + ["mass"])
        for p, m in zip(self.interior_points, self.interior_mass):
            w.writerow(["interior"] + p.tolist() + [float(m)])
        for p, m in zip(*self.binned_boundary()):
            w.writerow(["boundary"] + p.tolist() + [float(m)])


# ---------------------------------------------------------------------------
# test functions


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def _smoothstep_d1(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 30.0 * u**2 * (1.0 - u) ** 2, 0.0)


def _smoothstep_d2(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u), 0.0)


@dataclass
class TestFunction:
    """``f``, its gradient and Hessian, vectorised over rows of ``(n, d)`` arrays."""

    name: str
    value: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    hess: Callable[[Array], Array]

    __test__ = False

    def __call__(self, x):
        return self.value(np.atleast_2d(x))


def _monomial(k: tuple[int, ...], radius: float) -> TestFunction:
    k = np.asarray(k)
    d = len(k)

    def powers(x, e):
        e = np.asarray(e)
        out = np.ones(len(x))
        for i in range(d):
            if e[i] < 0:
                return np.zeros(len(x))
            out = out * x[:, i] ** e[i]
        return out

    def p(x):
        return powers(x, k)

    def p_grad(x):
        g = np.zeros_like(x)
        for i in range(d):
            if k[i]:
                e = k.copy()
                e[i] -= 1
                g[:, i] = k[i] * powers(x, e)
        return g

    def p_hess(x):
        H = np.zeros((len(x), d, d))
        for i in range(d):
            for j in range(d):
                e = k.copy()
                c = e[i]
                e[i] -= 1
                c *= e[j]
                e[j] -= 1
                if c:
                    H[:, i, j] = c * powers(x, e)
        return H

    def cutoff(x):
        r = np.linalg.norm(x, axis=1)
        s = r / radius
        chi = 1.0 - _smoothstep(s - 1.0)
        d1 = -_smoothstep_d1(s - 1.0) / radius
        d2 = -_smoothstep_d2(s - 1.0) / radius**2
        rs = np.where(r > 0, r, 1.0)
        unit = x / rs[:, None]
        g = d1[:, None] * unit
        outer = np.einsum("ni,nj->nij", unit, unit)
        H = d2[:, None, None] * outer + (d1 / rs)[:, None, None] * (np.eye(d) - outer)
        return chi, g, H

    def value(x):
        return p(x) * cutoff(x)[0]

    def grad(x):
        chi, g, _ = cutoff(x)
        return chi[:, None] * p_grad(x) + p(x)[:, None] * g

    def hess(x):
        chi, g, H = cutoff(x)
        pg = p_grad(x)
        return (
            chi[:, None, None] * p_hess(x)
            + np.einsum("ni,nj->nij", pg, g)
            + np.einsum("ni,nj->nij", g, pg)
            + p(x)[:, None, None] * H
        )

    name = "*".join(f"x{i}^{e}" for i, e in enumerate(k) if e) or "1"
    return TestFunction(name, value, grad, hess)


@dataclass
class TestFunctionSet:
    functions: list[TestFunction]

    __test__ = False

    def __iter__(self):
        return iter(self.functions)

    def __len__(self):
        return len(self.functions)

    @classmethod
    def polynomial(cls, dim: int, max_degree: int = 4, radius: float = 10.0) -> "TestFunctionSet":
        """Monomials of degree ``1..max_degree`` times a C^2 cutoff.

        The cutoff equals 1 on the ball of the given radius and vanishes
        outside twice that radius.
        """
        fns = []
        for k in itertools.product(range(max_degree + 1), repeat=dim):
            if 1 <= sum(k) <= max_degree:
                fns.append(_monomial(k, radius))
        fns.sort(key=lambda f: f.name)
        return cls(fns)


# ---------------------------------------------------------------------------
# empirical occupation measures


def _rescaled_segments(paths, burn_in):
    ys, ws, jumps, jsz, refl, rdir, rphi = [], [], [], [], [], [], []
    total = 0.0
    for p in paths:
        n = p.grid.n_steps
        start = int(np.ceil(burn_in * n))
        if start >= n:
            continue
        ts = p.time_scale
        t0 = p.grid.times[start]
        ys.append(p.rescaled()[start:n])
        ws.append(np.full(n - start, p.grid.dt / ts))
        total += (p.grid.t_end - t0) / ts
        jm = p.jump_times >= t0
        jumps.append(p.jump_points[jm] / p.length_scale)
        jsz.append(p.jump_sizes[jm] / p.length_scale)
        rm = p.reflection_steps > start
        refl.append(p.reflection_points[rm] / p.length_scale)
        rdir.append(p.reflection_directions[rm])
        rphi.append(p.reflection_dphi[rm] / p.length_scale)
    if total == 0.0:
        raise ValueError("no path left after burn-in")
    return ys, ws, total, jumps, jsz, refl, rdir, rphi


def empirical_occupation(paths, burn_in: float = 0.1, bins=40, bounds=None) -> OccupationPair:
    """Occupation pair of one path or a list of paths, in unit-scale coordinates.

    Time is measured in intrinsic units ``eps**(2 beta)`` and space in
    ``eps**beta``, so paths at any ``eps`` are comparable.  The interior
    part is a histogram (time fraction per bin); boundary atoms are the
    recorded jumps (one unit each) or reflection increments ``dphi``, all
    divided by the total time after burn-in.

    Parameters
    ----------
    burn_in
        Fraction of each path discarded at the start.
    bins
        Bins per axis.
    bounds
        ``(lo, hi)`` per axis; defaults to the data range.
    """
    if not isinstance(paths, (list, tuple)):
        paths = [paths]
    if not 0.0 <= burn_in < 1.0:
        raise ValueError("burn_in must lie in [0, 1)")
    ys, ws, total, jumps, jsz, refl, rdir, rphi = _rescaled_segments(paths, burn_in)
    y = np.concatenate(ys)
    w = np.concatenate(ws)
    d = y.shape[1]
    if bounds is None:
        bounds = [(float(y[:, i].min()), float(y[:, i].max()) + 1e-12) for i in range(d)]
    elif d == 1 and np.ndim(bounds) == 1:
        bounds = [tuple(bounds)]
    hist, edges = np.histogramdd(y, bins=bins, range=bounds, weights=w)
    mass = hist.ravel() / w.sum()
    centres = np.meshgrid(*[0.5 * (e[1:] + e[:-1]) for e in edges], indexing="ij")
    pts = np.stack([c.ravel() for c in centres], axis=1)
    family = paths[0].family
    if family == "impulse":
        bp = np.concatenate(jumps)
        bd = np.concatenate(jsz)
        bm = np.full(len(bp), 1.0 / total)
    elif family == "singular":
        bp = np.concatenate(refl)
        bd = np.concatenate(rdir)
        bm = np.concatenate(rphi) / total
    else:
        bp = np.zeros((0, d))
        bd = np.zeros((0, d))
        bm = np.zeros(0)
    pair = OccupationPair(
        family, pts, mass / mass.sum(), bp, bm, bd, list(edges), {"total_time": total}
    )
    pair.info["samples"] = y
    pair.info["weights"] = w / w.sum()
    return pair


def interval_masses(edges: Array, cdf: Callable[[Array], Array]) -> Array:
    """Reference masses of the bins ``edges`` under a distribution with the given cdf."""
    F = cdf(np.asarray(edges, dtype=float))
    m = np.diff(F)
    return m / m.sum()


def total_variation(p: Array, q: Array) -> float:
    """``1/2 sum |p - q|`` of two probability vectors on the same bins."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# ---------------------------------------------------------------------------
# separability


def _jump_vector(jump, pts):
    if jump is None:
        return None
    if hasattr(jump, "alpha_at"):
        return -jump.alpha_at(0.0) * pts
    return np.asarray(jump(pts), dtype=float)


def separability_residuals(pair: OccupationPair, a, speed=None, jump=None, tests=None) -> Array:
    """Adjoint constraint value for every test function.

    ``int (1/2 a : grad^2 f + U . grad f) dpi`` plus
    ``int (f(x + xi(x)) - f(x)) dnu`` for impulse pairs or
    ``int gamma . grad f drho`` for singular pairs.  ``jump`` overrides the
    jump vectors stored on the pair.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if tests is None:
        tests = TestFunctionSet.polynomial(pair.dim)
    x = pair.interior_points
    m = pair.interior_mass
    live = m > 0
    x, m = x[live], m[live]
    U = np.zeros_like(x) if speed is None or getattr(speed, "is_zero", False) else speed(0.0, x)
    bp, bm = pair.boundary_points, pair.boundary_mass
    if pair.kind == "impulse":
        xi = _jump_vector(jump, bp)
        if xi is None:
            xi = pair.boundary_directions
    out = []
    for f in tests:
        gen = 0.5 * np.einsum("ij,nij->n", a, f.hess(x)) + np.sum(U * f.grad(x), axis=1)
        val = float(np.sum(m * gen))
        if len(bp):
            if pair.kind == "impulse":
                val += float(np.sum(bm * (f.value(bp + xi) - f.value(bp))))
            elif pair.kind == "singular":
                val += float(np.sum(bm * np.sum(pair.boundary_directions * f.grad(bp), axis=1)))
        out.append(val)
    return np.asarray(out)


def separability_residual(pair: OccupationPair, a, speed=None, jump=None, tests=None) -> float:
    """Largest absolute adjoint-constraint value over the test set."""
    return float(np.max(np.abs(separability_residuals(pair, a, speed, jump, tests))))


# ---------------------------------------------------------------------------
# oracle


def markov_chain_oracle(
    a,
    strategy,
    cells: int = 400,
    *,
    t: float = 0.0,
    tol: float = 1e-10,
    method: str = "inverse",
    max_iter: int | None = None,
    probe: bool | str = False,
    seed: int = 0,
    truncation: float = 6.0,
) -> OccupationPair:
    """Stationary pair of the lattice approximation of the strategy at time ``t``.

    ``cells`` lattice cells span the widest extent of the domain after
    whitening by ``a^-1/2`` (the truncated box for regular policies).  With
    ``probe=True`` the stationary vector is recomputed from five random
    starts and the largest spread is stored in ``info["uniqueness_spread"]``;
    ``probe="power"`` uses plain power iteration for those restarts.
    """
    frozen = strategy.at(t)
    chain = build_chain(a, frozen, cells, truncation)
    rng = np.random.default_rng(seed)
    start = rng.random(chain.n_states)
    pi, iters = stationary_vector(chain.Q, start, tol=tol, method=method, max_iter=max_iter)
    d = chain.nodes_z.shape[1]
    bm = pi[chain.atom_rows] * chain.atom_rates
    info = {
        "h": chain.h,
        "cells": cells,
        "n_states": chain.n_states,
        "iterations": iters,
        "method": method,
        "generator_residual": float(np.abs(chain.Q.T @ pi).sum() / chain.max_rate()),
    }
    if probe:
        probe_method = "power" if probe == "power" else "inverse"
        info["uniqueness_spread"] = uniqueness_probe(chain.Q, 5, seed, method=probe_method)
    return OccupationPair(
        frozen.family,
        chain.nodes,
        pi,
        chain.atom_points.reshape(-1, d),
        bm,
        chain.atom_dirs.reshape(-1, d),
        None,
        info,
    )


# ---------------------------------------------------------------------------
# limit costs


class ConsistencyAlarm(RuntimeError):
    """Two limit estimators disagree beyond their combined error bars."""

    def __init__(self, message: str, estimates: dict):
        super().__init__(message)
        self.estimates = estimates


@dataclass
class LimitEstimate:
    value: float
    stderr: float
    terms: CostBreakdown
    estimator: str
    pair: OccupationPair | None = None
    details: dict = field(default_factory=dict)


def pair_cost(pair: OccupationPair, strategy, spec: CostSpec, t: float = 0.0) -> CostBreakdown:
    """Integrate the cost densities at time ``t`` against a stationary pair."""
    w = spec.weights_at(t)
    x, m = pair.interior_points, pair.interior_mass
    dev = w["r"] * float(np.sum(m * spec.D(x)))
    reg = 0.0
    speed = getattr(strategy, "speed", None)
    if speed is not None and not getattr(speed, "is_zero", False):
        reg = w["l"] * float(np.sum(m * spec.Q(speed(t, x))))
    fixed = prop = 0.0
    if len(pair.boundary_mass):
        bm, bd = pair.boundary_mass, pair.boundary_directions
        if pair.kind == "impulse":
            fixed = w["k"] * float(np.sum(bm * spec.F(bd)))
            prop = w["h"] * float(np.sum(bm * spec.P(bd)))
        elif pair.kind == "singular":
            prop = w["h"] * float(np.sum(bm * spec.P(bd)))
    return CostBreakdown(dev, reg, fixed, prop)


def _quadratic_matrix(cost, name):
    if not isinstance(cost, QuadraticCost):
        raise ValueError(f"closed form needs a quadratic {name}")
    return cost.matrix


def closed_form_limit(a, strategy, spec: CostSpec, t: float = 0.0) -> CostBreakdown:
    """Limit cost from explicit formulas, when one applies.

    Covered: impulse and singular strategies on an interval with no drift
    (impulse with recentring jumps), impulse strategies on the optimal
    ellipsoid of the quadratic problem, and linear regular feedback.
    Raises ``ValueError`` otherwise.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    s = strategy.at(t)
    w = spec.weights_at(t)
    Dm = _quadratic_matrix(spec.D, "D")
    d = a.shape[0]
    if s.family == "regular":
        S = s.speed.matrix_at(0.0)
        C = ou_stationary_covariance(S, a)
        Qm = _quadratic_matrix(spec.Q, "Q")
        return CostBreakdown(
            w["r"] * float(np.trace(Dm @ C)), w["l"] * float(np.trace(S.T @ Qm @ S @ C))
        )
    if not getattr(s.speed, "is_zero", False):
        raise ValueError("no closed form with a drift inside the domain")
    A = s.domain.matrix_at(0.0)
    if d == 1:
        L = float(1.0 / np.sqrt(A[0, 0]))
        av = float(a[0, 0])
        if s.family == "impulse":
            if s.jump.alpha_at(0.0) != 1.0:
                raise ValueError("closed form needs recentring jumps")
            c = impulse_interval_cost(L, av, w["r"], 1.0, float(Dm[0, 0]))
            jumps = np.array([[-L], [L]])
            per_jump_F = float(np.mean(spec.F(jumps)))
            per_jump_P = float(np.mean(spec.P(jumps)))
            rate = c["fixed"]
            return CostBreakdown(c["deviation"], 0.0, w["k"] * per_jump_F * rate, w["h"] * per_jump_P * rate)
        c = singular_interval_cost(L, av, w["r"], 1.0, float(Dm[0, 0]))
        per_dphi = float(np.mean(spec.P(np.array([[-1.0], [1.0]]))))
        return CostBreakdown(c["deviation"], 0.0, 0.0, w["h"] * per_dphi * c["proportional"])
    if s.family == "impulse" and s.jump.alpha_at(0.0) == 1.0 and isinstance(spec.F, ConstantFixedCost):
        P0 = spec.P(np.eye(d))
        if np.any(P0 != 0):
            raise ValueError("closed form needs P = 0")
        k_eff = w["k"] * spec.F.value
        sol = solve_matrix_B(a, Dm, w["r"], k_eff)
        if np.allclose(sol.optimal_domain_matrix, A, rtol=1e-8, atol=1e-12):
            half = 0.5 * sol.I_value * np.sqrt(w["r"] * k_eff)
            return CostBreakdown(half, 0.0, half, 0.0)
    raise ValueError("no closed form for this strategy")


def _simulation_limit(a, strategy, spec, t, horizon, replications, n_sub, burn_in, seed, **kw):
    from .strategies import run_batch

    a = np.atleast_2d(np.asarray(a, dtype=float))
    d = a.shape[0]
    frozen = strategy.at(t)
    model = TargetModel.constant(np.zeros(d), a)
    scaling = EpsilonScaling(1.0, spec.D.degree, spec.Q.degree)
    seeds = np.random.SeedSequence(seed).generate_state(replications)
    paths = run_batch(frozen, model, scaling, 1.0, horizon, seeds, n_sub=n_sub, **kw)
    w = spec.weights_at(t)
    vals = []
    for p in paths:
        n = p.grid.n_steps
        i0 = int(np.ceil(burn_in * n))
        t0 = p.grid.times[i0]
        span = p.grid.t_end - t0
        x = p.deviation[i0:n]
        dev = w["r"] * float(np.mean(spec.D(x))) * (n - i0) * p.grid.dt / span
        reg = 0.0
        if np.any(p.controls):
            reg = w["l"] * float(np.sum(spec.Q(p.controls[i0:n]))) * p.grid.dt / span
        fixed = prop = 0.0
        jm = p.jump_times >= t0
        if jm.any():
            fixed = w["k"] * float(np.sum(spec.F(p.jump_sizes[jm]))) / span
            prop = w["h"] * float(np.sum(spec.P(p.jump_sizes[jm]))) / span
        rm = p.reflection_steps > i0
        if rm.any():
            prop += w["h"] * float(
                np.sum(spec.P(p.reflection_directions[rm]) * p.reflection_dphi[rm])
            ) / span
        vals.append((dev, reg, fixed, prop))
    vals = np.asarray(vals)
    mean = vals.mean(axis=0)
    totals = vals.sum(axis=1)
    se = float(totals.std(ddof=1) / np.sqrt(len(totals))) if len(totals) > 1 else float("nan")
    term_se = vals.std(axis=0, ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else np.full(4, np.nan)
    return LimitEstimate(
        float(totals.mean()),
        se,
        CostBreakdown(*mean),
        "simulation",
        None,
        {"term_stderr": term_se.tolist(), "replications": replications, "horizon": horizon},
    )


def _oracle_limit(a, strategy, spec, t, cells, error_estimate, **kw):
    pair = markov_chain_oracle(a, strategy, cells, t=t, **kw)
    terms = pair_cost(pair, strategy.at(t), spec, t)
    err = 0.0
    if error_estimate:
        coarse = markov_chain_oracle(a, strategy, max(20, cells // 2), t=t, **kw)
        err = abs(pair_cost(coarse, strategy.at(t), spec, t).total - terms.total)
    return LimitEstimate(terms.total, err, terms, "oracle", pair, {"cells": cells})


def limit_cost(
    a,
    strategy,
    spec: CostSpec,
    t: float = 0.0,
    estimator: str = "oracle",
    *,
    cells: int = 400,
    error_estimate: bool = True,
    sim_horizon: float = 2000.0,
    replications: int = 16,
    n_sub: int = 100,
    burn_in: float = 0.1,
    seed: int = 0,
    sim_options: dict | None = None,
    oracle_options: dict | None = None,
) -> LimitEstimate:
    """Limit ``c`` of the renormalised cost rate at time ``t``, split by term.

    Parameters
    ----------
    estimator
        ``"oracle"`` (Markov chain approximation, error = change under
        halving the resolution), ``"simulation"`` (long unit-scale runs,
        error = standard error over replications), ``"closed_form"`` or
        ``"both"`` (oracle and simulation, raising
        :class:`ConsistencyAlarm` when they differ by more than three
        combined error bars).
    sim_horizon
        Simulation length in intrinsic time units.
    """
    sim_options = sim_options or {}
    oracle_options = oracle_options or {}
    if estimator == "closed_form":
        terms = closed_form_limit(a, strategy, spec, t)
        return LimitEstimate(terms.total, 0.0, terms, "closed_form")
    if estimator == "oracle":
        return _oracle_limit(a, strategy, spec, t, cells, error_estimate, **oracle_options)
    if estimator == "simulation":
        return _simulation_limit(
            a, strategy, spec, t, sim_horizon, replications, n_sub, burn_in, seed, **sim_options
        )
    if estimator == "both":
        orc = _oracle_limit(a, strategy, spec, t, cells, True, **oracle_options)
        sim = _simulation_limit(
            a, strategy, spec, t, sim_horizon, replications, n_sub, burn_in, seed, **sim_options
        )
        band = 3.0 * (sim.stderr + orc.stderr)
        gap = abs(orc.value - sim.value)
        orc.details["simulation"] = sim
        orc.details["agreement"] = {"gap": gap, "band": band}
        if gap > band:
            raise ConsistencyAlarm(
                f"oracle {orc.value:.6g} and simulation {sim.value:.6g} differ by {gap:.3g} > {band:.3g}",
                {"oracle": orc, "simulation": sim},
            )
        return orc
    raise ValueError(f"unknown estimator {estimator!r}")


def integrate_limit_over_time(limit_at, horizon: float, n_time_points: int = 11) -> tuple[float, float]:
    """Trapezoid rule for ``int_0^T c_t dt`` with ``limit_at(t)`` giving ``c_t``.

    ``limit_at`` may return a number or a :class:`LimitEstimate`; the error
    returned integrates the pointwise error bars the same way.
    """
    if horizon == 0:
        return 0.0, 0.0
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if n_time_points < 2:
        raise ValueError("need at least two quadrature nodes")
    ts = np.linspace(0.0, horizon, n_time_points)
    vals, errs = [], []
    for t in ts:
        c = limit_at(float(t))
        if isinstance(c, LimitEstimate):
            vals.append(c.value)
            errs.append(c.stderr if np.isfinite(c.stderr) else 0.0)
        else:
            vals.append(float(c))
            errs.append(0.0)
    return float(trapezoid(vals, ts)), float(trapezoid(errs, ts))


def _is_constant_in_time(model: TargetModel, strategy, spec: CostSpec) -> bool:
    if isinstance(model.diffusion, FactorDiffusion) or not model.diffusion.is_constant:
        return False
    if not all(getattr(spec, w).is_constant for w in ("r", "l", "k", "h")):
        return False
    dom = getattr(strategy, "domain", None)
    if dom is not None and not dom.is_constant:
        return False
    jump = getattr(strategy, "jump", None)
    if jump is not None and not jump.alpha.is_constant:
        return False
    sp = strategy.speed
    if not getattr(sp, "is_zero", False) and not sp.sigma.is_constant:
        return False
    return True


def _factor_nodes(model: TargetModel, t: float, n_nodes: int):
    """Gauss-Hermite nodes and weights for the law of the factor at time ``t``."""
    f = model.factor
    decay = np.exp(-f.kappa * t)
    mean = f.z0 * decay
    if f.kappa > 0:
        var = f.eta**2 * (1.0 - decay**2) / (2.0 * f.kappa)
    else:
        var = f.eta**2 * t
    if var <= 0:
        return np.array([mean]), np.array([1.0])
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    return mean + np.sqrt(var) * x, w / w.sum()


def scenario_limit(
    model: TargetModel,
    strategy,
    spec: CostSpec,
    horizon: float,
    n_time_points: int = 11,
    estimator: str = "oracle",
    factor_nodes: int = 9,
    **options,
) -> tuple[float, float, CostBreakdown]:
    """``E int_0^T c(a_t, strategy_t; weights_t) dt`` and its per-term split.

    Constant scenarios need a single evaluation.  For factor-driven
    diffusions the expectation over the factor's Gaussian marginal at each
    node is taken with Gauss-Hermite quadrature.
    """
    if horizon == 0:
        return 0.0, 0.0, CostBreakdown()

    def at(t: float) -> LimitEstimate:
        if model.factor is None:
            return limit_cost(model.diffusion_at(t), strategy, spec, t, estimator, **options)
        zs, ws = _factor_nodes(model, t, factor_nodes)
        acc = CostBreakdown()
        err = 0.0
        for z, wz in zip(zs, ws):
            a = model.coefficients(np.asarray(t), np.asarray(z))[1]
            est = limit_cost(a, strategy, spec, t, estimator, **options)
            acc = acc + est.terms.scaled(wz)
            err += wz * (est.stderr if np.isfinite(est.stderr) else 0.0)
        return LimitEstimate(acc.total, err, acc, estimator)

    if _is_constant_in_time(model, strategy, spec) and model.factor is None:
        est = at(0.0)
        return horizon * est.value, horizon * est.stderr, est.terms.scaled(horizon)
    cache: dict[float, LimitEstimate] = {}

    def cached(t):
        if t not in cache:
            cache[t] = at(t)
        return cache[t]

    value, err = integrate_limit_over_time(cached, horizon, n_time_points)
    ts = sorted(cache)
    terms = [trapezoid([cache[t].terms.terms()[j] for t in ts], ts) for j in range(4)]
    return value, err, CostBreakdown(*map(float, terms))
