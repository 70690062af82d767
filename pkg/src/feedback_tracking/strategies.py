"""Feedback tracking strategies and the controlled deviation process.

Three families are simulated at small-cost level ``eps``:

* impulse ``(U, G, xi)``: drift ``U`` inside ``G``, jump ``xi`` on exit;
* singular ``(U, G, Gamma)``: drift ``U`` inside ``G``, reflection along
  ``Gamma`` on the boundary;
* regular ``U``: feedback speed only.

Under the scaling ``U_eps(x) = eps**-beta U(eps**-beta x)``,
``G_eps = eps**beta G`` and ``xi_eps(x) = eps**beta xi(eps**-beta x)`` the
deviation lives on the length scale ``eps**beta`` and the time scale
``eps**(2 beta)``; the internal step is ``eps**(2 beta) / n_sub``.

The deviation satisfies, on the grid,

    X_t = -X°_t + int_0^t u_s ds + sum_j xi_j  (+ int gamma dphi)

exactly up to floating point: a jump detected inside a step is applied at
the boundary point where the segment leaves the domain, and the remainder of
the step's increment is carried past the jump.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .cost_model import EpsilonScaling
from .domains import (
    EllipsoidDomain,
    LinearField,
    ProportionalJump,
    QuadraticPotential,
    ZeroField,
    boundary_direction,
    matvec,
    project_to_boundary,
    quad,
    sample_boundary,
    segment_exit_fraction,
)
from .sde_engine import TargetModel, TargetPath, TimeGrid, child_seed, simulate_target

Array = np.ndarray

__all__ = [
    "SimulationError",
    "AdmissibilityError",
    "ImpulseTriplet",
    "SingularTriplet",
    "RegularPolicy",
    "ControlledPath",
    "AdmissibilityReport",
    "run_impulse",
    "run_singular",
    "run_regular",
    "run_batch",
    "check_admissibility_impulse",
    "check_admissibility_singular",
    "check_lyapunov_regular",
    "jump_count_diagnostic",
    "JumpRate",
]

_MAX_JUMPS_PER_STEP = 64
_FINITE_CHECK_EVERY = 1024


class SimulationError(RuntimeError):
    """The controlled path could not be continued (divergence, bad rule)."""


class AdmissibilityError(ValueError):
    """A strategy failed its potential / Lyapunov check."""

    def __init__(self, report: "AdmissibilityReport"):
        super().__init__(f"{report.name} failed: statistic={report.statistic:.3e}")
        self.report = report


@dataclass
class ImpulseTriplet:
    domain: EllipsoidDomain
    jump: ProportionalJump = field(default_factory=ProportionalJump)
    speed: ZeroField | LinearField = field(default_factory=ZeroField)
    potential: QuadraticPotential = field(default_factory=QuadraticPotential)

    family = "impulse"

    @property
    def dim(self) -> int:
        return self.domain.dim

    def at(self, t: float) -> "ImpulseTriplet":
        return ImpulseTriplet(self.domain.at(t), self.jump.at(t), self.speed.at(t), self.potential)


@dataclass
class SingularTriplet:
    domain: EllipsoidDomain
    direction: str = "radial"
    speed: ZeroField | LinearField = field(default_factory=ZeroField)
    potential: QuadraticPotential = field(default_factory=QuadraticPotential)

    family = "singular"

    @property
    def dim(self) -> int:
        return self.domain.dim

    def at(self, t: float) -> "SingularTriplet":
        return SingularTriplet(self.domain.at(t), self.direction, self.speed.at(t), self.potential)


@dataclass
class RegularPolicy:
    speed: LinearField | ZeroField
    potential: QuadraticPotential = field(default_factory=QuadraticPotential)
    theta: float = 1.0
    Theta: float = 1.0
    dimension: int | None = None

    family = "regular"

    @property
    def dim(self) -> int:
        if self.dimension is not None:
            return self.dimension
        return self.speed.matrix_at(0.0).shape[0]

    def at(self, t: float) -> "RegularPolicy":
        return RegularPolicy(self.speed.at(t), self.potential, self.theta, self.Theta, self.dimension)


@dataclass
class ControlledPath:
    """One simulated controlled deviation path at level ``eps``.

    Interventions are stored as flat arrays; ``*_steps`` holds the index of
    the first grid point at which an intervention is already included.
    """

    grid: TimeGrid
    deviation: Array
    target: TargetPath
    controls: Array
    eps: float
    beta: float
    family: str
    jump_times: Array
    jump_steps: Array
    jump_points: Array
    jump_sizes: Array
    reflection_times: Array
    reflection_steps: Array
    reflection_points: Array
    reflection_directions: Array
    reflection_dphi: Array

    @property
    def dim(self) -> int:
        return self.deviation.shape[1]

    @property
    def length_scale(self) -> float:
        return self.eps**self.beta

    @property
    def time_scale(self) -> float:
        return self.eps ** (2.0 * self.beta)

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def rescaled(self) -> Array:
        """Deviation in unit-scale coordinates ``eps**-beta X``."""
        return self.deviation / self.length_scale

    def cumulative_phi(self) -> Array:
        phi = np.zeros(self.grid.n_steps + 1)
        np.add.at(phi, self.reflection_steps, self.reflection_dphi)
        return np.cumsum(phi)

    def reconstruct(self) -> Array:
        """``-X° + int u ds + sum xi + int gamma dphi`` on the grid."""
        n, d = self.grid.n_steps, self.dim
        out = -self.target.values.copy()
        out[1:] += np.cumsum(self.controls * self.grid.dt, axis=0)
        kicks = np.zeros((n + 1, d))
        np.add.at(kicks, self.jump_steps, self.jump_sizes)
        np.add.at(
            kicks,
            self.reflection_steps,
            self.reflection_directions * self.reflection_dphi[:, None],
        )
        return out + np.cumsum(kicks, axis=0)

    def path_identity_error(self) -> float:
        return float(np.max(np.abs(self.deviation - self.reconstruct())))

    def to_csv(self, fh) -> None:
        """Write ``time, x_i..., u_i..., phi, jumps`` rows to an open text file."""
        d = self.dim
        w = csv.writer(fh)
        w.writerow(
            ["time"] + [f"x{i}" for i in range(d)] + [f"u{i}" for i in range(d)] + ["phi", "jumps"]
        )
        phi = self.cumulative_phi()
        counts = np.bincount(self.jump_steps.astype(int), minlength=self.grid.n_steps + 1)
        times = self.grid.times
        nan = [float("nan")] * d
        for i, t in enumerate(times):
            u = self.controls[i].tolist() if i < self.grid.n_steps else nan
            w.writerow([repr(float(t))] + self.deviation[i].tolist() + u + [phi[i], int(counts[i])])


def _strategy_parts(strategy):
    family = strategy.family
    domain = getattr(strategy, "domain", None)
    fld = strategy.speed
    return family, domain, fld


def _n_steps(horizon: float, ts: float, n_sub: int) -> int:
    return max(1, int(round(horizon * n_sub / ts)))


def run_batch(
    strategy,
    model: TargetModel,
    scaling: EpsilonScaling,
    eps: float,
    horizon: float,
    seeds,
    *,
    n_sub: int = 100,
    bridge: bool = False,
    targets: list[TargetPath] | None = None,
    check: bool = True,
    reflection: str = "project",
) -> list[ControlledPath]:
    """Simulate one replication per seed, vectorised across replications.

    A replication's output depends only on its own seed; batching does not
    change a single bit of it.

    Parameters
    ----------
    n_sub
        Internal steps per intrinsic time unit ``eps**(2 beta)``.
    bridge
        Impulse, d = 1 only: also trigger a jump when the Brownian bridge
        between two interior grid points crosses the boundary.
    targets
        Pre-simulated target paths (one per seed) on a common grid.
    check
        Run the potential check before simulating.
    reflection
        Singular only.  ``"project"`` moves an exterior state onto the
        boundary along ``Gamma``; ``"mirror"`` moves it further, by the
        overshoot, which removes the boundary atom and the local-time bias
        of projection in dimension one.
    """
    if reflection not in ("project", "mirror"):
        raise ValueError(f"unknown reflection scheme {reflection!r}")
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    family, domain, fld = _strategy_parts(strategy)
    if model.dim != strategy.dim:
        raise ValueError("strategy and target dimensions differ")
    if check:
        _require_admissible(strategy, model, horizon)
    seeds = [int(s) for s in seeds]
    sc = eps**scaling.beta
    ts = sc * sc
    if targets is None:
        grid = TimeGrid.uniform(horizon, _n_steps(horizon, ts, n_sub))
        targets = [simulate_target(model, grid, s) for s in seeds]
    else:
        grid = targets[0].grid
        if len(targets) != len(seeds):
            raise ValueError("one target path per seed is required")
    R, d, n = len(seeds), model.dim, grid.n_steps
    dt = grid.dt
    times = grid.times
    dxo = np.stack([tp.increments for tp in targets])
    X = np.zeros((R, n + 1, d))
    U = np.zeros((R, n, d))

    has_field = not getattr(fld, "is_zero", False)
    field_const = has_field and fld.sigma.is_constant
    if has_field:
        S_all = None if field_const else np.atleast_3d(fld.sigma(times)).reshape(n + 1, d, d)
        S_const = fld.matrix_at(0.0) if field_const else None

    if domain is not None:
        dom_const = domain.is_constant
        A_all = None if dom_const else domain.matrices(times).reshape(n + 1, d, d)
        A_const = domain.matrix_at(0.0) if dom_const else None

    use_bridge = bridge and family == "impulse" and d == 1
    if use_bridge:
        avar = np.stack([tp.diffusion_values[:-1, 0, 0] for tp in targets])
        unif_rngs = [np.random.default_rng(child_seed(s, 2)) for s in seeds]
        chunk = 8192
        unif = None

    jump_rec: list[tuple] = []
    refl_rec: list[tuple] = []

    x = np.zeros((R, d))
    for i in range(n):
        if has_field:
            S = S_const if field_const else S_all[i]
            u = -matvec(S, x / sc) / sc
            U[:, i] = u
            xn = x - dxo[:, i] + u * dt
        else:
            xn = x - dxo[:, i]

        if family == "impulse":
            A = A_const if dom_const else A_all[i + 1]
            yn = xn / sc
            out = quad(yn, A) >= 1.0
            cross = None
            if use_bridge:
                if i % chunk == 0:
                    m = min(chunk, n - i)
                    unif = np.stack([g.random(m) for g in unif_rngs])
                L = 1.0 / np.sqrt(A[0, 0])
                y0 = x[:, 0] / sc
                y1 = yn[:, 0]
                v = avar[:, i] * dt / ts
                with np.errstate(divide="ignore", invalid="ignore"):
                    p_up = np.where(
                        v > 0, np.exp(-2.0 * np.maximum(L - y0, 0) * np.maximum(L - y1, 0) / v), 0.0
                    )
                    p_dn = np.where(
                        v > 0, np.exp(-2.0 * np.maximum(L + y0, 0) * np.maximum(L + y1, 0) / v), 0.0
                    )
                uu = unif[:, i % chunk]
                cross = (~out) & (uu < p_up + p_dn)
                events = out | cross
            else:
                events = out
            if events.any():
                alpha = strategy.jump.alpha_at(times[i + 1])
                for r in np.flatnonzero(events):
                    if cross is not None and cross[r]:
                        side = 1.0 if uu[r] < p_up[r] else -1.0
                        start = (np.array([side * L]), 0.5)
                    else:
                        start = None
                    xn[r] = _apply_jumps(
                        r, x[r], xn[r], sc, A, alpha, times[i], dt, i + 1, start, jump_rec
                    )

        elif family == "singular":
            A = A_const if dom_const else A_all[i + 1]
            yn = xn / sc
            out = quad(yn, A) > 1.0
            if out.any():
                idx = np.flatnonzero(out)
                yb = project_to_boundary(yn[idx], A, strategy.direction)
                if np.any(quad(yb, A) > 1.0 + 1e-9):
                    raise SimulationError("direction field does not lead back to the domain")
                contact = sc * yb
                if reflection == "mirror":
                    # push past the boundary by the overshoot when that stays inside
                    ym = 2.0 * yb - yn[idx]
                    ok = quad(ym, A) < 1.0
                    yb = np.where(ok[:, None], ym, yb)
                disp = sc * yb - xn[idx]
                dphi = np.abs(disp).sum(axis=1)
                gamma = disp / dphi[:, None]
                xn[idx] = xn[idx] + disp
                refl_rec.append((idx, times[i + 1], i + 1, contact, gamma, dphi))

        X[:, i + 1] = xn
        x = xn
        if i % _FINITE_CHECK_EVERY == 0 and not np.all(np.isfinite(x)):
            raise SimulationError(f"non-finite state at t={times[i + 1]:.6g}")
    if not np.all(np.isfinite(X)):
        raise SimulationError("non-finite state")

    return _assemble(
        grid, X, U, targets, eps, scaling.beta, family, jump_rec, refl_rec, R, d
    )


def _apply_jumps(r, x0, x1, sc, A, alpha, t0, dt, step, start, jump_rec):
    """Apply one or more jumps inside a step; returns the post-jump state."""
    y0 = x0 / sc
    y1 = x1 / sc
    if start is not None:
        yb, theta = start
    else:
        q0 = float(y0 @ A @ y0)
        if q0 >= 1.0:
            # the domain moved past the previous state
            yb, theta = y0 / np.sqrt(q0), 0.0
        else:
            theta = segment_exit_fraction(y0, y1, A)
            yb = y0 + theta * (y1 - y0)
    for _ in range(_MAX_JUMPS_PER_STEP):
        yb = yb / np.sqrt(float(yb @ A @ yb))
        xb = sc * yb
        size = -alpha * xb
        landing = yb - alpha * yb
        if float(landing @ A @ landing) > 1.0:
            raise SimulationError("jump lands outside the domain")
        jump_rec.append((r, t0 + theta * dt, step, xb, size))
        x1 = x1 + size
        y1 = x1 / sc
        if float(y1 @ A @ y1) < 1.0:
            return x1
        frac = segment_exit_fraction(landing, y1, A)
        yb = landing + frac * (y1 - landing)
    raise SimulationError("jump rule does not bring the state back inside the domain")


def _split(records, R, d, kind):
    if kind == "jump":
        empty = (np.zeros(0), np.zeros(0, dtype=int), np.zeros((0, d)), np.zeros((0, d)))
        if not records:
            return [empty] * R
        reps = np.array([rec[0] for rec in records])
        t = np.array([rec[1] for rec in records])
        st = np.array([rec[2] for rec in records], dtype=int)
        pts = np.array([rec[3] for rec in records]).reshape(-1, d)
        sz = np.array([rec[4] for rec in records]).reshape(-1, d)
        cols = (t, st, pts, sz)
    else:
        empty = (
            np.zeros(0),
            np.zeros(0, dtype=int),
            np.zeros((0, d)),
            np.zeros((0, d)),
            np.zeros(0),
        )
        if not records:
            return [empty] * R
        reps = np.concatenate([rec[0] for rec in records])
        t = np.concatenate([np.full(len(rec[0]), rec[1]) for rec in records])
        st = np.concatenate([np.full(len(rec[0]), rec[2], dtype=int) for rec in records])
        pts = np.concatenate([rec[3] for rec in records])
        gam = np.concatenate([rec[4] for rec in records])
        dphi = np.concatenate([rec[5] for rec in records])
        cols = (t, st, pts, gam, dphi)
    order = np.argsort(reps, kind="stable")
    reps = reps[order]
    cols = tuple(c[order] for c in cols)
    bounds = np.searchsorted(reps, np.arange(R + 1))
    return [tuple(c[bounds[r] : bounds[r + 1]] for c in cols) for r in range(R)]


def _assemble(grid, X, U, targets, eps, beta, family, jump_rec, refl_rec, R, d):
    jumps = _split(jump_rec, R, d, "jump")
    refls = _split(refl_rec, R, d, "reflection")
    return [
        ControlledPath(
            grid=grid,
            deviation=X[r],
            target=targets[r],
            controls=U[r],
            eps=float(eps),
            beta=float(beta),
            family=family,
            jump_times=jumps[r][0],
            jump_steps=jumps[r][1],
            jump_points=jumps[r][2],
            jump_sizes=jumps[r][3],
            reflection_times=refls[r][0],
            reflection_steps=refls[r][1],
            reflection_points=refls[r][2],
            reflection_directions=refls[r][3],
            reflection_dphi=refls[r][4],
        )
        for r in range(R)
    ]


def run_impulse(triplet: ImpulseTriplet, model, scaling, eps, horizon, seed, **kw) -> ControlledPath:
    """Controlled path of an impulse triplet; see :func:`run_batch` for options."""
    target = kw.pop("target", None)
    return run_batch(triplet, model, scaling, eps, horizon, [seed], targets=_one(target), **kw)[0]


def run_singular(triplet: SingularTriplet, model, scaling, eps, horizon, seed, **kw) -> ControlledPath:
    target = kw.pop("target", None)
    return run_batch(triplet, model, scaling, eps, horizon, [seed], targets=_one(target), **kw)[0]


def run_regular(policy: RegularPolicy, model, scaling, eps, horizon, seed, **kw) -> ControlledPath:
    target = kw.pop("target", None)
    return run_batch(policy, model, scaling, eps, horizon, [seed], targets=_one(target), **kw)[0]


def _one(target):
    return None if target is None else [target]


# ---------------------------------------------------------------------------
# admissibility checks


@dataclass
class AdmissibilityReport:
    name: str
    statistic: float
    passed: bool

    def __bool__(self) -> bool:
        return self.passed


def _sample_times(horizon: float, n: int, rng) -> Array:
    return np.concatenate([[0.0, horizon], rng.uniform(0.0, horizon, max(n - 2, 0))])


def check_admissibility_impulse(
    triplet: ImpulseTriplet, n_samples: int = 64, horizon: float = 1.0, seed: int = 0
) -> AdmissibilityReport:
    """Minimum potential decrement ``V(x) - V(x + xi(x))`` over sampled boundary points."""
    rng = np.random.default_rng(seed)
    V = triplet.potential
    worst = np.inf
    for t in _sample_times(horizon, 8, rng):
        pts = sample_boundary(triplet.domain.matrix_at(t), n_samples, rng)
        dec = V.value(pts) - V.value(pts + triplet.jump(t, pts))
        worst = min(worst, float(dec.min()))
    return AdmissibilityReport("impulse potential decrement", worst, worst > 0)


def check_admissibility_singular(
    triplet: SingularTriplet, n_samples: int = 64, horizon: float = 1.0, seed: int = 0
) -> AdmissibilityReport:
    """Maximum of ``<grad V(x), gamma>`` over sampled boundary points."""
    rng = np.random.default_rng(seed)
    V = triplet.potential
    worst = -np.inf
    for t in _sample_times(horizon, 8, rng):
        A = triplet.domain.matrix_at(t)
        pts = sample_boundary(A, n_samples, rng)
        gam = boundary_direction(pts, A, triplet.direction)
        val = np.sum(V.grad(pts) * gam, axis=1)
        worst = max(worst, float(val.max()))
    return AdmissibilityReport("singular potential slope", worst, worst < 0)


def check_lyapunov_regular(
    policy: RegularPolicy,
    a,
    n_samples: int = 256,
    radius: float = 5.0,
    horizon: float = 1.0,
    seed: int = 0,
) -> AdmissibilityReport:
    """Max of ``A V - theta + 2 Theta V`` over a ball; passes when ``<= 0``."""
    rng = np.random.default_rng(seed)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    d = a.shape[0]
    V = policy.potential
    u = rng.standard_normal((n_samples, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rad = radius * rng.random(n_samples) ** (1.0 / d)
    pts = np.vstack([np.zeros((1, d)), u * rad[:, None]])
    worst = -np.inf
    scale = 0.0
    for t in _sample_times(horizon, 4, rng):
        gen = 0.5 * np.einsum("ij,nij->n", a, V.hess(pts)) + np.sum(
            policy.speed(t, pts) * V.grad(pts), axis=1
        )
        bound = policy.theta - 2.0 * policy.Theta * V.value(pts)
        worst = max(worst, float(np.max(gen - bound)))
        scale = max(scale, float(np.max(np.abs(gen))), float(np.max(np.abs(bound))))
    return AdmissibilityReport("regular Lyapunov drift", worst, worst <= 1e-12 * (1.0 + scale))


def _require_admissible(strategy, model: TargetModel, horizon: float) -> None:
    if strategy.family == "impulse":
        report = check_admissibility_impulse(strategy, 16, horizon)
    elif strategy.family == "singular":
        report = check_admissibility_singular(strategy, 16, horizon)
    else:
        return
    if not report.passed:
        raise AdmissibilityError(report)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class JumpRate:
    eps: float
    mean: float
    stderr: float
    rates: Array


def jump_count_diagnostic(paths) -> dict[float, JumpRate]:
    """Scaled jump rate ``N_T * eps**(2 beta) / T`` grouped by ``eps``."""
    groups: dict[float, list[float]] = {}
    for p in paths:
        T = p.grid.t_end - p.grid.t_start
        groups.setdefault(p.eps, []).append(p.n_jumps * p.time_scale / T)
    out = {}
    for eps, rates in groups.items():
        r = np.asarray(rates)
        se = float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else float("nan")
        out[eps] = JumpRate(eps, float(r.mean()), se, r)
    return out
