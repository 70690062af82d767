"""Scenario files, epsilon sweeps and suboptimality reports.

A scenario is a JSON document::

    {
      "name": "impulse-1d-optimal",
      "target": {"drift": [0.0], "diffusion": [[1.0]]},
      "cost": {"D": {"kind": "quadratic", "matrix": [[1.0]]}, ...,
               "weights": {"r": 1.0, "k": 1.0}},
      "beta": 1.0,
      "strategy": {"family": "impulse",
                   "domain": {"kind": "optimal_ellipsoid"},
                   "jump": {"alpha": 1.0}},
      "horizon": 1.0,
      "epsilons": [0.2, 0.1, 0.05],
      "replications": 64,
      "base_seed": 2024,
      "solver": {"n_sub": 100, "bridge": true}
    }

The full schema is described in the README.  Every number in a sweep is a
deterministic function of the scenario.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .closed_form import solve_lq, solve_matrix_B
from .cost_model import (
    ConstantFixedCost,
    CostSpec,
    EpsilonScaling,
    QuadraticCost,
    check_homogeneity,
    cost_from_config,
    derive_exponents,
    eval_cost,
    renormalize,
)
from .domains import (
    EllipsoidDomain,
    IntervalDomain,
    LinearField,
    ProportionalJump,
    QuadraticPotential,
    ZeroField,
)
from .sde_engine import FactorDiffusion, OUFactor, TargetModel, TimeFunction
from .stationary import _factor_nodes, integrate_limit_over_time, scenario_limit
from .strategies import (
    AdmissibilityReport,
    ImpulseTriplet,
    RegularPolicy,
    SingularTriplet,
    check_admissibility_impulse,
    check_admissibility_singular,
    check_lyapunov_regular,
    run_batch,
)

Array = np.ndarray

__all__ = [
    "SolverOptions",
    "Scenario",
    "ScenarioError",
    "ValidationReport",
    "SweepRow",
    "SweepResult",
    "load_scenario",
    "scenario_from_config",
    "validate_scenario",
    "run_sweep",
    "lower_bound",
    "suboptimality_report",
    "replication_seed",
    "OptimalEllipsoidMatrix",
    "LQFeedbackMatrix",
    "ScenarioValidationError",
    "SuboptimalityReport",
    "simulate_eps",
    "scenario_limit_value",
]


class ScenarioError(ValueError):
    """The scenario file is malformed or inconsistent."""


@dataclass
class SolverOptions:
    n_sub: int = 100
    bridge: bool = False
    reflection: str = "project"
    burn_in: float = 0.1
    oracle_cells: int = 400
    limit_estimator: str = "auto"
    time_points: int = 11
    workers: int = 1
    sim_horizon: float = 2000.0
    sim_replications: int = 16
    oracle_options: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    model: TargetModel
    cost: CostSpec
    beta: float
    strategy: object
    horizon: float
    epsilons: list[float]
    replications: int
    base_seed: int
    solver: SolverOptions = field(default_factory=SolverOptions)
    config: dict = field(default_factory=dict)

    @property
    def scaling(self) -> EpsilonScaling:
        return derive_exponents(self.beta, self.cost)


# ---------------------------------------------------------------------------
# strategy parameters tied to the closed-form solutions


class OptimalEllipsoidMatrix:
    """``t -> B_t / (2 sqrt(k_t / r_t)) / scale^2``: the optimal impulse domain, optionally rescaled.

    ``B_t`` solves the impulse matrix equation for ``a_t`` (factor at its
    mean level) and the quadratic deviation cost; ``k_t`` includes the
    constant fixed fee.
    """

    def __init__(self, model: TargetModel, spec: CostSpec, scale: float = 1.0):
        if not isinstance(spec.D, QuadraticCost) or not isinstance(spec.F, ConstantFixedCost):
            raise ScenarioError("optimal_ellipsoid needs a quadratic D and a constant fixed cost")
        self.model = model
        self.spec = spec
        self.scale = float(scale)
        self._cache: dict[float, Array] = {}
        self.is_constant = (
            not isinstance(model.diffusion, FactorDiffusion)
            and model.diffusion.is_constant
            and spec.r.is_constant
            and spec.k.is_constant
        )

    def _at(self, t: float) -> Array:
        key = 0.0 if self.is_constant else float(t)
        if key not in self._cache:
            w = self.spec.weights_at(key)
            sol = solve_matrix_B(
                self.model.diffusion_at(key), self.spec.D.matrix, w["r"], w["k"] * self.spec.F.value
            )
            self._cache[key] = sol.optimal_domain_matrix / self.scale**2
        return self._cache[key]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flat = [self._at(s) for s in t.ravel()]
        return np.asarray(flat).reshape(t.shape + flat[0].shape) if t.ndim else flat[0]

    def to_dict(self):
        return {"kind": "optimal_ellipsoid", "scale": self.scale}


class LQFeedbackMatrix:
    """``t -> scale * (1/l_t) Q^-1 G_t``: the optimal linear feedback, optionally detuned."""

    def __init__(self, model: TargetModel, spec: CostSpec, scale: float = 1.0):
        if not isinstance(spec.D, QuadraticCost) or not isinstance(spec.Q, QuadraticCost):
            raise ScenarioError("lq_optimal needs quadratic D and Q")
        self.model = model
        self.spec = spec
        self.scale = float(scale)
        self.is_constant = spec.r.is_constant and spec.l.is_constant
        self._cache: dict[float, Array] = {}

    def _at(self, t: float) -> Array:
        key = 0.0 if self.is_constant else float(t)
        if key not in self._cache:
            w = self.spec.weights_at(key)
            sol = solve_lq(self.model.diffusion_at(key), self.spec.D.matrix, self.spec.Q.matrix, w["r"], w["l"])
            self._cache[key] = self.scale * sol.feedback_matrix
        return self._cache[key]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flat = [self._at(s) for s in t.ravel()]
        return np.asarray(flat).reshape(t.shape + flat[0].shape) if t.ndim else flat[0]

    def to_dict(self):
        return {"kind": "lq_optimal", "scale": self.scale}


# ---------------------------------------------------------------------------
# parsing


def _tf(cfg, shape=None) -> TimeFunction:
    tf = TimeFunction.from_config(cfg)
    if shape is not None and tf.value.shape != shape:
        raise ScenarioError(f"expected shape {shape}, got {tf.value.shape}")
    return tf


def _parse_target(cfg: dict) -> TargetModel:
    drift = _tf(cfg.get("drift", 0.0))
    dim = int(cfg.get("dim", np.atleast_1d(drift.value).size))
    if drift.value.ndim == 0:
        drift = TimeFunction(np.full(dim, float(drift.value)))
    diffusion = _tf(cfg["diffusion"])
    if diffusion.value.ndim < 2:
        diffusion = TimeFunction(np.atleast_2d(diffusion.value), None if diffusion.slope is None else np.atleast_2d(diffusion.slope))
    factor_cfg = cfg.get("factor")
    if factor_cfg:
        factor = OUFactor(float(factor_cfg["kappa"]), float(factor_cfg["eta"]), float(factor_cfg.get("z0", 0.0)))
        diff = FactorDiffusion(diffusion, float(factor_cfg.get("loading", 1.0)))
        return TargetModel(dim, drift, diff, factor)
    return TargetModel(dim, drift, diffusion)


def _parse_domain(cfg: dict, model: TargetModel, spec: CostSpec):
    kind = cfg.get("kind", "interval")
    if kind == "interval":
        if model.dim != 1:
            raise ScenarioError("interval domains are one-dimensional")
        return IntervalDomain(_tf(cfg["half_width"]))
    if kind == "ellipsoid":
        return EllipsoidDomain(_tf(cfg["matrix"]))
    if kind == "optimal_ellipsoid":
        return EllipsoidDomain(OptimalEllipsoidMatrix(model, spec, cfg.get("scale", 1.0)))
    raise ScenarioError(f"unknown domain kind {kind!r}")


def _parse_speed(cfg: dict | None, model: TargetModel, spec: CostSpec):
    if not cfg or cfg.get("kind", "zero") == "zero":
        return ZeroField()
    kind = cfg["kind"]
    if kind == "linear":
        return LinearField(_tf(cfg["matrix"]))
    if kind == "lq_optimal":
        return LinearField(LQFeedbackMatrix(model, spec, cfg.get("scale", 1.0)))
    raise ScenarioError(f"unknown speed kind {kind!r}")


def _parse_strategy(cfg: dict, model: TargetModel, spec: CostSpec):
    family = cfg.get("family")
    speed = _parse_speed(cfg.get("speed"), model, spec)
    pot = QuadraticPotential(None if "potential" not in cfg else np.asarray(cfg["potential"], dtype=float))
    if family == "impulse":
        jump = ProportionalJump(_tf(cfg.get("jump", {}).get("alpha", 1.0)))
        return ImpulseTriplet(_parse_domain(cfg["domain"], model, spec), jump, speed, pot)
    if family == "singular":
        return SingularTriplet(_parse_domain(cfg["domain"], model, spec), cfg.get("direction", "radial"), speed, pot)
    if family == "regular":
        return RegularPolicy(speed, pot, float(cfg.get("theta", 1.0)), float(cfg.get("Theta", 1.0)), model.dim)
    raise ScenarioError(f"unknown strategy family {family!r}")


def scenario_from_config(cfg: dict) -> Scenario:
    """Build a :class:`Scenario` from a parsed JSON document."""
    try:
        model = _parse_target(cfg["target"])
        spec = cost_from_config(cfg["cost"])
        solver = SolverOptions(**cfg.get("solver", {}))
        strategy = _parse_strategy(cfg["strategy"], model, spec)
        scenario = Scenario(
            name=str(cfg.get("name", "scenario")),
            model=model,
            cost=spec,
            beta=float(cfg["beta"]),
            strategy=strategy,
            horizon=float(cfg.get("horizon", 1.0)),
            epsilons=[float(e) for e in cfg["epsilons"]],
            replications=int(cfg.get("replications", 64)),
            base_seed=int(cfg.get("base_seed", 0)),
            solver=solver,
            config=cfg,
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc
    return scenario


def load_scenario(source) -> Scenario:
    """Scenario from a path to a JSON file or from an already parsed dict."""
    if isinstance(source, dict):
        return scenario_from_config(source)
    with open(source) as fh:
        return scenario_from_config(json.load(fh))


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    checks: list[AdmissibilityReport]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[AdmissibilityReport]:
        return [c for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "statistic": float(c.statistic), "passed": bool(c.passed)}
                for c in self.checks
            ],
        }


def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Admissibility, homogeneity, exponent and bookkeeping checks."""
    checks = []
    s = scenario.strategy
    T = scenario.horizon
    if s.family == "impulse":
        checks.append(check_admissibility_impulse(s, 64, T))
    elif s.family == "singular":
        checks.append(check_admissibility_singular(s, 64, T))
    else:
        checks.append(check_lyapunov_regular(s, scenario.model.diffusion_at(0.0), horizon=T))

    rng = np.random.default_rng(0)
    d = scenario.model.dim
    samples = [(float(e), rng.standard_normal((8, d))) for e in np.geomspace(1e-3, 10.0, 9)]
    hom = check_homogeneity(scenario.cost, samples)
    checks.append(AdmissibilityReport("cost homogeneity", hom, hom < 1e-10))

    sc = scenario.scaling
    ratios = [
        sc.beta_Q / (sc.zeta_D + sc.zeta_Q),
        sc.beta_F / (sc.zeta_D + 2 - sc.zeta_F),
        sc.beta_P / (sc.zeta_D + 2 - sc.zeta_P),
    ]
    dev = max(abs(r - sc.beta) for r in ratios) / sc.beta
    checks.append(AdmissibilityReport("exponent relation", dev, dev < 1e-14))

    eps = np.asarray(scenario.epsilons)
    ok = len(eps) > 0 and np.all(eps > 0) and np.all(eps <= 1) and np.all(np.diff(eps) < 0)
    checks.append(AdmissibilityReport("epsilon list decreasing in (0, 1]", float(len(eps)), bool(ok)))
    checks.append(
        AdmissibilityReport("replications", float(scenario.replications), scenario.replications >= 1)
    )
    wmin = min(float(np.min(getattr(scenario.cost, w)(np.linspace(0, T, 33)))) for w in "rlkh")
    checks.append(AdmissibilityReport("weights positive", wmin, wmin > 0))
    return ValidationReport(checks)


# ---------------------------------------------------------------------------
# sweep


def replication_seed(base_seed: int, eps_index: int, rep: int) -> int:
    """Seed of replication ``rep`` at the ``eps_index``-th epsilon."""
    return int(np.random.SeedSequence([base_seed, eps_index, rep]).generate_state(1)[0])


@dataclass
class SweepRow:
    eps: float
    n_steps: int
    mean: float
    stderr: float
    term_means: list[float]
    term_stderrs: list[float]
    jump_rate: float
    jump_rate_stderr: float
    path_identity_error: float


@dataclass
class SweepResult:
    name: str
    rows: list[SweepRow]
    limit: float | None
    limit_error: float | None
    limit_terms: list[float] | None
    limit_estimator: str | None
    closed_form: float | None
    lower_bound: float | None

    @property
    def ratio(self) -> float | None:
        if self.limit is None or not self.lower_bound:
            return None
        return self.limit / self.lower_bound

    def row(self, eps: float) -> SweepRow:
        return next(r for r in self.rows if r.eps == eps)

    def monotone_convergence(self, n_se: float = 2.0) -> bool:
        """Whether ``|mean - limit|`` is non-increasing along the sweep, up to ``n_se`` errors."""
        if self.limit is None:
            return False
        gaps = [abs(r.mean - self.limit) for r in self.rows]
        return all(
            gaps[i + 1] <= gaps[i] + n_se * (self.rows[i].stderr + self.rows[i + 1].stderr)
            for i in range(len(gaps) - 1)
        )

    _TERMS = ("deviation", "regular", "fixed", "proportional")

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        head = ["eps", "n_steps", "mean", "stderr"]
        head += [f"{t}_mean" for t in self._TERMS] + [f"{t}_stderr" for t in self._TERMS]
        head += ["jump_rate", "jump_rate_stderr", "path_identity_error", "limit", "closed_form", "lower_bound"]
        w.writerow(head)
        for r in self.rows:
            w.writerow(
                [repr(r.eps), r.n_steps, repr(r.mean), repr(r.stderr)]
                + [repr(v) for v in r.term_means]
                + [repr(v) for v in r.term_stderrs]
                + [repr(r.jump_rate), repr(r.jump_rate_stderr), repr(r.path_identity_error)]
                + [repr(self.limit), repr(self.closed_form), repr(self.lower_bound)]
            )
        return out.getvalue()

    def to_json(self) -> str:
        d = asdict(self)
        d["ratio"] = self.ratio
        return json.dumps(d, indent=2, sort_keys=True)

    def plot_data(self) -> str:
        """Two columns: ``log10(eps)`` and mean renormalised cost."""
        return "".join(f"{math.log10(r.eps)!r} {r.mean!r}\n" for r in self.rows)

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "sweep.csv", "json": out / "summary.json", "plot": out / "plot.dat"}
        paths["csv"].write_text(self.to_csv())
        paths["json"].write_text(self.to_json())
        paths["plot"].write_text(self.plot_data())
        return paths


def _simulate_chunk(args):
    scenario, eps, seeds = args
    sc = scenario.scaling
    opts = scenario.solver
    paths = run_batch(
        scenario.strategy,
        scenario.model,
        sc,
        eps,
        scenario.horizon,
        seeds,
        n_sub=opts.n_sub,
        bridge=opts.bridge,
        reflection=opts.reflection,
        check=False,
    )
    out = []
    for p in paths:
        b = renormalize(eval_cost(p, scenario.cost, sc, eps), eps, sc)
        rate = p.n_jumps * p.time_scale / scenario.horizon
        out.append((b.terms(), rate, p.path_identity_error()))
    return out


def _mean_se(x: Array) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")
    return float(x.mean()), se


def simulate_eps(scenario: Scenario, i_eps: int, pool=None) -> SweepRow:
    """All replications at the ``i_eps``-th epsilon, aggregated in seed order."""
    eps = scenario.epsilons[i_eps]
    seeds = [replication_seed(scenario.base_seed, i_eps, i) for i in range(scenario.replications)]
    workers = max(1, scenario.solver.workers)
    chunks = [seeds[i::workers] for i in range(workers)] if pool else [seeds]
    jobs = [(scenario, eps, c) for c in chunks if c]
    parts = list(pool.map(_simulate_chunk, jobs)) if pool else [_simulate_chunk(jobs[0])]
    by_seed = {}
    for c, part in zip([j[2] for j in jobs], parts):
        by_seed.update(zip(c, part))
    recs = [by_seed[s] for s in seeds]
    terms = np.array([r[0] for r in recs])
    totals = terms.sum(axis=1)
    mean, se = _mean_se(totals)
    tm = terms.mean(axis=0)
    ts = terms.std(axis=0, ddof=1) / np.sqrt(len(terms)) if len(terms) > 1 else np.full(4, np.nan)
    jr, jr_se = _mean_se([r[1] for r in recs])
    sc = scenario.scaling
    n_steps = max(1, int(round(scenario.horizon * scenario.solver.n_sub / sc.time_scale(eps))))
    return SweepRow(
        eps, n_steps, mean, se, tm.tolist(), ts.tolist(), jr, jr_se, max(r[2] for r in recs)
    )


def _estimator(scenario: Scenario) -> str:
    est = scenario.solver.limit_estimator
    if est != "auto":
        return est
    return "oracle" if scenario.model.dim <= 2 else "simulation"


def scenario_limit_value(scenario: Scenario, estimator: str | None = None):
    """``E int_0^T c dt`` for the scenario's strategy with the chosen estimator."""
    est = estimator or _estimator(scenario)
    opts = scenario.solver
    kw = {}
    if est in ("oracle", "both"):
        kw["cells"] = opts.oracle_cells
        kw["oracle_options"] = opts.oracle_options
    if est in ("simulation", "both"):
        kw.update(
            sim_horizon=opts.sim_horizon,
            replications=opts.sim_replications,
            n_sub=opts.n_sub,
            burn_in=opts.burn_in,
            seed=scenario.base_seed,
            sim_options={"bridge": opts.bridge, "reflection": opts.reflection},
        )
    return scenario_limit(
        scenario.model, scenario.strategy, scenario.cost, scenario.horizon, opts.time_points, est, **kw
    )


def _is_degenerate(model: TargetModel) -> bool:
    base = model.diffusion.base if isinstance(model.diffusion, FactorDiffusion) else model.diffusion
    return not np.any(base.value) and (base.slope is None or not np.any(base.slope))


def _closed_form_value(scenario: Scenario):
    try:
        v, _, _ = scenario_limit(
            scenario.model, scenario.strategy, scenario.cost, scenario.horizon,
            scenario.solver.time_points, "closed_form",
        )
        return v
    except (ValueError, np.linalg.LinAlgError):
        return None


def lower_bound(scenario: Scenario) -> float | None:
    """``E int_0^T I_t dt`` for the quadratic impulse and LQ families, else ``None``.

    Impulse: ``I = Tr(a B) sqrt(r k F)``; regular: ``I = Tr(a G)``.
    """
    spec, model = scenario.cost, scenario.model
    fam = scenario.strategy.family
    if not isinstance(spec.D, QuadraticCost) or _is_degenerate(model):
        return None
    if fam == "impulse":
        if not isinstance(spec.F, ConstantFixedCost) or np.any(spec.P(np.eye(model.dim))):
            return None

        def I_at(a, w):
            return solve_matrix_B(a, spec.D.matrix).I_value * math.sqrt(w["r"] * w["k"] * spec.F.value)

    elif fam == "regular":
        if not isinstance(spec.Q, QuadraticCost):
            return None

        def I_at(a, w):
            return solve_lq(a, spec.D.matrix, spec.Q.matrix, w["r"], w["l"]).I_value

    else:
        return None

    def at(t):
        w = spec.weights_at(t)
        if model.factor is None:
            return I_at(model.diffusion_at(t), w)
        zs, ws = _factor_nodes(model, t, 9)
        return sum(wz * I_at(model.coefficients(np.asarray(t), np.asarray(z))[1], w) for z, wz in zip(zs, ws))

    T = scenario.horizon
    n = 2 if _all_constant(scenario) else scenario.solver.time_points
    return integrate_limit_over_time(at, T, n)[0]


def _all_constant(scenario: Scenario) -> bool:
    m, c = scenario.model, scenario.cost
    return (
        m.factor is None
        and m.diffusion.is_constant
        and all(getattr(c, w).is_constant for w in "rlkh")
    )


def run_sweep(scenario: Scenario, *, with_limit: bool = True, strict: bool = True) -> SweepResult:
    """Simulate every ``(eps, replication)`` pair and compare with the limit.

    Raises :class:`ScenarioValidationError` when validation fails and
    ``strict`` is set; with ``strict=False`` the sweep runs anyway and an
    inadmissible strategy surfaces as a ``SimulationError``. Propagates
    :class:`~feedback_tracking.stationary.ConsistencyAlarm`.
    """
    report = validate_scenario(scenario)
    if strict and not report.passed:
        raise ScenarioValidationError(report)
    pool = None
    if scenario.solver.workers > 1:
        pool = ProcessPoolExecutor(scenario.solver.workers)
    try:
        rows = [simulate_eps(scenario, i, pool) for i in range(len(scenario.epsilons))]
    finally:
        if pool is not None:
            pool.shutdown()
    limit = err = None
    terms = None
    est = None
    if with_limit:
        if _is_degenerate(scenario.model):
            limit, err, terms, est = 0.0, 0.0, [0.0] * 4, "degenerate"
        else:
            est = _estimator(scenario)
            v, e, b = scenario_limit_value(scenario, est)
            limit, err, terms = v, e, list(b.terms())
    return SweepResult(
        scenario.name,
        rows,
        limit,
        err,
        terms,
        est,
        None if _is_degenerate(scenario.model) else _closed_form_value(scenario),
        lower_bound(scenario),
    )


class ScenarioValidationError(ValueError):
    def __init__(self, report: ValidationReport):
        names = ", ".join(f"{c.name} ({c.statistic:.3g})" for c in report.failures())
        super().__init__(f"scenario failed validation: {names}")
        self.report = report


@dataclass
class SuboptimalityReport:
    limit: float
    limit_error: float
    lower_bound: float
    ratio: float
    estimator: str

    def as_dict(self) -> dict:
        return asdict(self)


def suboptimality_report(scenario: Scenario, estimator: str | None = None) -> SuboptimalityReport:
    """Ratio of the strategy's limit cost to the lower bound ``int I dt``."""
    I = lower_bound(scenario)
    if I is None:
        raise ScenarioError("no closed-form lower bound for this cost/strategy family")
    est = estimator or _estimator(scenario)
    v, e, _ = scenario_limit_value(scenario, est)
    return SuboptimalityReport(v, e, I, v / I, est)

