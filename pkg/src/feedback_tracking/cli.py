"""Command line entry point: ``feedback-tracking <command> SCENARIO.json``.

Exit codes: 0 success, 2 invalid scenario, 3 limit estimators disagree.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .closed_form import solve_lq, solve_matrix_B
from .cost_model import ConstantFixedCost, QuadraticCost, eval_cost, renormalize
from .experiments import (
    ScenarioError,
    ScenarioValidationError,
    load_scenario,
    lower_bound,
    replication_seed,
    run_sweep,
    scenario_limit_value,
    suboptimality_report,
    validate_scenario,
)
from .stationary import ConsistencyAlarm, limit_cost
from .strategies import AdmissibilityError, SimulationError, run_batch

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ALARM = 3


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _closed_forms(scenario, t: float) -> dict:
    """Explicit solutions that apply to the scenario's cost at time ``t``."""
    out = {}
    spec = scenario.cost
    a = scenario.model.diffusion_at(t)
    w = spec.weights_at(t)
    if isinstance(spec.D, QuadraticCost):
        if isinstance(spec.F, ConstantFixedCost) and w["k"] * spec.F.value > 0:
            sol = solve_matrix_B(a, spec.D.matrix, w["r"], w["k"] * spec.F.value)
            out["impulse"] = {
                "B": sol.B,
                "residual": sol.residual,
                "trace_aB": sol.I_value,
                "lower_bound": sol.I_value * np.sqrt(w["r"] * w["k"] * spec.F.value),
                "optimal_domain_matrix": sol.optimal_domain_matrix,
            }
        if isinstance(spec.Q, QuadraticCost):
            lq = solve_lq(a, spec.D.matrix, spec.Q.matrix, w["r"], w["l"])
            out["regular"] = {
                "G": lq.G,
                "feedback_matrix": lq.feedback_matrix,
                "lower_bound": lq.I_value,
                "stationary_covariance": lq.stationary_covariance,
                "degenerate": lq.degenerate,
            }
    return out


def _table(rows: list[tuple[str, object]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    report = validate_scenario(scenario)
    print(_dump(report.as_dict()))
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    eps = args.eps if args.eps is not None else scenario.epsilons[-1]
    seed = args.seed if args.seed is not None else replication_seed(scenario.base_seed, 0, 0)
    sc = scenario.scaling
    opts = scenario.solver
    path = run_batch(
        scenario.strategy, scenario.model, sc, eps, scenario.horizon, [seed],
        n_sub=opts.n_sub, bridge=opts.bridge, reflection=opts.reflection,
    )[0]
    cost = renormalize(eval_cost(path, scenario.cost, sc, eps), eps, sc)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            path.to_csv(fh)
    summary = {
        "eps": eps,
        "seed": seed,
        "n_steps": path.grid.n_steps,
        "jumps": path.n_jumps,
        "reflection_total": float(path.reflection_dphi.sum()),
        "renormalized_cost": cost.as_dict(),
        "path_identity_error": path.path_identity_error(),
    }
    print(_dump(summary))
    return EXIT_OK


def cmd_limit(args) -> int:
    scenario = load_scenario(args.scenario)
    est = args.estimator
    strat = scenario.strategy
    a = scenario.model.diffusion_at(args.t)
    kw = {"cells": scenario.solver.oracle_cells, "oracle_options": scenario.solver.oracle_options}
    if est in ("simulation", "both"):
        kw.update(
            sim_horizon=scenario.solver.sim_horizon,
            replications=scenario.solver.sim_replications,
            n_sub=scenario.solver.n_sub,
            seed=scenario.base_seed,
            sim_options={"bridge": scenario.solver.bridge, "reflection": scenario.solver.reflection},
        )
    if est == "closed_form":
        kw = {}
    point = limit_cost(a, strat, scenario.cost, args.t, est, **kw)
    total, err, terms = scenario_limit_value(scenario, est)
    out = {
        "t": args.t,
        "estimator": est,
        "pointwise": {"value": point.value, "error": point.stderr, "terms": point.terms.as_dict()},
        "integral": {"value": total, "error": err, "terms": terms.as_dict()},
        "closed_form": _closed_forms(scenario, args.t),
    }
    if args.table:
        rows = [("estimator", est), ("c(t)", f"{point.value:.6f} +/- {point.stderr:.2e}")]
        rows += [(f"  {k}", f"{v:.6f}") for k, v in point.terms.as_dict().items()]
        rows += [("int c dt", f"{total:.6f} +/- {err:.2e}")]
        for fam, sol in out["closed_form"].items():
            rows.append((f"{fam} lower bound", f"{sol['lower_bound']:.6f}"))
        print(_table(rows))
    else:
        print(_dump(out))
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_sweep(scenario)
    if args.out_dir:
        result.write(args.out_dir)
    print(result.to_csv(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    scenario = load_scenario(args.scenario)
    rep = suboptimality_report(scenario, args.estimator)
    print(_dump(rep.as_dict()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feedback-tracking", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="run admissibility and consistency checks")
    s.add_argument("scenario", type=Path)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="simulate and dump a single controlled path")
    s.add_argument("scenario", type=Path)
    s.add_argument("--eps", type=float, default=None, help="default: smallest epsilon")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", type=Path, default=None, help="CSV file for the path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("limit", help="limit cost from the oracle, simulation or closed form")
    s.add_argument("scenario", type=Path)
    s.add_argument(
        "--estimator", choices=["oracle", "simulation", "closed_form", "both"], default="oracle"
    )
    s.add_argument("--t", type=float, default=0.0, help="time of the pointwise limit")
    s.add_argument("--table", action="store_true", help="human-readable output")
    s.set_defaults(func=cmd_limit)

    s = sub.add_parser("sweep", help="epsilon sweep of the renormalised cost")
    s.add_argument("scenario", type=Path)
    s.add_argument("--out-dir", type=Path, default=None)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="ratio of the limit cost to the lower bound")
    s.add_argument("scenario", type=Path)
    s.add_argument("--estimator", choices=["oracle", "simulation", "closed_form"], default=None)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        print(_dump(exc.report.as_dict()), file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, AdmissibilityError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConsistencyAlarm as exc:
        print(f"consistency alarm: {exc}", file=sys.stderr)
        return EXIT_ALARM
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
