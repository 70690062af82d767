import json

import numpy as np
import pytest

from feedback_tracking.experiments import (
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
from feedback_tracking.strategies import SimulationError


def cfg(configs, name, **over):
    c = json.loads((configs / f"{name}.json").read_text())
    for k, v in over.items():
        c[k] = v
    return c


def small(configs, name, reps=8, eps=(0.2, 0.1), **over):
    return load_scenario(cfg(configs, name, replications=reps, epsilons=list(eps), **over))


ALL = [
    "impulse_1d_optimal",
    "impulse_1d_doubled",
    "singular_1d",
    "regular_1d_lq",
    "regular_1d_lq_detuned",
    "impulse_2d_optimal",
    "impulse_1d_ramp",
    "impulse_1d_factor",
    "degenerate",
]


@pytest.mark.parametrize("name", ALL)
def test_shipped_configs_validate(configs, name):
    rep = validate_scenario(load_scenario(configs / f"{name}.json"))
    assert rep.passed, rep.as_dict()


def test_zero_jump_fails_validation(configs):
    c = cfg(configs, "impulse_1d_optimal")
    c["strategy"]["jump"] = {"alpha": 0.0}
    rep = validate_scenario(load_scenario(c))
    assert not rep.passed
    fail = rep.failures()[0]
    assert fail.name == "impulse potential decrement" and fail.statistic == 0.0


def test_declared_degree_mismatch_fails(configs):
    c = cfg(configs, "impulse_1d_optimal")
    c["cost"]["D"]["degree"] = 3.0
    rep = validate_scenario(load_scenario(c))
    assert [f.name for f in rep.failures()] == ["cost homogeneity"]


def test_bad_epsilon_list(configs):
    rep = validate_scenario(small(configs, "impulse_1d_optimal", eps=(0.1, 0.2)))
    assert "epsilon list decreasing in (0, 1]" in [f.name for f in rep.failures()]


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c.pop("beta"),
        lambda c: c["strategy"].update(family="bang-bang"),
        lambda c: c["strategy"]["domain"].update(kind="torus"),
        lambda c: c["target"].update(diffusion=[[1.0, 0.0]]),
    ],
)
def test_malformed_configs(configs, mutate):
    c = cfg(configs, "impulse_1d_optimal")
    mutate(c)
    with pytest.raises(ScenarioError):
        load_scenario(c)


def test_invalid_scenario_aborts_sweep(configs):
    c = cfg(configs, "impulse_1d_optimal", replications=2)
    c["strategy"]["jump"] = {"alpha": 0.0}
    with pytest.raises(ScenarioValidationError) as info:
        run_sweep(load_scenario(c))
    assert not info.value.report.passed
    # without the gate the jump never brings the state back inside
    with pytest.raises(SimulationError):
        run_sweep(load_scenario(c), strict=False)


def test_replication_seeds_distinct():
    seeds = {replication_seed(1, i, j) for i in range(3) for j in range(50)}
    assert len(seeds) == 150


def test_sweep_is_deterministic(configs):
    sc = small(configs, "impulse_1d_optimal", reps=4)
    a, b = run_sweep(sc).to_csv(), run_sweep(sc).to_csv()
    assert a == b


def test_sweep_independent_of_worker_count(configs):
    c = cfg(configs, "singular_1d", replications=6, epsilons=[0.2])
    serial = run_sweep(load_scenario(c), with_limit=False).to_csv()
    c["solver"]["workers"] = 3
    parallel = run_sweep(load_scenario(c), with_limit=False).to_csv()
    assert serial == parallel


def test_degenerate_sweep_costs_nothing(configs):
    res = run_sweep(load_scenario(configs / "degenerate.json"))
    assert all(r.mean == 0.0 for r in res.rows)
    assert res.limit == 0.0 and res.lower_bound is None and res.ratio is None


def test_regular_sweep_close_to_one(configs):
    res = run_sweep(small(configs, "regular_1d_lq", reps=32, eps=(0.1,)))
    assert res.rows[0].mean == pytest.approx(1.0, rel=0.08)
    assert res.limit == pytest.approx(1.0, rel=1e-3)
    assert res.closed_form == pytest.approx(1.0, rel=1e-12)


def test_sweep_outputs(configs, tmp_path):
    res = run_sweep(small(configs, "impulse_1d_optimal", reps=4))
    paths = res.write(tmp_path)
    lines = paths["csv"].read_text().splitlines()
    assert lines[0].startswith("eps,n_steps,mean,stderr")
    assert len(lines) == 3
    summary = json.loads(paths["json"].read_text())
    assert summary["ratio"] == pytest.approx(res.ratio)
    plot = np.loadtxt(paths["plot"])
    np.testing.assert_allclose(plot[:, 0], np.log10([0.2, 0.1]))
    assert res.row(0.1).eps == 0.1


def test_monotone_convergence_diagnostic(configs):
    res = run_sweep(small(configs, "impulse_1d_optimal", reps=16, eps=(0.2, 0.1, 0.05)))
    assert res.monotone_convergence()
    res.rows[-1].mean += 1.0
    assert not res.monotone_convergence()


def test_lower_bounds(configs, ref):
    assert lower_bound(load_scenario(configs / "impulse_1d_optimal.json")) == pytest.approx(
        ref["impulse_c_star"], rel=1e-12
    )
    assert lower_bound(load_scenario(configs / "regular_1d_lq_detuned.json")) == pytest.approx(1.0)
    assert lower_bound(load_scenario(configs / "singular_1d.json")) is None
    assert lower_bound(load_scenario(configs / "impulse_2d_optimal.json")) == pytest.approx(
        ref["trace_aB_2d"], rel=1e-12
    )


@pytest.mark.parametrize(
    "name, key",
    [("impulse_1d_optimal", None), ("impulse_1d_doubled", "impulse_ratio_doubled"),
     ("regular_1d_lq_detuned", "lq_ratio_detuned")],
)
def test_suboptimality_ratios(configs, ref, name, key):
    rep = suboptimality_report(load_scenario(configs / f"{name}.json"))
    expected = 1.0 if key is None else ref[key]
    assert rep.ratio == pytest.approx(expected, abs=0.02)
    assert rep.ratio >= 1 - 0.01


def test_suboptimality_needs_a_bound(configs):
    with pytest.raises(ScenarioError):
        suboptimality_report(load_scenario(configs / "singular_1d.json"))


def test_optimal_2d_domain_matches_lower_bound(configs):
    rep = suboptimality_report(load_scenario(configs / "impulse_2d_optimal.json"))
    assert rep.ratio == pytest.approx(1.0, abs=0.03)


def test_ramp_scenario_limit(configs, ref):
    sc = load_scenario(configs / "impulse_1d_ramp.json")
    v, _, _ = scenario_limit_value(sc, "closed_form")
    # the domain follows r_t, so the limit is the integrated lower bound
    assert v == pytest.approx(ref["ramp_integral"], rel=1e-3)
    assert lower_bound(sc) == pytest.approx(v, rel=1e-12)


def test_factor_scenario_is_above_its_bound(configs):
    sc = load_scenario(configs / "impulse_1d_factor.json")
    rep = suboptimality_report(sc, "closed_form")
    assert 1.0 <= rep.ratio < 1.05


def test_simulation_estimator_through_scenario(configs, ref):
    c = cfg(configs, "regular_1d_lq")
    c["solver"].update(sim_horizon=400.0, sim_replications=8)
    v, err, _ = scenario_limit_value(load_scenario(c), "simulation")
    assert err > 0
    assert v == pytest.approx(ref["lq_c_sigma1"], abs=max(4 * err, 0.05))
