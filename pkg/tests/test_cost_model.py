import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feedback_tracking.cost_model import (
    ConstantFixedCost,
    CostBreakdown,
    CostSpec,
    CountingCost,
    EpsilonScaling,
    HomogeneousCost,
    L1Cost,
    QuadraticCost,
    check_homogeneity,
    cost_from_config,
    derive_exponents,
    eval_cost,
    renormalize,
)
from feedback_tracking.sde_engine import TargetPath, TimeFunction, TimeGrid
from feedback_tracking.strategies import ControlledPath


def spec_with(zD=2.0, zQ=2.0):
    D = HomogeneousCost(lambda x: np.sum(np.abs(x) ** zD, axis=-1), zD)
    Q = HomogeneousCost(lambda x: np.sum(np.abs(x) ** zQ, axis=-1), zQ)
    return CostSpec(D, Q, ConstantFixedCost(1.0), L1Cost([1.0]))


@pytest.mark.parametrize(
    "beta, zQ, expected",
    [(0.25, 2.0, (1.0, 1.0, 0.75)), (0.5, 2.0, (2.0, 2.0, 1.5)), (0.25, 3.0, (1.25, 1.0, 0.75))],
)
def test_derive_exponents_examples(beta, zQ, expected):
    sc = derive_exponents(beta, spec_with(2.0, zQ))
    assert (sc.beta_Q, sc.beta_F, sc.beta_P) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("beta", [0.0, -1.0])
def test_derive_exponents_rejects_nonpositive_beta(beta):
    with pytest.raises(ValueError):
        derive_exponents(beta, CostSpec.quadratic())


@given(st.floats(1e-3, 10.0), st.floats(0.1, 6.0), st.floats(1.01, 6.0))
def test_exponent_ratio_identities(beta, zD, zQ):
    sc = derive_exponents(beta, spec_with(zD, zQ))
    for ratio in (
        sc.beta_F / (sc.zeta_D + 2 - sc.zeta_F),
        sc.beta_P / (sc.zeta_D + 2 - sc.zeta_P),
        sc.beta_Q / (sc.zeta_D + sc.zeta_Q),
    ):
        assert abs(ratio - beta) <= 1e-14 * beta
    assert sc.beta == beta and sc.zeta_D == zD


def test_degree_invariants_enforced():
    with pytest.raises(ValueError):
        CostSpec(QuadraticCost(1.0), QuadraticCost(1.0), L1Cost([1.0]), L1Cost([1.0]))
    with pytest.raises(ValueError):
        CostSpec(QuadraticCost(1.0), L1Cost([1.0]), ConstantFixedCost(), L1Cost([1.0]))


def _path(dev, controls=None, jumps=(), refl=(), T=1.0, eps=0.1):
    dev = np.asarray(dev, dtype=float).reshape(len(dev), -1)
    n = dev.shape[0] - 1
    d = dev.shape[1]
    grid = TimeGrid.uniform(T, n)
    tgt = TargetPath(grid, np.zeros_like(dev), np.zeros((n, d)), np.zeros((n + 1, d, d)))
    controls = np.zeros((n, d)) if controls is None else np.asarray(controls, float).reshape(n, d)
    jt = np.array([j[0] for j in jumps], float)
    js = np.array([j[1] for j in jumps], float).reshape(-1, d)
    rt = np.array([r[0] for r in refl], float)
    rd = np.array([r[1] for r in refl], float).reshape(-1, d)
    rp = np.array([r[2] for r in refl], float)
    return ControlledPath(
        grid, dev, tgt, controls, eps, 1.0, "impulse",
        jt, np.ones(len(jt), int), np.zeros_like(js), js,
        rt, np.ones(len(rt), int), np.zeros_like(rd), rd, rp,
    )


def test_zero_path_costs_nothing():
    spec = CostSpec.quadratic()
    sc = derive_exponents(1.0, spec)
    assert eval_cost(_path(np.zeros(11)), spec, sc, 0.1).total == 0.0


def test_constant_deviation():
    spec = CostSpec.quadratic()
    sc = derive_exponents(1.0, spec)
    out = eval_cost(_path(np.full(21, 0.3), T=2.0), spec, sc, 0.1)
    assert out.deviation_term == pytest.approx(0.09 * 2.0, rel=1e-12)


def test_single_jump_fixed_term():
    spec = CostSpec.quadratic()
    sc = derive_exponents(0.25, spec)
    eps = 0.01
    out = eval_cost(_path(np.zeros(11), jumps=[(0.5, 0.2)]), spec, sc, eps)
    assert out.fixed_term == pytest.approx(eps**sc.beta_F, rel=1e-14)


def test_reflection_increment_booked_as_proportional():
    spec = CostSpec.quadratic(P=2.0, F=0.0)
    sc = derive_exponents(1.0, spec)
    out = eval_cost(_path(np.zeros(11), refl=[(0.1, -1.0, 0.3), (0.2, 1.0, 0.2)]), spec, sc, 0.5)
    assert out.proportional_term == pytest.approx(0.5**sc.beta_P * 2.0 * 0.5)


def test_regular_term_weighting():
    spec = CostSpec.quadratic(Q=3.0)
    sc = derive_exponents(1.0, spec)
    eps = 0.2
    out = eval_cost(_path(np.zeros(5), controls=np.full(4, 2.0)), spec, sc, eps)
    assert out.regular_term == pytest.approx(eps**sc.beta_Q * 3.0 * 4.0, rel=1e-12)


def test_mismatched_lengths_rejected():
    p = _path(np.zeros(6))
    p.controls = np.zeros((3, 1))
    spec = CostSpec.quadratic()
    with pytest.raises(ValueError):
        eval_cost(p, spec, derive_exponents(1.0, spec), 0.1)


def test_eval_cost_additive_over_intervals():
    rng = np.random.default_rng(0)
    dev = rng.normal(size=41)
    u = rng.normal(size=40)
    spec = CostSpec.quadratic()
    sc = derive_exponents(1.0, spec)
    whole = eval_cost(_path(dev, u, T=4.0), spec, sc, 0.3)
    left = eval_cost(_path(dev[:21], u[:20], T=2.0), spec, sc, 0.3)
    right = eval_cost(_path(dev[20:], u[20:], T=2.0), spec, sc, 0.3)
    np.testing.assert_allclose(whole.terms(), (left + right).terms(), rtol=1e-12)


def test_weights_enter_the_cost():
    spec = CostSpec.quadratic(r=TimeFunction(1.0, 1.0))
    sc = derive_exponents(1.0, spec)
    out = eval_cost(_path(np.ones(1001)), spec, sc, 0.1)
    assert out.deviation_term == pytest.approx(1.5, rel=1e-3)


def test_renormalize_examples():
    sc = EpsilonScaling(0.25, 2.0)
    b = CostBreakdown(1.0, 2.0, 3.0, 4.0)
    assert renormalize(b, 1.0, sc) == b
    assert renormalize(b, 1e-2, sc).total == pytest.approx(100.0)
    assert renormalize(CostBreakdown(), 0.3, sc).total == 0.0
    with pytest.raises(ValueError):
        renormalize(b, 0.0, sc)


@given(
    st.lists(st.floats(0.0, 100.0, allow_subnormal=False), min_size=4, max_size=4),
    st.floats(0.01, 10.0),
    st.floats(1e-3, 1.0),
)
def test_renormalize_is_linear(terms, c, eps):
    sc = EpsilonScaling(0.5, 2.0)
    b = CostBreakdown(*terms)
    lhs = renormalize(b.scaled(c), eps, sc)
    rhs = renormalize(b, eps, sc).scaled(c)
    np.testing.assert_allclose(lhs.terms(), rhs.terms(), rtol=1e-12)
    assert lhs.total == pytest.approx(sum(lhs.terms()))


def _samples(d, n=50, seed=0):
    rng = np.random.default_rng(seed)
    return [(float(rng.uniform(1e-3, 10)), rng.normal(size=(8, d)) * 3) for _ in range(n)]


def test_quadratic_homogeneity():
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    spec = CostSpec(QuadraticCost(S), QuadraticCost(np.eye(2)), ConstantFixedCost(), L1Cost([1, 2]))
    assert check_homogeneity(spec, _samples(2)) < 1e-12


def test_counting_cost_is_exactly_homogeneous():
    spec = CostSpec(QuadraticCost(1.0), QuadraticCost(1.0), CountingCost([1.0]), L1Cost([1.0]))
    F = spec.F
    assert np.all(F(np.array([[0.0], [1.0], [-3.0]])) == [0.0, 1.0, 1.0])
    only_F = CostSpec(*(HomogeneousCost(lambda x: np.zeros(x.shape[:-1]), d) for d in (2, 2, 0, 1)))
    only_F.F = F
    assert check_homogeneity(only_F, _samples(1)) == 0.0


def test_violation_detected():
    bad = HomogeneousCost(lambda x: np.sum(x * x, axis=-1) + 1.0, 2.0)
    spec = CostSpec(bad, QuadraticCost(1.0), ConstantFixedCost(), L1Cost([1.0]))
    assert check_homogeneity(spec, _samples(1)) >= 0.5


def test_built_in_costs_positive_away_from_zero():
    x = np.array([[0.3, -1.0], [0.0, 2.0]])
    spec = CostSpec(QuadraticCost(np.eye(2)), QuadraticCost(np.eye(2)), CountingCost([1, 1]), L1Cost([1, 1]))
    for f in (spec.D, spec.Q, spec.F, spec.P):
        assert np.all(f(x) > 0)


def test_config_roundtrip():
    spec = CostSpec.quadratic(dim=2, D=np.diag([1.0, 4.0]), P=0.5, k=TimeFunction(1.0, 2.0))
    again = cost_from_config(spec.to_config())
    x = np.random.default_rng(1).normal(size=(5, 2))
    for name in "DQFP":
        np.testing.assert_allclose(getattr(spec, name)(x), getattr(again, name)(x))
    assert again.weights_at(0.5) == spec.weights_at(0.5)


def test_config_rejects_unknown_kind():
    cfg = CostSpec.quadratic().to_config()
    cfg["D"] = {"kind": "cubic"}
    with pytest.raises(ValueError):
        cost_from_config(cfg)
