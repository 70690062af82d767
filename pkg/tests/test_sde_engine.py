import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feedback_tracking.sde_engine import (
    FactorDiffusion,
    OUFactor,
    TargetModel,
    TimeFunction,
    TimeGrid,
    brownian_increments,
    child_seed,
    cholesky_factors,
    simulate_target,
)


def test_increments_are_standard_normal_scaled():
    n = 10**6
    dw = brownian_increments(TimeGrid(0.0, float(n), 1.0), 1, seed=11)
    assert abs(dw.mean()) < 4 / np.sqrt(n)
    assert dw.var() == pytest.approx(1.0, rel=0.01)


def test_empty_grid_gives_empty_increments():
    dw = brownian_increments(TimeGrid(0.0, 0.0, 0.1), 2, seed=0)
    assert dw.shape == (0, 2)


def test_increments_are_reproducible():
    g = TimeGrid.uniform(1.0, 100)
    assert np.array_equal(brownian_increments(g, 3, 5), brownian_increments(g, 3, 5))
    assert not np.array_equal(brownian_increments(g, 3, 5), brownian_increments(g, 3, 6))


def test_nonpositive_dt_rejected():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, -0.1)


def test_no_noise_no_drift_is_zero():
    m = TargetModel.constant([0.0], [[0.0]])
    p = simulate_target(m, TimeGrid.uniform(1.0, 50), 3)
    assert np.all(p.values == 0.0)


def test_pure_drift_is_exact():
    m = TargetModel.constant([0.7, -2.0], np.zeros((2, 2)))
    p = simulate_target(m, TimeGrid.uniform(3.0, 300), 0)
    np.testing.assert_allclose(p.values[-1], [2.1, -6.0], rtol=1e-12)


def test_constant_coefficient_variance():
    # Euler is exact in law here: Var X_T = sigma^2 T
    sigma2, T, R = 2.5, 1.5, 10_000
    m = TargetModel.constant([0.0], [[sigma2]])
    g = TimeGrid.uniform(T, 10)
    xT = np.array([simulate_target(m, g, s).values[-1, 0] for s in range(R)])
    var = xT.var(ddof=1)
    se = sigma2 * T * np.sqrt(2.0 / (R - 1))
    assert abs(var - sigma2 * T) < 3 * se


def test_constant_coefficient_mean_and_covariance_2d():
    b = np.array([0.5, -1.0])
    a = np.array([[1.0, 0.3], [0.3, 0.5]])
    T, R = 2.0, 4000
    m = TargetModel.constant(b, a)
    g = TimeGrid.uniform(T, 8)
    xT = np.array([simulate_target(m, g, s).values[-1] for s in range(R)])
    se = np.sqrt(np.diag(a) * T / R)
    assert np.all(np.abs(xT.mean(axis=0) - b * T) < 4 * se)
    np.testing.assert_allclose(np.cov(xT.T), a * T, atol=0.15)


def test_non_pd_diffusion_fails():
    m = TargetModel.constant([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(np.linalg.LinAlgError):
        simulate_target(m, TimeGrid.uniform(1.0, 4), 0)


@given(
    st.lists(st.floats(0.1, 5.0), min_size=2, max_size=2),
    st.floats(-0.9, 0.9),
    st.floats(0.0, 2.0),
)
def test_cholesky_reconstructs(diag, rho, slope):
    s = np.sqrt(diag)
    a0 = np.array([[diag[0], rho * s[0] * s[1]], [rho * s[0] * s[1], diag[1]]])
    f = TimeFunction(a0, slope * np.eye(2))
    a = f(np.linspace(0.0, 1.0, 7))
    L = cholesky_factors(a)
    assert np.max(np.abs(L @ np.swapaxes(L, -1, -2) - a)) < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_target_path_is_determined_by_seed(seed):
    m = TargetModel.constant([0.1], [[1.0]])
    g = TimeGrid.uniform(1.0, 20)
    p1, p2 = simulate_target(m, g, seed), simulate_target(m, g, seed)
    assert np.array_equal(p1.values, p2.values)


def test_time_varying_coefficients():
    m = TargetModel(1, TimeFunction([0.0], [1.0]), TimeFunction([[1.0]]))
    g = TimeGrid.uniform(1.0, 1000)
    b, _ = m.coefficients(g.times)
    p = simulate_target(TargetModel(1, m.drift, TimeFunction([[0.0]])), g, 0)
    # left-point Euler of int_0^1 t dt
    assert p.values[-1, 0] == pytest.approx(np.sum(g.times[:-1]) * g.dt, rel=1e-12)
    assert b[-1, 0] == pytest.approx(1.0)


def test_factor_diffusion_stays_positive():
    model = TargetModel(
        1, TimeFunction([0.0]), FactorDiffusion(TimeFunction([[1.0]]), 1.0), OUFactor(2.0, 0.5)
    )
    p = simulate_target(model, TimeGrid.uniform(5.0, 500), 4)
    assert np.all(p.diffusion_values > 0)
    assert p.factor_values.shape == (501,)
    assert np.allclose(model.diffusion_at(0.3), [[1.0]])


def test_ou_factor_stationary_variance():
    f = OUFactor(kappa=1.0, eta=1.0)
    z = f.simulate(TimeGrid.uniform(20_000.0, 200_000), 7)
    assert z[1000:].var() == pytest.approx(0.5, rel=0.05)


def test_child_seeds_differ():
    a = np.random.default_rng(child_seed(3, 0)).random()
    b = np.random.default_rng(child_seed(3, 1)).random()
    assert a != b


def test_coarsen_keeps_values_and_sums_increments():
    m = TargetModel.constant([0.0], [[1.0]])
    p = simulate_target(m, TimeGrid.uniform(1.0, 12), 2)
    c = p.coarsen(4)
    assert c.grid.n_steps == 3
    np.testing.assert_array_equal(c.values, p.values[::4])
    np.testing.assert_allclose(c.brownian.sum(), p.brownian.sum())
    with pytest.raises(ValueError):
        p.coarsen(5)


def test_time_function_roundtrip():
    f = TimeFunction([[1.0, 0.0], [0.0, 2.0]], [[0.5, 0.0], [0.0, 0.0]])
    g = TimeFunction.from_config(f.to_dict())
    t = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(f(t), g(t))
    assert not f.is_constant and TimeFunction(3.0).is_constant
