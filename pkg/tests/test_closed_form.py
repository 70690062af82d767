import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedback_tracking.closed_form import (
    _w_generator_fd,
    impulse_interval_cost,
    impulse_lower_bound,
    matrix_B_residual,
    ou_stationary_covariance,
    regular_linear_cost,
    singular_interval_cost,
    solve_lq,
    solve_matrix_B,
    sym_inv_sqrt,
    sym_sqrt,
    verify_w_identity,
    w_function,
    w_generator,
)
from feedback_tracking.domains import EllipsoidDomain, IntervalDomain
from feedback_tracking.stationary import markov_chain_oracle
from feedback_tracking.strategies import ImpulseTriplet


def test_scalar_B(ref):
    sol = solve_matrix_B(1.0, 1.0)
    assert sol.B[0, 0] == pytest.approx(ref["B_a1"], rel=1e-14)
    assert sol.residual < 1e-10
    assert sol.I_value == pytest.approx(ref["impulse_c_star"], rel=1e-14)


def test_scalar_B_with_larger_diffusion(ref):
    sol = solve_matrix_B(4.0, 1.0)
    assert sol.B[0, 0] == pytest.approx(ref["B_a4"], rel=1e-14)
    assert sol.I_value == pytest.approx(ref["trace_aB_a4"], rel=1e-14)


def test_diagonal_2d_B(ref):
    sol = solve_matrix_B(np.eye(2), np.diag([1.0, 4.0]))
    np.testing.assert_allclose(np.diag(sol.B), ref["B_2d_diag"], rtol=1e-13)
    assert sol.I_value == pytest.approx(ref["trace_aB_2d"], rel=1e-13)


def test_B_vanishes_with_deviation_penalty():
    for s in (1e-4, 1e-8, 0.0):
        sol = solve_matrix_B(np.eye(2), s * np.eye(2))
        assert np.abs(sol.B).max() <= 2 * np.sqrt(s) + 1e-300
        assert sol.residual < 1e-10


def test_B_scaling_covariance():
    # in d = 1, 3 m^2 = 2 lambda, so B scales like sqrt(Sigma_D)
    b1 = solve_matrix_B(2.0, 1.0).B[0, 0]
    b4 = solve_matrix_B(2.0, 4.0).B[0, 0]
    assert b4 == pytest.approx(2 * b1, rel=1e-13)


def _spd(rng, d, cond):
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    lam = np.exp(rng.uniform(0, np.log(cond), d))
    lam[0], lam[-1] = 1.0, cond
    return (Q * lam) @ Q.T


@settings(max_examples=100)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.floats(1.0, 1e3), st.floats(1.0, 1e3))
def test_matrix_equation_residual_random(d, seed, ca, cs):
    rng = np.random.default_rng(seed)
    a = _spd(rng, d, ca if d > 1 else 1.0)
    S = _spd(rng, d, cs if d > 1 else 1.0)
    sol = solve_matrix_B(a, S)
    assert sol.residual < 1e-10 * max(1.0, np.linalg.norm(a @ S, 2))
    assert np.all(np.linalg.eigvalsh(sol.B) > 0)
    np.testing.assert_allclose(sol.B, sol.B.T)


def test_non_spd_inputs_rejected():
    with pytest.raises(ValueError):
        solve_matrix_B([[1.0, 0.0], [0.0, -1.0]], np.eye(2))
    with pytest.raises(ValueError):
        solve_matrix_B(np.eye(2), [[1.0, 2.0], [0.0, 1.0]])


def test_lower_bound_examples(ref):
    I, A = impulse_lower_bound(1.0, 1.0, 1.0)
    assert I == pytest.approx(ref["impulse_c_star"], rel=1e-14)
    assert 1 / np.sqrt(A[0, 0]) == pytest.approx(ref["impulse_L_star"], rel=1e-14)
    I4, A4 = impulse_lower_bound(1.0, 1.0, 4.0)
    assert I4 == pytest.approx(2 * I, rel=1e-14)
    assert 1 / np.sqrt(A4[0, 0]) == pytest.approx(np.sqrt(2) / np.sqrt(A[0, 0]), rel=1e-14)
    # r = k gives the threshold x^T B x < 2
    sol = solve_matrix_B(np.eye(2), np.diag([1.0, 2.0]))
    _, A = impulse_lower_bound(np.eye(2), 3.0, 3.0, np.diag([1.0, 2.0]))
    np.testing.assert_allclose(A, sol.B / 2, rtol=1e-14)


def test_w_function_and_generator():
    B = solve_matrix_B(np.eye(2), np.diag([1.0, 4.0])).B
    a = np.eye(2)
    assert w_generator(np.zeros(2), B, a)[0] == pytest.approx(np.trace(a @ B))
    far = np.array([[3.0, 3.0]])
    assert w_function(far, B)[0] == 1.0 and w_generator(far, B, a)[0] == 0.0
    # continuity of w and of its gradient across the boundary
    u = np.array([1.0, 0.5])
    u /= np.sqrt(u @ B @ u)
    inside, outside = np.sqrt(2) * u * (1 - 1e-9), np.sqrt(2) * u * (1 + 1e-9)
    assert w_function(inside[None], B)[0] == pytest.approx(w_function(outside[None], B)[0], abs=1e-8)


def test_w_generator_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = _spd(rng, 2, 5.0)
    B = solve_matrix_B(a, _spd(rng, 2, 3.0)).B
    x = rng.normal(size=(50, 2)) * 0.3
    x = x[np.einsum("ni,ij,nj->n", x, B, x) < 1.8]
    np.testing.assert_allclose(w_generator(x, B, a), _w_generator_fd(x, B, a), atol=1e-6)


def test_w_identity_on_oracle_1d():
    sol = solve_matrix_B(1.0, 1.0)
    pair = markov_chain_oracle(1.0, ImpulseTriplet(EllipsoidDomain(sol.B / 2)), 400)
    rep = verify_w_identity(sol.B, 1.0, 1.0, pair)
    assert rep.defect < 1e-2
    assert rep.generator_error < 1e-5


@pytest.mark.parametrize(
    "D, G, var, cost", [(1.0, 1.0, 0.5, 1.0), (4.0, 2.0, 0.25, 2.0)]
)
def test_lq_scalar_examples(D, G, var, cost, ref):
    lq = solve_lq(1.0, D, 1.0, 1.0, 1.0)
    assert lq.G[0, 0] == pytest.approx(G)
    assert lq.feedback_matrix[0, 0] == pytest.approx(G)
    assert lq.stationary_covariance[0, 0] == pytest.approx(var)
    assert lq.I_value == pytest.approx(cost)
    # the cost of the induced feedback, from the OU moments
    c = regular_linear_cost(G, dcoef=D)["total"]
    assert c == pytest.approx(lq.I_value, rel=1e-14)
    if D == 4.0:
        assert lq.I_value == pytest.approx(ref["lq_c_D4"], rel=1e-12)
    else:
        assert lq.I_value == pytest.approx(ref["lq_c_sigma1"], rel=1e-12)


def test_lq_degenerate():
    lq = solve_lq(1.0, 1.0, 1.0, 0.0, 1.0)
    assert lq.degenerate and np.all(lq.G == 0) and lq.I_value == 0.0


@settings(max_examples=60)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_lq_residuals_random(d, seed, r, l):
    rng = np.random.default_rng(seed)
    a, D, Q = (_spd(rng, d, 50.0 if d > 1 else 1.0) for _ in range(3))
    lq = solve_lq(a, D, Q, r, l)
    scale = r * l * np.linalg.norm(D, 2)
    assert lq.residual(D, Q, r, l) < 1e-10 * max(1.0, scale)
    S = lq.feedback_matrix
    target = (r / l) * np.linalg.solve(Q, D)
    assert np.linalg.norm(S @ S - target, 2) < 1e-10 * max(1.0, np.linalg.norm(target, 2))
    assert np.linalg.eigvals(S).real.min() > 0
    C = lq.stationary_covariance
    np.testing.assert_allclose(S @ C + C @ S.T, a, atol=1e-10 * np.abs(a).max())
    # optimal cost equals the OU cost of the feedback: r tr(D C) + l tr(S^T Q S C)
    cost = r * np.trace(D @ C) + l * np.trace(S.T @ Q @ S @ C)
    assert cost == pytest.approx(lq.I_value, rel=1e-9)


@pytest.mark.parametrize(
    "S, a, C",
    [(1.0, 1.0, [[0.5]]), (2.0, 1.0, [[0.25]]), (np.eye(2), np.eye(2), 0.5 * np.eye(2))],
)
def test_ou_covariance_examples(S, a, C):
    np.testing.assert_allclose(ou_stationary_covariance(S, a), C, rtol=1e-14)


def test_ou_covariance_rejects_unstable():
    with pytest.raises(ValueError):
        ou_stationary_covariance(-1.0, 1.0)


def test_matrix_square_roots():
    M = _spd(np.random.default_rng(3), 3, 100.0)
    R = sym_sqrt(M)
    assert np.abs(R @ R - M).max() < 1e-12 * np.abs(M).max()
    assert np.abs(sym_inv_sqrt(M) @ R - np.eye(3)).max() < 1e-12


def test_interval_reference_curves(ref):
    assert impulse_interval_cost(ref["impulse_L_star"])["total"] == pytest.approx(ref["impulse_c_star"])
    assert singular_interval_cost(ref["singular_L_star"])["total"] == pytest.approx(ref["singular_c_star"])
    assert impulse_interval_cost(2 * ref["impulse_L_star"])["total"] == pytest.approx(
        ref["impulse_c_doubled"], rel=1e-14
    )
    assert regular_linear_cost(2.0)["total"] == pytest.approx(ref["lq_c_sigma2"])


def test_residual_detects_wrong_B():
    assert matrix_B_residual(np.array([[1.0]]), 1.0, 1.0) > 0.1
