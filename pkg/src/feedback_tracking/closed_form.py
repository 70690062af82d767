"""Explicit solutions for quadratic tracking problems.

* Fixed-cost impulse tracking: the SPD solution ``B`` of

      2 (a^1/2 B a^1/2)^2 + (a^1/2 B a^1/2) Tr(a^1/2 B a^1/2) = 2 a^1/2 Sigma_D a^1/2,

  the lower bound ``Tr(a B) sqrt(r k)`` and the optimal ellipsoid
  ``{x : x^T B x < 2 sqrt(k / r)}``.
* Linear-quadratic regular tracking: ``G Q^-1 G = r l D``, feedback
  ``u = -(1/l) Q^-1 G x`` and the bound ``Tr(a G)``.
* Stationary covariance of a linear feedback: ``S C + C S^T = a``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.optimize import brentq

Array = np.ndarray

__all__ = [
    "sym_sqrt",
    "sym_inv_sqrt",
    "MatrixEquationSolution",
    "LQSolution",
    "WIdentityReport",
    "solve_matrix_B",
    "matrix_B_residual",
    "impulse_lower_bound",
    "w_function",
    "w_generator",
    "verify_w_identity",
    "solve_lq",
    "ou_stationary_covariance",
    "impulse_interval_cost",
    "singular_interval_cost",
    "regular_linear_cost",
]


def _as_matrix(m) -> Array:
    return np.atleast_2d(np.asarray(m, dtype=float))


def _require_spd(m: Array, name: str) -> None:
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12 * (1 + np.abs(m).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() <= 0:
        raise ValueError(f"{name} must be positive definite")


def sym_sqrt(m) -> Array:
    lam, V = np.linalg.eigh(_as_matrix(m))
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def sym_inv_sqrt(m) -> Array:
    lam, V = np.linalg.eigh(_as_matrix(m))
    return (V / np.sqrt(lam)) @ V.T


@dataclass
class MatrixEquationSolution:
    B: Array
    residual: float
    I_value: float
    optimal_domain_matrix: Array
    trace_M: float


def matrix_B_residual(B, a, SigmaD) -> float:
    """Operator-norm residual of the impulse matrix equation for a candidate ``B``."""
    a = _as_matrix(a)
    ah = sym_sqrt(a)
    M = ah @ _as_matrix(B) @ ah
    R = 2.0 * M @ M + M * np.trace(M) - 2.0 * ah @ _as_matrix(SigmaD) @ ah
    return float(np.linalg.norm(R, 2))


def solve_matrix_B(a, SigmaD, r: float = 1.0, k: float = 1.0) -> MatrixEquationSolution:
    """Solve the impulse matrix equation by diagonalising ``S = a^1/2 Sigma_D a^1/2``.

    In the eigenbasis of ``S`` the solution is diagonal with entries
    ``m_i = (-t + sqrt(t^2 + 16 lambda_i)) / 4`` where ``t = sum_i m_i``; the
    trace ``t`` is the root of a decreasing scalar function on
    ``[0, sum_i sqrt(lambda_i)]``.
    """
    a = _as_matrix(a)
    SigmaD = _as_matrix(SigmaD)
    _require_spd(a, "a")
    if not np.allclose(SigmaD, SigmaD.T):
        raise ValueError("Sigma_D must be symmetric")
    if np.linalg.eigvalsh(SigmaD).min() < 0:
        raise ValueError("Sigma_D must be positive semidefinite")
    ah = sym_sqrt(a)
    aih = sym_inv_sqrt(a)
    S = ah @ SigmaD @ ah
    lam, O = np.linalg.eigh(0.5 * (S + S.T))
    lam = np.clip(lam, 0.0, None)

    def m_of(t):
        return (-t + np.sqrt(t * t + 16.0 * lam)) / 4.0

    hi = float(np.sum(np.sqrt(lam)))
    if hi == 0.0:
        t = 0.0
    else:
        g = lambda t: float(np.sum(m_of(t))) - t
        if not (g(0.0) > 0 >= g(hi)):
            raise RuntimeError("trace fixed point not bracketed")
        t = brentq(g, 0.0, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    M = (O * m_of(t)) @ O.T
    B = aih @ M @ aih
    B = 0.5 * (B + B.T)
    I_value = float(np.trace(a @ B))
    threshold = 2.0 * np.sqrt(k / r)
    return MatrixEquationSolution(
        B=B,
        residual=matrix_B_residual(B, a, SigmaD),
        I_value=I_value,
        optimal_domain_matrix=B / threshold,
        trace_M=float(t),
    )


def impulse_lower_bound(a, r: float, k: float, SigmaD=None) -> tuple[float, Array]:
    """Lower bound ``Tr(a B) sqrt(r k)`` and the optimal domain matrix.

    The optimal domain is ``{x : x^T B x < 2 sqrt(k / r)}``, returned as the
    matrix ``A`` of ``{x : x^T A x < 1}``.
    """
    a = _as_matrix(a)
    if SigmaD is None:
        SigmaD = np.eye(a.shape[0])
    sol = solve_matrix_B(a, SigmaD, r, k)
    return sol.I_value * np.sqrt(r * k), sol.optimal_domain_matrix


def w_function(x, B) -> Array:
    """``q - q^2/4`` inside ``{q < 2}``, 1 outside, with ``q = x^T B x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    q = np.einsum("ni,ij,nj->n", x, _as_matrix(B), x)
    return np.where(q < 2.0, q - q * q / 4.0, 1.0)


def w_generator(x, B, a) -> Array:
    """``1/2 sum a_ij d_ij w`` from the closed form: ``Tr(aB)(1 - q/2) - x^T B a B x`` inside."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B = _as_matrix(B)
    a = _as_matrix(a)
    q = np.einsum("ni,ij,nj->n", x, B, x)
    BaB = B @ a @ B
    inside = np.trace(a @ B) * (1.0 - q / 2.0) - np.einsum("ni,ij,nj->n", x, BaB, x)
    return np.where(q < 2.0, inside, 0.0)


def _w_generator_fd(x, B, a, h=1e-4) -> Array:
    # central second differences of w, independent of the closed form
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = _as_matrix(a)
    d = x.shape[1]
    out = np.zeros(len(x))
    E = np.eye(d) * h
    for i in range(d):
        for j in range(d):
            f = lambda s, t: w_function(x + s * E[i] + t * E[j], B)
            dij = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / (4 * h * h)
            out += 0.5 * a[i, j] * dij
    return out


@dataclass
class WIdentityReport:
    defect: float
    deviation_integral: float
    boundary_mass: float
    trace_aB: float
    generator_error: float


def verify_w_identity(B, a, SigmaD, pair, n_points: int = 64, seed: int = 0) -> WIdentityReport:
    """Check ``int x^T Sigma_D x dpi + nu(boundary) = Tr(a B)`` on a stationary pair.

    ``pair`` is an :class:`~feedback_tracking.stationary.OccupationPair` for
    the domain ``{x^T B x < 2}`` with jump ``xi(x) = -x``.  The closed-form
    generator of ``w`` is also compared with finite differences at random
    points away from ``{x^T B x = 2}``.
    """
    B = _as_matrix(B)
    SigmaD = _as_matrix(SigmaD)
    a = _as_matrix(a)
    pts = pair.interior_points
    dev = float(np.sum(pair.interior_mass * np.einsum("ni,ij,nj->n", pts, SigmaD, pts)))
    nu = float(pair.total_boundary_mass)
    tr = float(np.trace(a @ B))
    rng = np.random.default_rng(seed)
    d = B.shape[0]
    u = rng.standard_normal((n_points, d))
    u /= np.sqrt(np.einsum("ni,ij,nj->n", u, B, u))[:, None]
    s = rng.uniform(0.0, 2.0, n_points)
    s = s[np.abs(s - np.sqrt(2.0)) > 0.05]
    x = u[: len(s)] * s[:, None]
    gen_err = float(np.max(np.abs(w_generator(x, B, a) - _w_generator_fd(x, B, a))))
    return WIdentityReport(abs(dev + nu - tr), dev, nu, tr, gen_err)


@dataclass
class LQSolution:
    G: Array
    feedback_matrix: Array
    I_value: float
    stationary_covariance: Array | None
    degenerate: bool = False

    def residual(self, D, Q, r, l) -> float:
        D, Q = _as_matrix(D), _as_matrix(Q)
        return float(np.linalg.norm(self.G @ np.linalg.solve(Q, self.G) - r * l * D, 2))


def solve_lq(a, D, Q, r: float = 1.0, l: float = 1.0) -> LQSolution:
    """Explicit solution of the ergodic linear-quadratic tracking problem.

    ``G = Q^1/2 sqrt(r l Q^-1/2 D Q^-1/2) Q^1/2`` is the SPD solution of
    ``G Q^-1 G = r l D``.  Substituting ``w(x) = x^T G x`` in the ergodic HJB
    equation gives ``1/2 sum a_ij d_ij w = Tr(a G)``, so the optimal cost is
    ``Tr(a G)``.
    """
    a, D, Q = _as_matrix(a), _as_matrix(D), _as_matrix(Q)
    _require_spd(Q, "Q")
    _require_spd(a, "a")
    if r < 0 or l <= 0:
        raise ValueError("weights must satisfy r >= 0, l > 0")
    d = a.shape[0]
    if r == 0:
        Z = np.zeros((d, d))
        return LQSolution(Z, Z, 0.0, None, degenerate=True)
    _require_spd(D, "D")
    Qh, Qih = sym_sqrt(Q), sym_inv_sqrt(Q)
    G = Qh @ sym_sqrt(r * l * Qih @ D @ Qih) @ Qh
    G = 0.5 * (G + G.T)
    S = np.linalg.solve(Q, G) / l
    C = ou_stationary_covariance(S, a)
    return LQSolution(G, S, float(np.trace(a @ G)), C)


def ou_stationary_covariance(Sigma_fb, a) -> Array:
    """Solve ``S C + C S^T = a`` for the law of ``dX = -S X dt + sqrt(a) dW``."""
    S, a = _as_matrix(Sigma_fb), _as_matrix(a)
    if np.linalg.eigvals(S).real.min() <= 0:
        raise ValueError("feedback matrix must have eigenvalues with positive real part")
    C = solve_continuous_lyapunov(S, a)
    return 0.5 * (C + C.T)


# one-dimensional limit costs used as independent references


def impulse_interval_cost(L: float, a=1.0, r=1.0, k=1.0, sigma_d=1.0) -> dict[str, float]:
    """``(-L, L)`` with recentring jumps and no drift: tent density, jump rate ``a / L^2``."""
    dev = r * sigma_d * L * L / 6.0
    fixed = k * a / (L * L)
    return {"deviation": dev, "fixed": fixed, "total": dev + fixed}


def singular_interval_cost(L: float, a=1.0, r=1.0, h=1.0, sigma_d=1.0) -> dict[str, float]:
    """Reflection on ``(-L, L)``: uniform density, local time rate ``a / (2L)``."""
    dev = r * sigma_d * L * L / 3.0
    prop = h * a / (2.0 * L)
    return {"deviation": dev, "proportional": prop, "total": dev + prop}


def regular_linear_cost(sigma: float, a=1.0, r=1.0, l=1.0, dcoef=1.0, qcoef=1.0) -> dict[str, float]:
    """``U(x) = -sigma x``: Gaussian with variance ``a / (2 sigma)``."""
    var = a / (2.0 * sigma)
    dev = r * dcoef * var
    reg = l * qcoef * sigma * sigma * var
    return {"deviation": dev, "regular": reg, "total": dev + reg}
