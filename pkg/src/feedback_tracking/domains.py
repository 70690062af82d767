"""Shapes, feedback fields, jump rules and reflection directions.

Everything here lives in *unit-scale* coordinates: the strategy at level
``eps`` acts on ``y = eps**(-beta) x``.  Domains are ellipsoids
``{y : y^T A_t y < 1}``; the interval ``(-L_t, L_t)`` is the one-dimensional
case ``A_t = 1 / L_t**2``.

Batched arithmetic is written with explicit loops over the (small) state
dimension instead of BLAS calls so that a replication gives bit-identical
results whether it is simulated alone or inside a batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde_engine import TimeFunction

Array = np.ndarray

__all__ = [
    "quad",
    "matvec",
    "EllipsoidDomain",
    "IntervalDomain",
    "ZeroField",
    "LinearField",
    "ProportionalJump",
    "QuadraticPotential",
    "segment_exit_fraction",
    "project_to_boundary",
    "boundary_direction",
    "sample_boundary",
    "freeze",
]


def quad(y: Array, A: Array) -> Array:
    """``y^T A y`` row by row for ``y`` of shape ``(R, d)``."""
    d = A.shape[0]
    s = A[0, 0] * y[:, 0] * y[:, 0]
    for i in range(d):
        for j in range(d):
            if i or j:
                s = s + A[i, j] * y[:, i] * y[:, j]
    return s


def matvec(M: Array, y: Array) -> Array:
    """``y @ M.T`` row by row, loop order fixed."""
    d = M.shape[0]
    out = np.empty_like(y)
    for i in range(d):
        acc = M[i, 0] * y[:, 0]
        for j in range(1, d):
            acc = acc + M[i, j] * y[:, j]
        out[:, i] = acc
    return out


def freeze(fn, t: float) -> TimeFunction:
    """Constant :class:`TimeFunction` equal to ``fn(t)``."""
    return TimeFunction(np.asarray(fn(np.asarray(float(t))), dtype=float))


class EllipsoidDomain:
    """Moving ellipsoid ``{y : y^T A_t y < 1}``.

    ``matrix`` is any vectorised callable ``times -> (n, d, d)``; a constant or
    affine :class:`TimeFunction` is the common case.
    """

    kind = "ellipsoid"

    def __init__(self, matrix):
        if not callable(matrix):
            matrix = TimeFunction(np.atleast_2d(np.asarray(matrix, dtype=float)))
        self.matrix = matrix
        A0 = self.matrix_at(0.0)
        self.dim = A0.shape[0]
        if np.any(np.linalg.eigvalsh(A0) <= 0):
            raise ValueError("domain matrix must be positive definite")

    def matrix_at(self, t: float) -> Array:
        return np.asarray(self.matrix(np.asarray(float(t))), dtype=float)

    def matrices(self, times: Array) -> Array:
        return np.asarray(self.matrix(np.asarray(times, dtype=float)), dtype=float)

    @property
    def is_constant(self) -> bool:
        return getattr(self.matrix, "is_constant", False)

    def contains(self, y: Array, t: float = 0.0) -> Array:
        return quad(np.atleast_2d(y), self.matrix_at(t)) < 1.0

    def semi_axes(self, t: float = 0.0) -> Array:
        return 1.0 / np.sqrt(np.linalg.eigvalsh(self.matrix_at(t)))

    def at(self, t: float) -> "EllipsoidDomain":
        return EllipsoidDomain(freeze(self.matrix, t))

    def to_config(self) -> dict:
        if isinstance(self.matrix, TimeFunction):
            return {"kind": "ellipsoid", "matrix": self.matrix.to_dict()}
        return {"kind": "ellipsoid", "matrix": self.matrix_at(0.0).tolist()}


class _InverseSquare:
    """``t -> [[1 / L_t**2]]`` for an interval half-width ``L_t``."""

    def __init__(self, half_width: TimeFunction):
        self.half_width = half_width

    @property
    def is_constant(self) -> bool:
        return self.half_width.is_constant

    def __call__(self, t):
        L = np.asarray(self.half_width(t), dtype=float)
        return (1.0 / L**2)[..., None, None]


class IntervalDomain(EllipsoidDomain):
    """Symmetric interval ``(-L_t, L_t)`` in dimension one."""

    kind = "interval"

    def __init__(self, half_width):
        if not isinstance(half_width, TimeFunction):
            half_width = TimeFunction(float(half_width))
        if half_width.value.ndim != 0:
            raise ValueError("half-width must be scalar")
        self.half_width = half_width
        super().__init__(_InverseSquare(half_width))

    def half_width_at(self, t: float) -> float:
        return float(self.half_width(t))

    def at(self, t: float) -> "IntervalDomain":
        return IntervalDomain(self.half_width_at(t))

    def to_config(self) -> dict:
        return {"kind": "interval", "half_width": self.half_width.to_dict()}


class ZeroField:
    """No regular control inside the domain."""

    is_zero = True

    def __call__(self, t: float, y: Array) -> Array:
        return np.zeros_like(y)

    def matrix_at(self, t: float, dim: int = 1) -> Array:
        return np.zeros((dim, dim))

    def at(self, t: float) -> "ZeroField":
        return self

    def to_config(self) -> dict:
        return {"kind": "zero"}


class LinearField:
    """Mean-reverting feedback ``U_t(y) = -Sigma_t y``."""

    is_zero = False

    def __init__(self, sigma):
        if not callable(sigma):
            sigma = TimeFunction(np.atleast_2d(np.asarray(sigma, dtype=float)))
        self.sigma = sigma

    def matrix_at(self, t: float, dim: int | None = None) -> Array:
        return np.atleast_2d(np.asarray(self.sigma(np.asarray(float(t)))))

    def __call__(self, t: float, y: Array) -> Array:
        y = np.asarray(y, dtype=float)
        flat = np.atleast_2d(y)
        return -matvec(self.matrix_at(t), flat).reshape(y.shape)

    def at(self, t: float) -> "LinearField":
        return LinearField(freeze(self.sigma, t))

    def to_config(self) -> dict:
        return {"kind": "linear", "matrix": self.sigma.to_dict()}


class ProportionalJump:
    """Jump ``xi_t(y) = -alpha_t y`` toward the origin; ``alpha = 1`` recentres."""

    def __init__(self, alpha=1.0):
        if not isinstance(alpha, TimeFunction):
            alpha = TimeFunction(float(alpha))
        self.alpha = alpha
        a = self.alpha(np.linspace(0.0, 1.0, 5))
        # alpha = 0 is accepted so that the admissibility check can reject it
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("alpha must lie in [0, 1]")

    def alpha_at(self, t: float) -> float:
        return float(self.alpha(t))

    def __call__(self, t: float, y: Array) -> Array:
        return -self.alpha_at(t) * np.asarray(y, dtype=float)

    def at(self, t: float) -> "ProportionalJump":
        return ProportionalJump(self.alpha_at(t))

    def to_config(self) -> dict:
        return {"kind": "proportional", "alpha": self.alpha.to_dict()}


@dataclass
class QuadraticPotential:
    """``V(y) = y^T M y`` (default ``|y|^2``)."""

    matrix: Array | None = None

    def _M(self, d: int) -> Array:
        return np.eye(d) if self.matrix is None else np.asarray(self.matrix, dtype=float)

    def value(self, y: Array) -> Array:
        y = np.atleast_2d(y)
        return quad(y, self._M(y.shape[1]))

    def grad(self, y: Array) -> Array:
        y = np.atleast_2d(y)
        M = self._M(y.shape[1])
        return matvec(M + M.T, y)

    def hess(self, y: Array) -> Array:
        y = np.atleast_2d(y)
        M = self._M(y.shape[1])
        return np.broadcast_to(M + M.T, (y.shape[0],) + M.shape)


def segment_exit_fraction(y0: Array, y1: Array, A: Array) -> float:
    """Fraction ``theta`` in ``[0, 1]`` where ``y0 + theta (y1 - y0)`` meets the boundary.

    Assumes ``y0`` is inside and ``y1`` outside.
    """
    delta = y1 - y0
    a2 = float(delta @ A @ delta)
    b = 2.0 * float(y0 @ A @ delta)
    c = float(y0 @ A @ y0) - 1.0
    if a2 <= 0.0:
        return 1.0
    disc = max(b * b - 4.0 * a2 * c, 0.0)
    theta = -2.0 * c / (b + np.sqrt(disc)) if b + np.sqrt(disc) > 0 else 1.0
    return float(min(max(theta, 0.0), 1.0))


def _normal_projection(y: Array, A: Array) -> Array:
    lam, V = np.linalg.eigh(A)
    z = V.T @ y

    def g(mu):
        return float(np.sum(lam * z**2 / (1.0 + mu * lam) ** 2)) - 1.0

    lo, hi = 0.0, 1.0
    while g(hi) > 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    mu = 0.5 * (lo + hi)
    yb = V @ (z / (1.0 + mu * lam))
    # land exactly on the boundary
    return yb / np.sqrt(float(yb @ A @ yb))


def project_to_boundary(y: Array, A: Array, direction: str = "radial") -> Array:
    """Map exterior points back to the ellipsoid boundary.

    ``radial`` rescales along the ray to the origin; ``normal`` is the
    Euclidean projection, so the displacement is along the inward normal.
    Works row-wise on ``(R, d)`` arrays.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if direction == "radial" or y.shape[1] == 1:
        return y / np.sqrt(quad(y, A))[:, None]
    if direction == "normal":
        return np.array([_normal_projection(row, A) for row in y])
    raise ValueError(f"unknown direction field {direction!r}")


def boundary_direction(yb: Array, A: Array, direction: str = "radial") -> Array:
    """Inward direction at boundary points, normalised to the l1 simplex."""
    yb = np.atleast_2d(np.asarray(yb, dtype=float))
    if direction == "radial":
        g = -yb
    elif direction == "normal":
        g = -matvec(A, yb)
    elif direction == "outward":
        g = yb
    else:
        raise ValueError(f"unknown direction field {direction!r}")
    return g / np.abs(g).sum(axis=1, keepdims=True)


def sample_boundary(A: Array, n: int, rng: np.random.Generator) -> Array:
    """``n`` points on ``{y^T A y = 1}`` (both endpoints in dimension one)."""
    d = A.shape[0]
    if d == 1:
        L = 1.0 / np.sqrt(A[0, 0])
        return np.array([[-L], [L]])
    u = rng.standard_normal((n, d))
    return u / np.sqrt(quad(u, A))[:, None]
