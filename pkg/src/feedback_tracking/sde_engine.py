"""Euler-Maruyama simulation of the target process.

The target solves ``dX°_t = b_t dt + sqrt(a_t) dW_t`` with ``X°_0 = 0``.
Coefficients are deterministic functions of time, optionally modulated by a
scalar Ornstein-Uhlenbeck factor so that ``a_t`` can be random and adapted.

Every routine is a pure function of its inputs and an integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray

__all__ = [
    "TimeGrid",
    "TimeFunction",
    "OUFactor",
    "FactorDiffusion",
    "TargetModel",
    "TargetPath",
    "brownian_increments",
    "simulate_target",
    "child_seed",
    "cholesky_factors",
]


def child_seed(seed: int, stream: int) -> np.random.SeedSequence:
    """Independent sub-stream ``stream`` of an integer seed."""
    return np.random.SeedSequence(int(seed), spawn_key=(int(stream),))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_start, t_start + dt, ..., t_start + n_steps*dt``."""

    t_start: float
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got dt={self.dt}")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")

    @classmethod
    def uniform(cls, t_end: float, n_steps: int, t_start: float = 0.0) -> "TimeGrid":
        if n_steps <= 0:
            raise ValueError("n_steps must be positive")
        return cls(t_start, t_end, (t_end - t_start) / n_steps)

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    @property
    def times(self) -> Array:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, self.dt / factor)


@dataclass(frozen=True)
class TimeFunction:
    """Affine-in-time array valued function ``value + slope * t``.

    Used for drift vectors, diffusion matrices, domain matrices and cost
    weights.  Scalars, vectors and matrices are all accepted.
    """

    value: Array
    slope: Array | None = None

    def __post_init__(self):
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))
        if self.slope is not None:
            slope = np.asarray(self.slope, dtype=float)
            if slope.shape != self.value.shape:
                raise ValueError("slope and value shapes differ")
            object.__setattr__(self, "slope", slope)

    @property
    def is_constant(self) -> bool:
        return self.slope is None or not np.any(self.slope)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_constant:
            return np.broadcast_to(self.value, t.shape + self.value.shape).copy()
        tt = t.reshape(t.shape + (1,) * self.value.ndim)
        return self.value + self.slope * tt

    def to_dict(self):
        out = {"value": self.value.tolist()}
        if not self.is_constant:
            out["slope"] = self.slope.tolist()
        return out

    @classmethod
    def from_config(cls, cfg) -> "TimeFunction":
        if isinstance(cfg, dict):
            return cls(cfg["value"], cfg.get("slope"))
        return cls(cfg)


@dataclass(frozen=True)
class OUFactor:
    """Scalar factor ``dZ = -kappa Z dt + eta dB``, simulated exactly."""

    kappa: float
    eta: float
    z0: float = 0.0

    def simulate(self, grid: TimeGrid, seed) -> Array:
        n = grid.n_steps
        z = np.empty(n + 1)
        z[0] = self.z0
        decay = np.exp(-self.kappa * grid.dt)
        if self.kappa > 0:
            sd = self.eta * np.sqrt((1.0 - decay**2) / (2.0 * self.kappa))
        else:
            sd = self.eta * np.sqrt(grid.dt)
        noise = np.random.default_rng(seed).standard_normal(n)
        for i in range(n):
            z[i + 1] = decay * z[i] + sd * noise[i]
        return z


@dataclass(frozen=True)
class FactorDiffusion:
    """``a_t = base(t) * exp(loading * Z_t)``; stays SPD whenever base does."""

    base: TimeFunction
    loading: float = 1.0

    def __call__(self, t, z):
        a = self.base(t)
        scale = np.exp(self.loading * np.asarray(z, dtype=float))
        return a * scale.reshape(scale.shape + (1, 1))


@dataclass(frozen=True)
class TargetModel:
    """Drift and diffusion coefficients of the target semimartingale."""

    dim: int
    drift: TimeFunction
    diffusion: TimeFunction | FactorDiffusion
    factor: OUFactor | None = None

    def __post_init__(self):
        if isinstance(self.diffusion, FactorDiffusion) and self.factor is None:
            raise ValueError("factor-driven diffusion needs an OUFactor")
        if self.drift.value.shape != (self.dim,):
            raise ValueError("drift must be a d-vector")
        base = self.diffusion.base if isinstance(self.diffusion, FactorDiffusion) else self.diffusion
        if base.value.shape != (self.dim, self.dim):
            raise ValueError("diffusion must be a d x d matrix")

    @classmethod
    def constant(cls, drift, diffusion) -> "TargetModel":
        drift = np.atleast_1d(np.asarray(drift, dtype=float))
        diffusion = np.atleast_2d(np.asarray(diffusion, dtype=float))
        return cls(drift.size, TimeFunction(drift), TimeFunction(diffusion))

    @property
    def is_deterministic(self) -> bool:
        return self.factor is None

    def coefficients(self, t, z=None) -> tuple[Array, Array]:
        """Vectorised ``(b_t, a_t)`` at times ``t`` (and factor values ``z``)."""
        b = self.drift(t)
        if isinstance(self.diffusion, FactorDiffusion):
            a = self.diffusion(t, z)
        else:
            a = self.diffusion(t)
        return b, a

    def diffusion_at(self, t: float) -> Array:
        """Diffusion matrix at a single time with the factor at its mean level."""
        z = None if self.factor is None else 0.0
        return self.coefficients(np.asarray(t), z)[1]


@dataclass
class TargetPath:
    grid: TimeGrid
    values: Array
    brownian: Array
    diffusion_values: Array
    factor_values: Array | None = None

    def __post_init__(self):
        n = self.grid.n_steps
        if self.values.shape[0] != n + 1 or self.brownian.shape[0] != n:
            raise ValueError("path length inconsistent with grid")

    @property
    def increments(self) -> Array:
        return np.diff(self.values, axis=0)

    def coarsen(self, factor: int) -> "TargetPath":
        """Same target observed on every ``factor``-th grid point."""
        n = self.grid.n_steps
        if n % factor:
            raise ValueError("factor must divide the number of steps")
        grid = TimeGrid(self.grid.t_start, self.grid.t_end, self.grid.dt * factor)
        dw = self.brownian.reshape(n // factor, factor, -1).sum(axis=1)
        fv = None if self.factor_values is None else self.factor_values[::factor]
        return TargetPath(grid, self.values[::factor], dw, self.diffusion_values[::factor], fv)


def brownian_increments(grid: TimeGrid, dim: int, seed) -> Array:
    """Increments ``dW_i ~ N(0, dt I_d)``, shape ``(n_steps, dim)``."""
    if not grid.dt > 0:
        raise ValueError("time step must be positive")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((grid.n_steps, dim)) * np.sqrt(grid.dt)


def cholesky_factors(a: Array) -> Array:
    """Lower Cholesky factors of a stack of matrices.

    Exactly-zero matrices (noise-free targets) get a zero factor; anything
    else that is not positive definite raises ``np.linalg.LinAlgError``.
    """
    a = np.asarray(a, dtype=float)
    zero = ~np.any(a.reshape(a.shape[:-2] + (-1,)), axis=-1)
    if np.all(zero):
        return np.zeros_like(a)
    if np.any(zero):
        safe = np.where(zero[..., None, None], np.eye(a.shape[-1]), a)
        L = np.linalg.cholesky(safe)
        return np.where(zero[..., None, None], 0.0, L)
    if not np.allclose(a, np.swapaxes(a, -1, -2), rtol=0, atol=1e-12 * (1 + np.abs(a).max())):
        raise np.linalg.LinAlgError("diffusion matrix is not symmetric")
    return np.linalg.cholesky(a)


def simulate_target(model: TargetModel, grid: TimeGrid, seed) -> TargetPath:
    """Euler-Maruyama path of the target on ``grid`` started at 0."""
    times = grid.times
    n, d = grid.n_steps, model.dim
    z = model.factor.simulate(grid, child_seed(seed, 1)) if model.factor is not None else None
    b, a = model.coefficients(times, z)
    L = cholesky_factors(a[:-1])
    dw = brownian_increments(grid, d, seed)
    noise = np.einsum("nij,nj->ni", L, dw) if n else np.zeros((0, d))
    values = np.zeros((n + 1, d))
    np.cumsum(b[:-1] * grid.dt + noise, axis=0, out=values[1:])
    return TargetPath(grid, values, dw, a, z)
