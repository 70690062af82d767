"""Homogeneous cost functions and the epsilon-scaled tracking cost.

The deviation penalty ``D``, running cost ``Q``, fixed cost ``F`` and
proportional cost ``P`` are homogeneous with degrees ``zeta_D > 0``,
``zeta_Q > 1``, ``zeta_F = 0`` and ``zeta_P = 1``.  Given ``beta > 0`` the
cost exponents are

    beta_Q = beta (zeta_D + zeta_Q)
    beta_F = beta (zeta_D + 2 - zeta_F)
    beta_P = beta (zeta_D + 2 - zeta_P)

and ``eps**(-zeta_D * beta) * J_eps`` is the renormalised cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sde_engine import TimeFunction

Array = np.ndarray

__all__ = [
    "HomogeneousCost",
    "QuadraticCost",
    "CountingCost",
    "ConstantFixedCost",
    "L1Cost",
    "CostSpec",
    "EpsilonScaling",
    "CostBreakdown",
    "derive_exponents",
    "eval_cost",
    "renormalize",
    "check_homogeneity",
    "cost_from_config",
]


class HomogeneousCost:
    """A cost function together with its declared homogeneity degree.

    Subclasses implement ``__call__`` on arrays of shape ``(..., d)`` and
    return arrays of shape ``(...)``.
    """

    degree: float

    def __init__(self, func: Callable[[Array], Array], degree: float):
        self._func = func
        self.degree = float(degree)

    def __call__(self, x):
        return self._func(np.asarray(x, dtype=float))

    def to_config(self) -> dict:
        raise TypeError("custom cost functions are not serialisable")


class QuadraticCost(HomogeneousCost):
    """``x^T M x`` with ``M`` symmetric positive (semi)definite."""

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.degree = 2.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.matrix, x)

    def to_config(self):
        return {"kind": "quadratic", "matrix": self.matrix.tolist()}


class CountingCost(HomogeneousCost):
    """``sum_i F_i 1{x_i != 0}``: a fee per coordinate actually moved."""

    def __init__(self, constants):
        self.constants = np.atleast_1d(np.asarray(constants, dtype=float))
        self.degree = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return ((x != 0) * self.constants).sum(axis=-1)

    def to_config(self):
        return {"kind": "counting", "constants": self.constants.tolist()}


class ConstantFixedCost(HomogeneousCost):
    """``value * 1{x != 0}``: one fee per intervention whatever its size."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)
        self.degree = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.value * np.any(x != 0, axis=-1)

    def to_config(self):
        return {"kind": "constant", "value": self.value}


class L1Cost(HomogeneousCost):
    """``sum_i P_i |x_i|``."""

    def __init__(self, weights):
        self.weights = np.atleast_1d(np.asarray(weights, dtype=float))
        self.degree = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (np.abs(x) * self.weights).sum(axis=-1)

    def to_config(self):
        return {"kind": "l1", "weights": self.weights.tolist()}


def _weight(w) -> TimeFunction:
    return w if isinstance(w, TimeFunction) else TimeFunction(w)


@dataclass
class CostSpec:
    D: HomogeneousCost
    Q: HomogeneousCost
    F: HomogeneousCost
    P: HomogeneousCost
    r: TimeFunction = field(default_factory=lambda: TimeFunction(1.0))
    l: TimeFunction = field(default_factory=lambda: TimeFunction(1.0))
    k: TimeFunction = field(default_factory=lambda: TimeFunction(1.0))
    h: TimeFunction = field(default_factory=lambda: TimeFunction(1.0))

    def __post_init__(self):
        for name in ("r", "l", "k", "h"):
            setattr(self, name, _weight(getattr(self, name)))
        if not self.D.degree > 0:
            raise ValueError("D must have positive degree")
        if not self.Q.degree > 1:
            raise ValueError("Q must have degree > 1")
        if self.F.degree != 0:
            raise ValueError("F must have degree 0")
        if self.P.degree != 1:
            raise ValueError("P must have degree 1")

    @classmethod
    def quadratic(cls, dim=1, D=1.0, Q=1.0, F=1.0, P=0.0, **weights) -> "CostSpec":
        """Canonical costs: quadratic ``D`` and ``Q``, constant ``F``, l1 ``P``."""
        D = np.eye(dim) * D if np.ndim(D) == 0 else D
        Q = np.eye(dim) * Q if np.ndim(Q) == 0 else Q
        P = np.full(dim, float(P)) if np.ndim(P) == 0 else P
        return cls(QuadraticCost(D), QuadraticCost(Q), ConstantFixedCost(F), L1Cost(P), **weights)

    def weights_at(self, t: float) -> dict[str, float]:
        return {name: float(getattr(self, name)(t)) for name in ("r", "l", "k", "h")}

    def check_weights(self, horizon: float, n: int = 64) -> bool:
        t = np.linspace(0.0, horizon, n)
        return all(np.all(getattr(self, w)(t) > 0) for w in ("r", "l", "k", "h"))

    def to_config(self) -> dict:
        return {
            "D": self.D.to_config(),
            "Q": self.Q.to_config(),
            "F": self.F.to_config(),
            "P": self.P.to_config(),
            "weights": {w: getattr(self, w).to_dict() for w in ("r", "l", "k", "h")},
        }


_COST_KINDS = {
    "quadratic": lambda c: QuadraticCost(c["matrix"]),
    "counting": lambda c: CountingCost(c["constants"]),
    "constant": lambda c: ConstantFixedCost(c.get("value", 1.0)),
    "l1": lambda c: L1Cost(c["weights"]),
}


def _cost_fn(cfg: dict) -> HomogeneousCost:
    kind = cfg["kind"]
    if kind not in _COST_KINDS:
        raise ValueError(f"unknown cost kind {kind!r}")
    fn = _COST_KINDS[kind](cfg)
    if "degree" in cfg:
        # a declared degree is trusted here and audited by check_homogeneity
        fn.degree = float(cfg["degree"])
    return fn


def cost_from_config(cfg: dict) -> CostSpec:
    weights = {w: TimeFunction.from_config(v) for w, v in cfg.get("weights", {}).items()}
    return CostSpec(
        _cost_fn(cfg["D"]), _cost_fn(cfg["Q"]), _cost_fn(cfg["F"]), _cost_fn(cfg["P"]), **weights
    )


@dataclass(frozen=True)
class EpsilonScaling:
    """Cost exponents implied by ``beta`` and the homogeneity degrees."""

    beta: float
    zeta_D: float
    zeta_Q: float = 2.0
    zeta_F: float = 0.0
    zeta_P: float = 1.0

    @property
    def beta_Q(self) -> float:
        return self.beta * (self.zeta_D + self.zeta_Q)

    @property
    def beta_F(self) -> float:
        return self.beta * (self.zeta_D + 2.0 - self.zeta_F)

    @property
    def beta_P(self) -> float:
        return self.beta * (self.zeta_D + 2.0 - self.zeta_P)

    @property
    def renormalization_exponent(self) -> float:
        return self.zeta_D * self.beta

    def time_scale(self, eps: float) -> float:
        """Intrinsic time unit ``eps**(2 beta)`` of the controlled deviation."""
        return eps ** (2.0 * self.beta)


def derive_exponents(beta: float, spec: CostSpec) -> EpsilonScaling:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return EpsilonScaling(beta, spec.D.degree, spec.Q.degree, spec.F.degree, spec.P.degree)


@dataclass(frozen=True)
class CostBreakdown:
    deviation_term: float = 0.0
    regular_term: float = 0.0
    fixed_term: float = 0.0
    proportional_term: float = 0.0

    @property
    def total(self) -> float:
        return self.deviation_term + self.regular_term + self.fixed_term + self.proportional_term

    def scaled(self, c: float) -> "CostBreakdown":
        return CostBreakdown(*(c * v for v in self.terms()))

    def terms(self) -> tuple[float, float, float, float]:
        return (self.deviation_term, self.regular_term, self.fixed_term, self.proportional_term)

    def as_dict(self) -> dict[str, float]:
        return {
            "deviation": self.deviation_term,
            "regular": self.regular_term,
            "fixed": self.fixed_term,
            "proportional": self.proportional_term,
            "total": self.total,
        }

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(*(a + b for a, b in zip(self.terms(), other.terms())))


def eval_cost(path, spec: CostSpec, scaling: EpsilonScaling, eps: float) -> CostBreakdown:
    """Cost ``J_eps`` of a controlled path, split by term.

    Time integrals use left-endpoint sums on the path grid; impulse costs are
    summed over recorded jumps and singular costs over recorded reflection
    increments ``P(gamma) dphi``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    grid = path.grid
    n = grid.n_steps
    if path.deviation.shape[0] != n + 1 or path.controls.shape[0] != n:
        raise ValueError("path arrays do not match the grid length")
    t = grid.times[:-1]
    dt = grid.dt
    x = path.deviation[:-1]
    deviation = float(dt * np.sum(spec.r(t) * spec.D(x))) if n else 0.0
    regular = 0.0
    if n and np.any(path.controls):
        regular = float(eps**scaling.beta_Q * dt * np.sum(spec.l(t) * spec.Q(path.controls)))
    fixed = proportional = 0.0
    if len(path.jump_times):
        fixed = float(eps**scaling.beta_F * np.sum(spec.k(path.jump_times) * spec.F(path.jump_sizes)))
        proportional = float(
            eps**scaling.beta_P * np.sum(spec.h(path.jump_times) * spec.P(path.jump_sizes))
        )
    if len(path.reflection_times):
        proportional += float(
            eps**scaling.beta_P
            * np.sum(
                spec.h(path.reflection_times)
                * spec.P(path.reflection_directions)
                * path.reflection_dphi
            )
        )
    return CostBreakdown(deviation, regular, fixed, proportional)


def renormalize(breakdown: CostBreakdown, eps: float, scaling: EpsilonScaling) -> CostBreakdown:
    if not eps > 0:
        raise ValueError("eps must be positive")
    return breakdown.scaled(eps ** (-scaling.renormalization_exponent))


def check_homogeneity(spec: CostSpec, samples) -> float:
    """Largest relative homogeneity defect of ``D, Q, F, P`` over ``(eps, x)`` samples."""
    worst = 0.0
    for eps, x in samples:
        if not eps > 0:
            raise ValueError("sample scale must be positive")
        x = np.asarray(x, dtype=float)
        for f in (spec.D, spec.Q, spec.F, spec.P):
            fx = f(x)
            err = np.abs(f(eps * x) - eps**f.degree * fx) / (1.0 + np.abs(fx))
            worst = max(worst, float(np.max(err)))
    return worst
