"""Reference values for the test suite, derived in 50-digit arithmetic.

Each value comes from a route independent of the package: direct
minimisation of the scalar cost curves, a Newton solve of the matrix
equation written out componentwise, and quadrature of the integrands.
Run ``python tests/oracles/derive_values.py`` to regenerate ``values.json``.
"""

from __future__ import annotations

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50

HERE = Path(__file__).parent


def impulse_curve(L, a=1, r=1, k=1):
    # tent density (L - |y|) / L^2 on (-L, L), one jump per exit time L^2 / a
    dev = r * mp.quad(lambda y: y * y * (L - abs(y)) / L**2, [-L, 0, L])
    return dev + k * a / L**2


def singular_curve(L, a=1, r=1, h=1):
    # uniform density, local time rate from the generator of x^2
    dev = r * mp.quad(lambda y: y * y / (2 * L), [-L, L])
    return dev + h * a / (2 * L)


def ou_cost(sigma, a=1, r=1, l=1):
    var = a / (2 * sigma)
    dens = lambda x: mp.npdf(x, 0, mp.sqrt(var))
    return mp.quad(lambda x: (r * x * x + l * (sigma * x) ** 2) * dens(x), [-mp.inf, mp.inf])


def matrix_B_diagonal(lams):
    # componentwise form of 2 M^2 + M tr M = 2 S for diagonal S
    n = len(lams)

    def eqs(*m):
        t = sum(m)
        return [2 * m[i] ** 2 + m[i] * t - 2 * lams[i] for i in range(n)]

    return mp.findroot(eqs, [mp.sqrt(x) / 2 for x in lams])


def derive() -> dict:
    out = {}
    L_imp = mp.findroot(lambda L: mp.diff(impulse_curve, L), 1.5)
    out["impulse_L_star"] = L_imp
    out["impulse_c_star"] = impulse_curve(L_imp)
    out["impulse_deviation_star"] = L_imp**2 / 6
    out["impulse_fixed_star"] = 1 / L_imp**2
    out["impulse_jump_rate"] = 1 / L_imp**2
    out["impulse_c_doubled"] = impulse_curve(2 * L_imp)
    out["impulse_ratio_doubled"] = impulse_curve(2 * L_imp) / impulse_curve(L_imp)

    L_sing = mp.findroot(lambda L: mp.diff(singular_curve, L), 0.9)
    out["singular_L_star"] = L_sing
    out["singular_c_star"] = singular_curve(L_sing)
    out["singular_deviation_star"] = L_sing**2 / 3
    out["singular_rate_star"] = 1 / (2 * L_sing)

    out["lq_c_sigma1"] = ou_cost(1)
    out["lq_c_sigma2"] = ou_cost(2)
    out["lq_ratio_detuned"] = ou_cost(2) / ou_cost(1)
    out["lq_c_D4"] = mp.quad(
        lambda x: (4 * x * x + (2 * x) ** 2) * mp.npdf(x, 0, mp.sqrt(mp.mpf(1) / 4)), [-mp.inf, mp.inf]
    )

    (m,) = matrix_B_diagonal([mp.mpf(1)])
    out["B_a1"] = m
    (m4,) = matrix_B_diagonal([mp.mpf(4)])
    out["B_a4"] = m4 / 4
    out["trace_aB_a4"] = m4
    m2 = matrix_B_diagonal([mp.mpf(1), mp.mpf(4)])
    out["B_2d_diag"] = [m2[0], m2[1]]
    out["trace_aB_2d"] = m2[0] + m2[1]

    c1 = impulse_curve(L_imp)
    out["ramp_integral"] = mp.quad(lambda t: c1 * mp.sqrt(1 + t), [0, 1])
    return out


def _floats(v):
    if isinstance(v, list):
        return [float(x) for x in v]
    return float(v)


def main() -> None:
    values = {k: _floats(v) for k, v in derive().items()}
    (HERE / "values.json").write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
    for k, v in sorted(values.items()):
        print(f"{k:26s} {v}")


if __name__ == "__main__":
    main()
