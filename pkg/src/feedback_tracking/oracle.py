"""Markov chain approximation of the unit-scale controlled diffusion.

The state space is a lattice of cell centres in whitened coordinates
``z = a^-1/2 y`` where the diffusion part of the generator is ``Delta / 2``.
Transitions to lattice neighbours follow the usual finite-difference
generator; what happens when a neighbour lies outside the domain depends on
the family:

* impulse: the transition is aimed at the boundary crossing point on the
  lattice axis (Shortley-Weller spacing) and rerouted to the landing point
  ``x_b + xi(x_b)``, interpolated multilinearly onto the lattice;
* singular: the outside neighbour is mirrored back along the reflection
  direction; the length of the mirror move is booked as local time;
* regular: a truncated box, moves leaving the box are rejected.

The stationary vector of the generator gives ``pi``; the flux into the
boundary gives ``nu`` (jumps per unit time) or ``rho`` (local time per unit
time).  Works for ``d <= 2``.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import sparse
from scipy.linalg import solve_continuous_lyapunov
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .closed_form import sym_inv_sqrt, sym_sqrt
from .domains import project_to_boundary

Array = np.ndarray

__all__ = [
    "OracleConvergenceError",
    "ChainApproximation",
    "build_chain",
    "stationary_vector",
    "uniqueness_probe",
]


class OracleConvergenceError(RuntimeError):
    """Power iteration did not settle within its budget."""

    def __init__(self, iterations: int, change: float, gap_estimate: float):
        super().__init__(
            f"power iteration stopped after {iterations} iterations "
            f"(last l1 change {change:.2e}, spectral gap estimate {gap_estimate:.3e})"
        )
        self.iterations = iterations
        self.change = change
        self.gap_estimate = gap_estimate


class ChainApproximation:
    """Generator matrix plus the bookkeeping needed to read off ``(pi, nu/rho)``."""

    def __init__(self, Q, nodes_z, ah, h, family, atom_rows, atom_rates, atom_points, atom_dirs):
        self.Q = Q
        self.nodes_z = nodes_z
        self.ah = ah
        self.h = h
        self.family = family
        self.atom_rows = atom_rows
        self.atom_rates = atom_rates
        self.atom_points = atom_points
        self.atom_dirs = atom_dirs

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    @property
    def nodes(self) -> Array:
        """Lattice points in original coordinates."""
        return self.nodes_z @ self.ah.T

    def max_rate(self) -> float:
        return float(np.max(-self.Q.diagonal()))


class _Lattice:
    def __init__(self, half_widths: Array, h: float, member):
        self.h = h
        self.d = len(half_widths)
        self.n = np.array([2 * max(1, int(np.ceil(w / h - 1e-9))) for w in half_widths])
        self.lo = -self.n * h / 2.0
        axes = [self.lo[i] + (np.arange(self.n[i]) + 0.5) * h for i in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        keep = member(pts)
        self.index = np.full(int(np.prod(self.n)), -1, dtype=np.int64)
        self.index[np.flatnonzero(keep)] = np.arange(int(keep.sum()))
        self.index = self.index.reshape(tuple(self.n))
        self.nodes = pts[keep]
        self.multi = np.stack(np.unravel_index(np.flatnonzero(keep), tuple(self.n)), axis=1)
        self._tree = None

    def lookup(self, multi: Array) -> Array:
        ok = np.all((multi >= 0) & (multi < self.n), axis=1)
        out = np.full(len(multi), -1, dtype=np.int64)
        out[ok] = self.index[tuple(multi[ok].T)]
        return out

    def full_cell(self, pts: Array) -> Array:
        """Whether every corner carrying interpolation weight is a lattice state."""
        f = (pts - self.lo) / self.h - 0.5
        base = np.floor(f).astype(np.int64)
        frac = f - base
        ok = np.ones(len(pts), dtype=bool)
        for corner in itertools.product((0, 1), repeat=self.d):
            c = np.array(corner)
            w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
            ok &= (w <= 1e-12) | (self.lookup(base + c) >= 0)
        return ok

    def interpolate(self, pts: Array) -> tuple[Array, Array, Array]:
        """Multilinear weights of ``pts`` on lattice states: ``(point_id, state, weight)``."""
        m = len(pts)
        f = (pts - self.lo) / self.h - 0.5
        base = np.floor(f).astype(np.int64)
        frac = f - base
        ids, cols, wts = [], [], []
        for corner in itertools.product((0, 1), repeat=self.d):
            c = np.array(corner)
            w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
            ids.append(np.arange(m))
            cols.append(self.lookup(base + c))
            wts.append(w)
        ids, cols, wts = np.concatenate(ids), np.concatenate(cols), np.concatenate(wts)
        valid = (cols >= 0) & (wts > 0)
        total = np.bincount(ids[valid], weights=wts[valid], minlength=m)
        ids, cols, wts = ids[valid], cols[valid], wts[valid] / total[ids[valid]]
        lost = np.flatnonzero(total <= 1e-12)
        if len(lost):
            # no usable corner: fall back to the nearest state
            if self._tree is None:
                self._tree = cKDTree(self.nodes)
            keep = total[ids] > 1e-12
            ids, cols, wts = ids[keep], cols[keep], wts[keep]
            _, near = self._tree.query(pts[lost])
            ids = np.concatenate([ids, lost])
            cols = np.concatenate([cols, near])
            wts = np.concatenate([wts, np.ones(len(lost))])
        return ids, cols, wts


def _axis_rates(hm, hp, vm, vp, mu):
    """Rates to the minus/plus targets for ``f''/2 + mu f'`` on spacing ``hm, hp``."""
    both = vm & vp
    s = hm + hp
    rm = np.where(both, 1.0 / (hm * s), np.where(vm, 0.5 / hm**2, 0.0))
    rp = np.where(both, 1.0 / (hp * s), np.where(vp, 0.5 / hp**2, 0.0))
    cm = np.where(both, rm - mu * hp / (hm * s), -1.0)
    cp = np.where(both, rp + mu * hm / (hp * s), -1.0)
    central = (cm >= 0) & (cp >= 0)
    up_p = np.where((mu > 0) & vp, mu / hp, 0.0)
    up_m = np.where((mu < 0) & vm, -mu / hm, 0.0)
    return np.where(central, cm, rm + up_m), np.where(central, cp, rp + up_p)


def build_chain(a, strategy, cells: int = 400, truncation: float = 6.0) -> ChainApproximation:
    """Finite-state generator for a time-frozen strategy with diffusion matrix ``a``.

    ``cells`` is the number of lattice cells across the widest extent of the
    (whitened) domain, so ``h = extent / cells``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    d = a.shape[0]
    if d > 2:
        raise ValueError("the chain approximation supports d <= 2")
    if cells < 20:
        raise ValueError("at least 20 cells are required across the domain")
    ah, aih = sym_sqrt(a), sym_inv_sqrt(a)
    family = strategy.family
    speed = strategy.speed
    if getattr(speed, "is_zero", False):
        drift_z = np.zeros((d, d))
    else:
        drift_z = -aih @ speed.matrix_at(0.0) @ ah

    if family == "regular":
        if not np.any(drift_z):
            raise ValueError("a regular policy needs a nonzero mean-reverting field")
        C = solve_continuous_lyapunov(-drift_z, np.eye(d))
        half = truncation * np.sqrt(np.diag(C))
        Az = None
        member = lambda p: np.ones(len(p), dtype=bool)
    else:
        A = strategy.domain.matrix_at(0.0)
        Az = ah @ A @ ah
        half = np.sqrt(np.diag(np.linalg.inv(Az)))
        member = lambda p: np.einsum("ni,ij,nj->n", p, Az, p) < 1.0
    h = 2.0 * float(np.max(half)) / cells
    lat = _Lattice(half, h, member)
    nodes = lat.nodes
    n = len(nodes)
    mu_all = nodes @ drift_z.T

    rows, cols, vals = [], [], []
    atom_rows, atom_rates, atom_points, atom_dirs = [], [], [], []
    states = np.arange(n)

    for e in range(d):
        nb = {}
        for s in (-1, 1):
            step = np.zeros(d, dtype=np.int64)
            step[e] = s
            nb[s] = lat.lookup(lat.multi + step)
        dist = {s: np.full(n, h) for s in (-1, 1)}
        valid = {s: np.ones(n, dtype=bool) for s in (-1, 1)}
        if family == "impulse":
            for s in (-1, 1):
                out = nb[s] < 0
                p = nodes[out]
                c = np.einsum("ni,ij,nj->n", p, Az, p) - 1.0
                a2 = h * h * Az[e, e]
                b = 2.0 * s * h * (p @ Az[:, e])
                theta = -2.0 * c / (b + np.sqrt(b * b - 4.0 * a2 * c))
                dist[s][out] = np.maximum(theta, 1e-9) * h
        elif family == "regular":
            for s in (-1, 1):
                valid[s] = nb[s] >= 0
        rm, rp = _axis_rates(dist[-1], dist[1], valid[-1], valid[1], mu_all[:, e])
        rates = {-1: rm, 1: rp}

        for s in (-1, 1):
            inside = nb[s] >= 0
            rows.append(states[inside])
            cols.append(nb[s][inside])
            vals.append(rates[s][inside])
            out = (~inside) & valid[s] & (rates[s] > 0)
            if family == "regular" or not out.any():
                continue
            src = states[out]
            r_out = rates[s][out]
            p = nodes[out]
            if family == "impulse":
                xb = p.copy()
                xb[:, e] += s * dist[s][out]
                # land exactly on the boundary before applying the jump
                xb /= np.sqrt(np.einsum("ni,ij,nj->n", xb, Az, xb))[:, None]
                alpha = strategy.jump.alpha_at(0.0)
                target = (1.0 - alpha) * xb
                atom_rows.append(src)
                atom_rates.append(r_out)
                atom_points.append(xb @ ah.T)
                atom_dirs.append(-alpha * (xb @ ah.T))
            else:
                q = p.copy()
                q[:, e] += s * h
                xb = _reflection_point(q, Az, ah, aih, A, strategy.direction)
                target = _inward_target(lat, xb, q, Az)
                disp = (target - q) @ ah.T
                dphi = np.abs(disp).sum(axis=1)
                atom_rows.append(src)
                atom_rates.append(r_out * dphi)
                atom_points.append(xb @ ah.T)
                atom_dirs.append(disp / dphi[:, None])
            ids, tc, w = lat.interpolate(target)
            rows.append(src[ids])
            cols.append(tc)
            vals.append(r_out[ids] * w)

    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    out_rate = np.bincount(rows, weights=vals, minlength=n)
    rows = np.concatenate([rows, states])
    cols = np.concatenate([cols, states])
    vals = np.concatenate([vals, -out_rate])
    Q = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Q.sum_duplicates()

    def cat(xs, shape):
        return np.concatenate(xs) if xs else np.zeros(shape)

    return ChainApproximation(
        Q,
        nodes,
        ah,
        h,
        family,
        cat(atom_rows, (0,)).astype(np.int64),
        cat(atom_rates, (0,)),
        cat(atom_points, (0, d)),
        cat(atom_dirs, (0, d)),
    )


def _inward_target(lat: _Lattice, xb: Array, q: Array, Az: Array) -> Array:
    """Mirror image of ghost ``q`` in ``xb``, slid inward until its cell is interior.

    Interpolating from a cell with missing corners renormalises the weights
    and shifts the mean landing point by O(h), a spurious O(1/h) drift in
    the boundary layer.  Sliding along the line through ``q`` and ``xb``
    keeps the reflection direction.
    """
    v = xb - q
    norm = np.linalg.norm(v, axis=1)
    tiny = norm < 1e-14 * lat.h
    v[tiny] = -xb[tiny]
    unit = v / np.linalg.norm(v, axis=1)[:, None]
    target = 2.0 * xb - q
    for _ in range(4 * max(lat.n)):
        bad = ~lat.full_cell(target) | (np.einsum("ni,ij,nj->n", target, Az, target) >= 1.0)
        if not bad.any():
            return target
        target[bad] += lat.h * unit[bad]
    raise RuntimeError("no interior cell found along the reflection direction")


def _reflection_point(q, Az, ah, aih, A, direction):
    """Boundary point reached from exterior ``q`` (whitened) along the direction field."""
    if direction == "radial" or q.shape[1] == 1:
        return q / np.sqrt(np.einsum("ni,ij,nj->n", q, Az, q))[:, None]
    yb = project_to_boundary(q @ ah.T, A, direction)
    return yb @ aih.T


def stationary_vector(
    Q,
    start: Array | None = None,
    tol: float = 1e-10,
    method: str = "inverse",
    max_iter: int | None = None,
    lu=None,
) -> tuple[Array, int]:
    """Probability vector ``pi`` with ``pi Q = 0``.

    ``method="inverse"`` runs inverse iteration with a small shift (fast,
    few iterations); ``method="power"`` runs power iteration on the
    uniformised chain and raises :class:`OracleConvergenceError` with a
    spectral gap estimate when ``max_iter`` is exhausted.
    """
    n = Q.shape[0]
    x = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=float)
    x = x / x.sum()
    lam = float(np.max(-Q.diagonal()))
    QT = Q.T.tocsr()
    if method == "inverse":
        max_iter = 200 if max_iter is None else max_iter
        if lu is None:
            lu = splu((QT + 1e-8 * lam * sparse.identity(n)).tocsc())
        change = np.inf
        for it in range(1, max_iter + 1):
            y = lu.solve(x)
            y /= y.sum()
            change = float(np.abs(y - x).sum())
            x = y
            if change < tol:
                return _clean(x), it
        raise OracleConvergenceError(max_iter, change, float("nan"))
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    max_iter = 100_000 if max_iter is None else max_iter
    lam *= 1.05
    prev_change = np.nan
    change = np.inf
    for it in range(1, max_iter + 1):
        y = x + (QT @ x) / lam
        y /= y.sum()
        prev_change, change = change, float(np.abs(y - x).sum())
        x = y
        if change < tol:
            return _clean(x), it
    ratio = change / prev_change if prev_change > 0 else np.nan
    gap = lam * (1.0 - ratio) if np.isfinite(ratio) else float("nan")
    raise OracleConvergenceError(max_iter, change, gap)


def _clean(x: Array) -> Array:
    x = np.where(x < 0, 0.0, x)
    return x / x.sum()


def uniqueness_probe(
    Q, n_starts: int = 5, seed: int = 0, tol: float = 1e-12, method: str = "inverse"
) -> float:
    """Largest l1 distance between stationary vectors reached from random starts.

    ``method="power"`` iterates the uniformised chain itself, which is slow
    on fine lattices but involves no factorisation.
    """
    n = Q.shape[0]
    lu = None
    if method == "inverse":
        lam = float(np.max(-Q.diagonal()))
        lu = splu((Q.T.tocsr() + 1e-8 * lam * sparse.identity(n)).tocsc())
    max_iter = 10_000_000 if method == "power" else None
    rng = np.random.default_rng(seed)
    vecs = [
        stationary_vector(Q, rng.random(n), tol=tol, method=method, max_iter=max_iter, lu=lu)[0]
        for _ in range(n_starts)
    ]
    return max(float(np.abs(v - vecs[0]).sum()) for v in vecs)
