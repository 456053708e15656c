"""Equilibrium certification: gradient map, joint projection, merit function.

A game point stacks the padded h x h assignment X and incentive Y matrices,
z = (vec X, vec Y). Ride incentives of infeasible pairs, charge incentives of
pairs not assigned in the reference X, and all virtual entries are pinned at 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .assign import _hungarian
from .incentive import InfeasibleIncentiveBounds
from .model import INFEASIBLE, EpochProblem

log = logging.getLogger(__name__)


class ProjectionBudgetExceeded(RuntimeError):
    def __init__(self, sweeps, residual):
        super().__init__(f"Dykstra projection did not converge in {sweeps} sweeps "
                         f"(residual {residual:.3e})")
        self.sweeps = sweeps
        self.residual = residual


@dataclass
class GamePoint:
    """Layout metadata for z = (vec X, vec Y) of one epoch."""

    problem: EpochProblem
    base: np.ndarray          # h x h padded c/d costs with sentinels
    W: np.ndarray             # h x h, ride block filled
    ride_mask: np.ndarray     # feasible ride entries
    charge_mask: np.ndarray   # feasible charge entries
    facility_of: np.ndarray   # h-vector, facility node of a charge column, else -1

    @classmethod
    def from_problem(cls, prob: EpochProblem) -> "GamePoint":
        m, p, q, h = prob.m, prob.p, prob.q, prob.h
        base = np.full((h, h), INFEASIBLE)
        base[m:, p + q:] = 0.0
        base[:m, :p] = prob.costs.C
        base[:m, p:p + q] = prob.costs.D
        W = np.zeros((h, h))
        W[:m, :p] = prob.costs.W
        ride_mask = np.zeros((h, h), bool)
        ride_mask[:m, :p] = prob.costs.ride_feasible
        charge_mask = np.zeros((h, h), bool)
        charge_mask[:m, p:p + q] = prob.costs.charge_feasible
        facility_of = np.full(h, -1, dtype=np.int64)
        facility_of[p:p + q] = prob.charge_facility
        return cls(prob, base, W, ride_mask, charge_mask, facility_of)

    @property
    def h(self) -> int:
        return self.base.shape[0]

    @property
    def size(self) -> int:
        return 2 * self.h * self.h

    def split(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"game point has length {z.shape}, expected {self.size}")
        n = self.h * self.h
        return z[:n].reshape(self.h, self.h), z[n:].reshape(self.h, self.h)

    def stack(self, X, Y) -> np.ndarray:
        return np.concatenate([np.asarray(X, float).ravel(), np.asarray(Y, float).ravel()])

    def pad_incentives(self, Y_real) -> np.ndarray:
        prob = self.problem
        Y = np.zeros((self.h, self.h))
        Y[:prob.m, :prob.p + prob.q] = np.asarray(Y_real).reshape(prob.m, prob.p + prob.q)
        return Y

    def facility_members(self, s: int, X_ref) -> np.ndarray:
        cols = self.facility_of == s
        return self.charge_mask & cols[None, :] & (np.asarray(X_ref) > 0.5)

    def rho(self, s: int, X, Y) -> float:
        mask = self.charge_mask & (self.facility_of == s)[None, :]
        return float(np.sum(X[mask] * Y[mask]))


# --------------------------------------------------------------------------
# Objectives and gradient
# --------------------------------------------------------------------------

def provider_cost(gp: GamePoint, X, Y) -> float:
    return float(np.sum((gp.base - Y) * X))


def incentive_cost(gp: GamePoint, X, Y) -> float:
    """EV best-bid costs plus utility losses, g(x, y)."""
    d = (Y - gp.W)[gp.ride_mask]
    total = float(d @ d)
    for s, L in gp.problem.loss_target.items():
        total += (L - gp.rho(s, X, Y)) ** 2
    return total


def game_gradient(z, gp: GamePoint) -> np.ndarray:
    """F(z) = (grad_x f, grad_y g)."""
    X, Y = gp.split(z)
    Fx = gp.base - Y
    Fy = np.zeros_like(Y)
    Fy[gp.ride_mask] = 2.0 * (Y - gp.W)[gp.ride_mask]
    for s, L in gp.problem.loss_target.items():
        mask = gp.charge_mask & (gp.facility_of == s)[None, :]
        Fy[mask] = -2.0 * X[mask] * (L - gp.rho(s, X, Y))
    return gp.stack(Fx, Fy)


# --------------------------------------------------------------------------
# Projections
# --------------------------------------------------------------------------

def project_simplex_rows(V: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row onto the unit simplex."""
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    idx = np.arange(1, n + 1)
    rho = np.count_nonzero(U - css / idx > 0, axis=1)
    theta = css[np.arange(V.shape[0]), rho - 1] / rho
    return np.maximum(V - theta[:, None], 0.0)


def project_birkhoff(V: np.ndarray, tol: float = 1e-8, max_sweeps: int = 10_000) -> np.ndarray:
    """Projection onto doubly stochastic matrices by Dykstra's method.

    Alternates row-simplex and column-simplex projections with Dykstra
    corrections; their intersection is the Birkhoff polytope.

    The projection is unchanged by adding a constant to any row or column, so
    every column and then every row is shifted to have maximum 0 first. Without
    this a column sitting near -1e6 would need ~1e6 sweeps to surface.
    """
    V = np.asarray(V, dtype=float)
    if V.size == 0:
        return V.copy()
    V = V - V.max(axis=0, keepdims=True)
    V = V - V.max(axis=1, keepdims=True)
    x = V.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    residual = np.inf
    for _ in range(max_sweeps):
        y = project_simplex_rows(x + p)
        p = x + p - y
        x_new = project_simplex_rows((y + q).T).T
        q = y + q - x_new
        change = np.max(np.abs(x_new - x))
        residual = np.max(np.abs(x_new.sum(axis=1) - 1.0))
        x = x_new
        if change <= tol and residual <= tol:
            return _polish_support(V, x)
    raise ProjectionBudgetExceeded(max_sweeps, residual)


def _polish_support(V: np.ndarray, x: np.ndarray, zero: float = 1e-9) -> np.ndarray:
    """Exact KKT solve on the support found by Dykstra.

    On the support the projection is V_ij - a_i - b_j, and it is 0 elsewhere.
    Solving the row/column sum equations for (a, b) removes the round-off that
    Dykstra leaves on entries that should be exactly zero. The polished point
    is kept only if it is feasible and agrees with the Dykstra iterate; the
    values on the support are unique even when (a, b) is not.
    """
    n = V.shape[0]
    S = x > zero
    rows, cols = np.nonzero(S)
    k = rows.size
    # unknowns (a_0..a_{n-1}, b_0..b_{n-1}); one equation per row and column sum
    M = np.zeros((2 * n, 2 * n))
    rhs = np.empty(2 * n)
    np.add.at(M, (rows, rows), 1.0)
    np.add.at(M, (rows, n + cols), 1.0)
    np.add.at(M, (n + cols, rows), 1.0)
    np.add.at(M, (n + cols, n + cols), 1.0)
    rhs[:n] = np.bincount(rows, weights=V[S], minlength=n) - 1.0
    rhs[n:] = np.bincount(cols, weights=V[S], minlength=n) - 1.0
    if k == 0:
        return x
    ab = np.linalg.lstsq(M, rhs, rcond=None)[0]
    a, b = ab[:n], ab[n:]
    R = V - a[:, None] - b[None, :]
    out = np.where(S, R, 0.0)
    ok = (np.all(out[S] >= -zero) and np.max(np.abs(out - x)) <= 1e-6
          and np.max(np.abs(out.sum(axis=0) - 1.0)) <= 1e-10
          and np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-10)
    if not ok:
        return x
    return np.maximum(out, 0.0)


def project_capped_sum(v, lo: float, hi: float, b_min: float, b_max: float,
                       facility=None) -> np.ndarray:
    """argmin ||y - v|| s.t. lo <= y <= hi, b_min <= sum(y) <= b_max.

    The solution is clip(v - tau) for a scalar shift tau found by bisection.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if n == 0:
        return v.copy()
    if max(b_min, n * lo) > min(b_max, n * hi) + 1e-12:
        raise InfeasibleIncentiveBounds(facility, max(b_min, n * lo), min(b_max, n * hi))
    y = np.clip(v, lo, hi)
    total = y.sum()
    if b_min <= total <= b_max:
        return y
    target = b_max if total > b_max else b_min
    # sum(clip(v - tau)) is non-increasing in tau
    t_lo = np.min(v) - hi - 1.0
    t_hi = np.max(v) - lo + 1.0
    for _ in range(200):
        mid = 0.5 * (t_lo + t_hi)
        if np.clip(v - mid, lo, hi).sum() > target:
            t_lo = mid
        else:
            t_hi = mid
        if t_hi - t_lo <= 1e-15 * max(1.0, abs(mid)):
            break
    y = np.clip(v - 0.5 * (t_lo + t_hi), lo, hi)
    # remove the residual bisection error on the free coordinates
    free = (y > lo) & (y < hi)
    if free.any():
        y[free] += (target - y.sum()) / free.sum()
    return y


def project_joint(z, gp: GamePoint, X_ref=None, tol: float = 1e-8,
                  max_sweeps: int = 10_000) -> np.ndarray:
    """Projection onto S(x) = X-polytope x Y-set(x_ref).

    ``X_ref`` selects which charge pairs are assigned (and therefore carry the
    facility sum constraint); it defaults to the X block of ``z`` itself.
    """
    X, Y = gp.split(z)
    if X_ref is None:
        X_ref = X
    Xp = project_birkhoff(X, tol=tol, max_sweeps=max_sweeps)
    prob = gp.problem
    r_min, r_max = prob.ride_bounds
    l_min, l_max = prob.charge_bounds
    Yp = np.zeros_like(Y)
    Yp[gp.ride_mask] = np.clip(Y[gp.ride_mask], r_min, r_max)
    for s in prob.facilities:
        mask = gp.facility_members(s, X_ref)
        if not mask.any():
            continue
        b_min, b_max = prob.sum_bounds[s]
        Yp[mask] = project_capped_sum(Y[mask], l_min, l_max, b_min, b_max, facility=s)
    return gp.stack(Xp, Yp)


# --------------------------------------------------------------------------
# Merit function
# --------------------------------------------------------------------------

def merit(z, gp: GamePoint, tol: float = 1e-10, max_sweeps: int = 10_000) -> float:
    """Regularised gap u(z) with H = I; zero exactly at QVI solutions."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return 0.0
    X, _ = gp.split(z)
    F = game_gradient(z, gp)
    hz = project_joint(z - F, gp, X_ref=X, tol=tol, max_sweeps=max_sweeps)
    d = hz - z
    Fx, Fy = gp.split(F)
    dx, dy = gp.split(d)
    # dx has zero row and column sums, so <Fx, dx> is unchanged by subtracting
    # row/column potentials; reduced costs keep sentinel-sized entries away
    # from the entries where dx carries projection round-off.
    _, row_pot, col_pot = _hungarian(np.ascontiguousarray(Fx))
    Fx = Fx - row_pot[:, None] - col_pot[None, :]
    inner = float(np.sum(Fx * dx) + np.sum(Fy * dy))
    u = -inner + 0.5 * float(d @ d)
    if u < -1e-12:
        log.warning("merit evaluated to %.3e < 0; z is probably outside the feasible set", u)
    return max(u, 0.0)


def certify(prob: EpochProblem, X: np.ndarray, Y_real: np.ndarray) -> float:
    """Merit of a bargaining outcome (padded X, real-block Y)."""
    gp = GamePoint.from_problem(prob)
    if gp.h == 0:
        return 0.0
    return merit(gp.stack(X, gp.pad_incentives(Y_real)), gp)


def sum_boxes_inactive(prob: EpochProblem, X: np.ndarray, Y_real: np.ndarray,
                       slack: float = 1e-9) -> bool:
    """True when no facility sum constraint binds at (X, Y)."""
    gp = GamePoint.from_problem(prob)
    Y = gp.pad_incentives(Y_real)
    for s in prob.facilities:
        mask = gp.facility_members(s, X)
        if not mask.any():
            continue
        total = Y[mask].sum()
        b_min, b_max = prob.sum_bounds[s]
        if total <= b_min + slack or total >= b_max - slack:
            return False
    return True

