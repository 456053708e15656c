"""Gauss-Seidel best-response bargaining between provider, utility and EVs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .assign import LapInstance, build_cost_matrices, dispatch_indices, pad_symmetric, solve_lap
from .incentive import (FacilitySubproblem, compute_loss_target, ev_best_bids, ev_objective,
                        puc_objective, utility_incentives)
from .model import (Activity, ChargeRequest, CityGraph, EpochProblem, Ev, PvProfile,
                    RideRequest, ScenarioConfig)


class StopReason(str, enum.Enum):
    FIXED_POINT = "FixedPoint"
    MAX_ITERS = "MaxIters"
    EMPTY = "Empty"


@dataclass
class Iterate:
    k: int
    X: np.ndarray
    Y: np.ndarray
    f: float
    puc: float
    ev: float


@dataclass
class BargainTrace:
    iterations: list = field(default_factory=list)
    converged: bool = False
    stop_reason: StopReason = StopReason.EMPTY

    def rows(self):
        for it in self.iterations:
            yield {"k": it.k, "f": it.f, "puc_loss": it.puc, "ev_objective": it.ev}


@dataclass
class BargainResult:
    X: np.ndarray              # h x h padded assignment
    Y: np.ndarray              # m x (p + q) incentives
    trace: BargainTrace
    instance: LapInstance
    problem: EpochProblem

    def __iter__(self):
        return iter((self.X, self.Y, self.trace))

    @property
    def dispatch(self) -> list[tuple[int, int]]:
        """(row, column) pairs that are real and feasible."""
        return dispatch_indices(self.X, self.instance)


# --------------------------------------------------------------------------
# Best responses on an epoch problem
# --------------------------------------------------------------------------

def facility_subproblems(prob: EpochProblem, X: np.ndarray) -> list[FacilitySubproblem]:
    m, p, q = prob.m, prob.p, prob.q
    feasible = prob.costs.charge_feasible
    l_min, l_max = prob.charge_bounds
    subs = []
    for s in prob.facilities:
        pairs = []
        for j in np.flatnonzero(prob.charge_facility == s):
            for i in np.flatnonzero(X[:m, p + j] > 0.5):
                if feasible[i, j]:
                    pairs.append((int(i), int(j)))
        b_min, b_max = prob.sum_bounds[s]
        subs.append(FacilitySubproblem(s, sorted(pairs), prob.loss_target.get(s, 0.0),
                                       l_min, l_max, b_min, b_max))
    return subs


def puc_update(prob: EpochProblem, X: np.ndarray) -> np.ndarray:
    """Charge block (m x q) of the utility's best response to X."""
    Yc = np.zeros((prob.m, prob.q))
    for (i, j), y in utility_incentives(facility_subproblems(prob, X)).items():
        Yc[i, j] = y
    return Yc


def ev_update(prob: EpochProblem) -> np.ndarray:
    """Ride block (m x p): every EV's best bids, row by row."""
    r_min, r_max = prob.ride_bounds
    feasible = prob.costs.ride_feasible
    Yr = np.zeros((prob.m, prob.p))
    for i in range(prob.m):
        Yr[i] = ev_best_bids(prob.costs.W[i], feasible[i], r_min, r_max)
    return Yr


def rsp_update(prob: EpochProblem, Y: np.ndarray | None) -> tuple[np.ndarray, float, LapInstance]:
    inst = pad_symmetric(prob.costs.C, prob.costs.D, Y, prob.m, prob.p, prob.q)
    X, obj = solve_lap(inst)
    return X, obj, inst


def _objectives(prob: EpochProblem, X: np.ndarray, Y: np.ndarray) -> tuple[float, float]:
    subs = facility_subproblems(prob, X)
    ydict = {(i, j): Y[i, prob.p + j] for sub in subs for (i, j) in sub.assigned_pairs}
    puc = puc_objective(subs, ydict)
    feasible = prob.costs.ride_feasible
    ev = sum(ev_objective(Y[i, :prob.p], prob.costs.W[i], feasible[i]) for i in range(prob.m))
    return puc, ev


def bargain(prob: EpochProblem, max_iters: int = 20, tol: float = 1e-9) -> BargainResult:
    """Alternate utility, EV and provider best responses until nothing moves."""
    m, p, q = prob.m, prob.p, prob.q
    trace = BargainTrace()
    Y = np.zeros((m, p + q))
    X, f, inst = rsp_update(prob, Y)
    if p + q == 0 or m == 0:
        trace.iterations.append(Iterate(0, X, Y, f, 0.0, 0.0))
        trace.converged = True
        return BargainResult(X, Y, trace, inst, prob)
    trace.iterations.append(Iterate(0, X, Y, f, *_objectives(prob, X, Y)))
    # ride incentives do not depend on X, so they are computed once
    Yr = ev_update(prob)
    for k in range(1, max_iters + 1):
        Yc = puc_update(prob, X)
        Y_new = np.hstack([Yr, Yc])
        X_new, f, inst = rsp_update(prob, Y_new)
        trace.iterations.append(Iterate(k, X_new, Y_new, f, *_objectives(prob, X_new, Y_new)))
        same = np.array_equal(X_new, X) and np.max(np.abs(Y_new - Y), initial=0.0) <= tol
        X, Y = X_new, Y_new
        if same:
            trace.converged = True
            trace.stop_reason = StopReason.FIXED_POINT
            return BargainResult(X, Y, trace, inst, prob)
    trace.stop_reason = StopReason.MAX_ITERS
    # cycling: keep the cheapest iterate, earliest on ties
    best = min(trace.iterations, key=lambda it: (it.f, it.k))
    inst = pad_symmetric(prob.costs.C, prob.costs.D, best.Y, m, p, q)
    return BargainResult(best.X, best.Y, trace, inst, prob)


# --------------------------------------------------------------------------
# Entity-level entry point
# --------------------------------------------------------------------------

def build_epoch(evs: list[Ev], rides: list[RideRequest], charges: list[ChargeRequest],
                graph: CityGraph, cfg: ScenarioConfig, pv: PvProfile | None, minute: int,
                charging_counts: dict | None = None, pool_check=None) -> EpochProblem:
    costs = build_cost_matrices(evs, rides, charges, graph, cfg, pool_check=pool_check)
    if charging_counts is None:
        charging_counts = {s: 0 for s in graph.facility_nodes}
        for ev in evs:
            if ev.activity == Activity.CHARGING and ev.location in charging_counts:
                charging_counts[ev.location] += 1
    loss = {}
    for s in graph.facility_nodes:
        if pv is None:
            loss[s] = 0.0
        else:
            loss[s] = compute_loss_target(s, minute, pv, charging_counts.get(s, 0), cfg)
    return EpochProblem(
        costs=costs,
        charge_facility=np.array([c.facility for c in charges], dtype=np.int64),
        loss_target=loss,
        ride_bounds=cfg.ride_bounds,
        charge_bounds=cfg.charge_entry_bounds,
        sum_bounds={s: cfg.facility_sum_bounds(s) for s in graph.facility_nodes},
        minute=minute,
    )


def run_bargain(evs: list[Ev], rides: list[RideRequest], charges: list[ChargeRequest],
                graph: CityGraph, cfg: ScenarioConfig, pv: PvProfile | None, minute: int,
                charging_counts: dict | None = None, pool_check=None) -> BargainResult:
    prob = build_epoch(evs, rides, charges, graph, cfg, pv, minute, charging_counts, pool_check)
    return bargain(prob, max_iters=cfg.max_iters)
