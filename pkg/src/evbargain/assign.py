"""Ride-service provider assignment: cost matrices, square padding, exact LAP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import (COST_CEILING, INFEASIBLE, Activity, ChargeRequest, CityGraph,
                    CostMatrices, Ev, RideRequest, Scenario, ScenarioConfig)


@dataclass
class LapInstance:
    """Square net-cost matrix over padded EVs (rows) and requests (columns).

    ``base_cost`` holds c_ij / d_ij before incentives; pairs whose base cost is
    at least ``COST_CEILING`` are virtual or infeasible and never dispatched.
    """

    net_cost: np.ndarray
    base_cost: np.ndarray
    m: int
    p: int
    q: int

    @property
    def h(self) -> int:
        return self.net_cost.shape[0]


# --------------------------------------------------------------------------
# Cost matrices
# --------------------------------------------------------------------------

def _reserve(graph: CityGraph, node: int, cfg: ScenarioConfig) -> float:
    if not cfg.reserve_to_facility:
        return 0.0
    hops = graph.hops(node, graph.nearest_facility(node))
    return hops * graph.minutes_per_hop * cfg.drive_drain


def pooling_candidate(ev: Ev) -> bool:
    return ev.activity == Activity.RIDING


def build_cost_matrices(evs: list[Ev], rides: list[RideRequest], charges: list[ChargeRequest],
                        graph: CityGraph, cfg: ScenarioConfig, pool_check=None) -> CostMatrices:
    """Costs and fixed incentives for every EV/request pair.

    ``pool_check(ev, ride)`` decides pooling feasibility for EVs that are
    already carrying passengers; such EVs are otherwise infeasible for rides.
    """
    if cfg.hop_cost < 0:
        raise ValueError("per-hop cost must be non-negative")
    for r in rides:
        for node in (r.origin, r.destination):
            if not 1 <= node <= graph.node_count:
                raise ValueError(f"ride {r.id} references unknown node {node}")
    for c in charges:
        if c.facility not in graph.facility_nodes:
            raise ValueError(f"charge request {c.id} references non-facility node {c.facility}")

    m, p, q = len(evs), len(rides), len(charges)
    kappa = cfg.hop_cost
    energy_per_hop = graph.minutes_per_hop * cfg.drive_drain
    fossil = cfg.scenario_enum == Scenario.FOSSIL
    case2 = cfg.scenario_enum == Scenario.CASE2

    C = np.full((m, p), INFEASIBLE)
    D = np.full((m, q), INFEASIBLE)
    A = np.full((m, p), INFEASIBLE)
    W = np.zeros((m, p))
    for i, ev in enumerate(evs):
        pooled = pooling_candidate(ev)
        if ev.activity not in (Activity.IDLE, Activity.RIDING) or (pooled and not case2):
            continue
        if ev.committed_request is not None and not pooled:
            continue
        seats = ev.free_seats if case2 else 0
        for j, r in enumerate(rides):
            to_pickup = graph.hops(ev.location, r.origin)
            trip = graph.hops(r.origin, r.destination)
            a = kappa * (to_pickup + trip)
            A[i, j] = a
            W[i, j] = r.bid - cfg.alpha * a + (cfg.beta * seats if case2 else 0.0)
            if to_pickup > cfg.ride_hop_limit:
                continue
            if pooled:
                if pool_check is None or not pool_check(ev, r):
                    continue
                # pooled pickups lie on the current route: no extra driving
                end_soc = ev.soc - len(ev.route) * energy_per_hop
                end_node = ev.destination
            else:
                end_soc = ev.soc - (to_pickup + trip) * energy_per_hop
                end_node = r.destination
            if not fossil and end_soc < _reserve(graph, end_node, cfg) - 1e-12:
                continue
            C[i, j] = a
        if pooled or fossil:
            continue
        if ev.soc > cfg.soc_charge_eligibility * ev.battery_capacity:
            continue
        for j, c in enumerate(charges):
            hops = graph.hops(ev.location, c.facility)
            if hops > cfg.charge_hop_limit or ev.soc - hops * energy_per_hop < 0:
                continue
            D[i, j] = kappa * hops
    return CostMatrices(C=C, D=D, A=A, W=W)


def fixed_incentive(bid: float, alpha: float, dropoff_cost: float,
                    beta: float = 0.0, seats: float = 0.0) -> float:
    """w = h - alpha * a (+ beta * b when ride-sharing)."""
    return bid - alpha * dropoff_cost + beta * seats


# --------------------------------------------------------------------------
# Padding
# --------------------------------------------------------------------------

def pad_symmetric(C: np.ndarray, D: np.ndarray, Y: np.ndarray | None,
                  m: int, p: int, q: int) -> LapInstance:
    """Square h x h instance, h = max(m, p + q).

    Real pairs cost (c - y) or (d - y); infeasible pairs keep the sentinel.
    Virtual rows/columns cost the sentinel against real agents and 0 against
    each other.
    """
    C = np.asarray(C, dtype=float).reshape(m, p)
    D = np.asarray(D, dtype=float).reshape(m, q)
    h = max(m, p + q)
    base = np.full((h, h), INFEASIBLE)
    base[m:, p + q:] = 0.0
    base[:m, :p] = C
    base[:m, p:p + q] = D
    net = base.copy()
    if Y is not None and m and (p + q):
        Y = np.asarray(Y, dtype=float).reshape(m, p + q)
        real = base[:m, :p + q]
        net[:m, :p + q] = np.where(real < COST_CEILING, real - Y, real)
    return LapInstance(net_cost=net, base_cost=base, m=m, p=p, q=q)


# --------------------------------------------------------------------------
# Solver
# --------------------------------------------------------------------------

@njit(cache=True)
def _hungarian(a):
    n = a.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, np.int64)
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col, u[1:], v[1:]


def _lex_smallest(tight: np.ndarray, col: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching of the tight subgraph.

    Row by row, try each smaller tight column and reroute the displaced rows
    along an alternating path; the first success is kept.
    """
    n = tight.shape[0]
    col = col.copy()
    row_of = np.empty(n, dtype=np.int64)
    row_of[col] = np.arange(n)
    for i in range(n):
        for j in np.flatnonzero(tight[i, :col[i]]):
            k = row_of[j]
            if k < i:
                continue
            path = _alternating_path(tight, col, row_of, i, k, int(col[i]))
            if path is None:
                continue
            for r, c in path:
                col[r] = c
                row_of[c] = r
            col[i] = j
            row_of[j] = i
            break
    return col


def _alternating_path(tight, col, row_of, fixed_upto, start, target):
    """Rows > fixed_upto reassigned so that `start` gives up its column and
    `target` becomes taken; returns the list of (row, new column) moves."""
    n = tight.shape[0]
    parent = {start: None}
    via = {}
    queue = [start]
    seen = {int(col[start])}
    head = 0
    while head < len(queue):
        r = queue[head]
        head += 1
        for c in np.flatnonzero(tight[r]):
            c = int(c)
            if c in seen:
                continue
            if c == target:
                moves = [(r, c)]
                while parent[r] is not None:
                    prev_row = parent[r]
                    moves.append((prev_row, via[r]))
                    r = prev_row
                return moves
            rr = int(row_of[c])
            if rr <= fixed_upto:
                continue
            seen.add(c)
            parent[rr] = r
            via[rr] = c
            queue.append(rr)
    return None


def solve_lap(inst: LapInstance | np.ndarray, lexicographic: bool = True) -> tuple[np.ndarray, float]:
    """Exact minimum-cost permutation of a square matrix.

    Returns the 0/1 assignment matrix and the objective. Among optimal
    permutations the lexicographically smallest row->column sequence is chosen.
    """
    cost = inst.net_cost if isinstance(inst, LapInstance) else np.asarray(inst, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    if n == 0:
        return np.zeros((0, 0)), 0.0
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    col, u, v = _hungarian(np.ascontiguousarray(cost))
    best = float(cost[np.arange(n), col].sum())
    if lexicographic and n > 1:
        reduced = cost - u[:, None] - v[None, :]
        tight = reduced <= 1e-9 * (1.0 + np.abs(cost))
        cand = _lex_smallest(tight, col)
        cand_cost = float(cost[np.arange(n), cand].sum())
        if cand_cost <= best + 1e-9 * (1.0 + abs(best)):
            col = cand
            best = cand_cost
    X = np.zeros((n, n))
    X[np.arange(n), col] = 1.0
    return X, best


def assignment_to_dispatch(X: np.ndarray, inst: LapInstance, evs: list, rides: list,
                           charges: list) -> list[tuple[int, int]]:
    """(ev id, request id) pairs for real, feasible matches of X."""
    out = []
    rows, cols = np.nonzero(X[:inst.m, :inst.p + inst.q] > 0.5)
    for i, j in zip(rows, cols):
        if inst.base_cost[i, j] >= COST_CEILING:
            continue
        req = rides[j] if j < inst.p else charges[j - inst.p]
        out.append((evs[i].id, req.id))
    return out


def dispatch_indices(X: np.ndarray, inst: LapInstance) -> list[tuple[int, int]]:
    """(row, column) index pairs of real, feasible matches of X."""
    rows, cols = np.nonzero(X[:inst.m, :inst.p + inst.q] > 0.5)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if inst.base_cost[i, j] < COST_CEILING]
