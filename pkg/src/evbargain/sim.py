"""Minute-resolution day simulator for the shared EV fleet.

Each minute runs a fixed pipeline: admit rides, issue charge requests,
assign, move and charge, expire stale requests, record metrics.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .assign import build_cost_matrices, pad_symmetric, solve_lap, dispatch_indices
from .bargain import bargain
from .incentive import compute_loss_target
from .ingest import builtin_pv, synthetic_requests
from .model import (Activity, ChargeRequest, ChargeStatus, CityGraph, CostMatrices, EpochProblem,
                    Ev, Metrics, Passenger, PvProfile, RideRequest, RideStatus, Scenario,
                    ScenarioConfig, SocBand, build_default_graph, soc_band)

log = logging.getLogger(__name__)

ENERGY_TOL = 1e-9


class SimulationInvariantError(RuntimeError):
    """A bookkeeping invariant of the simulation was violated."""


@dataclass
class SimClock:
    minute: int = 0
    end: int = 1080
    period: int = 1
    start_hour: int = 6

    @property
    def done(self) -> bool:
        return self.minute >= self.end

    @property
    def is_epoch(self) -> bool:
        return self.minute % self.period == 0

    def label(self, minute: int | None = None) -> str:
        t = self.minute if minute is None else minute
        return f"{self.start_hour + t // 60:02d}:{t % 60:02d}"


@dataclass
class SimResult:
    metrics: Metrics
    timeseries: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    snapshot: dict | None = None
    requests: list = field(default_factory=list)


@dataclass
class SimState:
    cfg: ScenarioConfig
    graph: CityGraph
    pv: PvProfile
    clock: SimClock
    fleet: list
    requests: list                       # every ride of the day, ordered by submit minute
    metrics: Metrics
    pending: list = field(default_factory=list)
    charges: list = field(default_factory=list)
    next_request: int = 0
    next_charge_id: int = 0
    timeseries: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    record_trace: bool = False
    dump_minute: int | None = None
    snapshot: dict | None = None
    initial_soc: float = 0.0
    energy_delivered: float = 0.0
    drained: float = 0.0
    by_id: dict = field(default_factory=dict)

    @property
    def scenario(self) -> Scenario:
        return self.cfg.scenario_enum

    @property
    def drain(self) -> float:
        return 0.0 if self.scenario == Scenario.FOSSIL else self.cfg.drive_drain


# --------------------------------------------------------------------------
# Pooling
# --------------------------------------------------------------------------

def remaining_minutes(ev: Ev, graph: CityGraph) -> int:
    """Driving minutes left on the EV's route, dwell excluded."""
    if not ev.route:
        return 0
    return len(ev.route) * graph.minutes_per_hop - ev.edge_elapsed


def pooling_feasible(ev: Ev, ride: RideRequest, graph: CityGraph, cfg: ScenarioConfig,
                     minute: int | None = None) -> bool:
    """Can a riding EV pick ``ride`` up on its way without breaking a promise?

    The pickup must lie on the remaining route, the destination must match and
    a seat must be free. With ``minute`` given, every onboard passenger must
    still arrive by their deadline after the extra dwell.
    """
    if cfg.scenario_enum != Scenario.CASE2 or ev.activity != Activity.RIDING:
        return False
    if not ride.willing_to_share or ride.degenerate:
        return False
    if not all(p.willing_to_share for p in ev.onboard):
        return False
    if ride.destination != ev.destination or ride.origin == ev.destination:
        return False
    if len(ev.onboard) >= ev.seats_total or ev.free_seats <= 0:
        return False
    ahead = list(ev.route)
    if ev.edge_elapsed == 0:
        ahead.insert(0, ev.location)
    if ride.origin not in ahead:
        return False
    if minute is not None:
        extra = cfg.detour_delay_per_passenger * (len(ev.pending_pickups) + 1)
        eta = minute + ev.dwell + remaining_minutes(ev, graph) + extra
        if any(eta > p.deadline for p in ev.onboard):
            return False
    return True


# --------------------------------------------------------------------------
# Setup
# --------------------------------------------------------------------------

def init_fleet(cfg: ScenarioConfig, graph: CityGraph, rng: np.random.Generator) -> list[Ev]:
    fleet = []
    for i in range(cfg.fleet_size):
        node = int(rng.integers(1, graph.node_count + 1))
        frac = 1.0 if cfg.initial_soc == "full" else float(rng.uniform(0.1, 1.0))
        fleet.append(Ev(id=i, location=node, soc=frac * cfg.battery_capacity,
                        battery_capacity=cfg.battery_capacity))
    return fleet


def prepare_requests(requests: list[RideRequest], cfg: ScenarioConfig,
                     rng: np.random.Generator) -> list[RideRequest]:
    """Fresh copies with bids and sharing decisions drawn in request order.

    The sharing draw is independent of the willingness level, so sweeps over
    willingness compare the same customers.
    """
    out = []
    for r in sorted(requests, key=lambda r: (r.submit_minute, r.id)):
        bid = float(rng.uniform(0.0, cfg.h_max))
        draw = float(rng.uniform())
        out.append(dataclasses.replace(r, bid=bid, share_draw=draw,
                                       willing_to_share=draw < cfg.willingness,
                                       status=RideStatus.PENDING, assigned_ev=None,
                                       pickup_minute=None, dropoff_minute=None))
    return out


def new_state(cfg: ScenarioConfig, requests: list[RideRequest] | None = None,
              pv: PvProfile | None = None, graph: CityGraph | None = None,
              seed: int | None = None, record_trace: bool = False,
              dump_minute: int | None = None) -> SimState:
    seed = cfg.rng_seed if seed is None else seed
    graph = build_default_graph() if graph is None else graph
    pv = builtin_pv(cfg) if pv is None else pv
    if requests is None:
        requests = synthetic_requests(cfg.n_requests, graph, seed=[seed, 0],
                                      minutes=cfg.sim_minutes)
    for r in requests:
        for node in (r.origin, r.destination):
            if not 1 <= node <= graph.node_count:
                raise ValueError(f"ride {r.id} references unknown node {node}")
    rides = prepare_requests(requests, cfg, np.random.default_rng([seed, 1]))
    fleet = init_fleet(cfg, graph, np.random.default_rng([seed, 2]))
    metrics = Metrics(scenario=cfg.scenario, weather=pv.weather, willingness=cfg.willingness,
                      seed=seed)
    metrics.pl_defined = cfg.scenario_enum != Scenario.FOSSIL
    initial = float(sum(ev.soc for ev in fleet))
    metrics.initial_soc_kwh = initial
    return SimState(cfg=cfg, graph=graph, pv=pv,
                    clock=SimClock(0, cfg.sim_minutes, cfg.assignment_period, cfg.start_hour),
                    fleet=fleet, requests=rides, metrics=metrics, record_trace=record_trace,
                    dump_minute=dump_minute, initial_soc=initial,
                    by_id={r.id: r for r in rides})


# --------------------------------------------------------------------------
# Pipeline stages
# --------------------------------------------------------------------------

def _admit_rides(state: SimState) -> None:
    t = state.clock.minute
    while (state.next_request < len(state.requests)
           and state.requests[state.next_request].submit_minute <= t):
        r = state.requests[state.next_request]
        state.next_request += 1
        state.metrics.received_rides += 1
        state.pending.append(r)


def charging_counts(state: SimState) -> dict[int, int]:
    counts = {s: 0 for s in state.graph.facility_nodes}
    for ev in state.fleet:
        if ev.activity == Activity.CHARGING:
            counts[ev.location] = counts.get(ev.location, 0) + 1
    return counts


def enroute_counts(state: SimState) -> dict[int, int]:
    counts = {s: 0 for s in state.graph.facility_nodes}
    for ev in state.fleet:
        if ev.activity == Activity.TO_CHARGER:
            counts[ev.destination] = counts.get(ev.destination, 0) + 1
    return counts


def charge_request_count(pv_kw: float, p_ch: float, charging: int, enroute: int) -> int:
    """q_s = max(0, floor(P_ref / p_ch) - charging - enroute)."""
    return max(0, int(np.floor(pv_kw / p_ch + 1e-12)) - charging - enroute)


def _issue_charge_requests(state: SimState) -> None:
    if state.scenario not in (Scenario.CASE1, Scenario.CASE2):
        return
    t = state.clock.minute
    for c in state.charges:
        c.status = ChargeStatus.EXPIRED
    state.charges = []
    charging, enroute = charging_counts(state), enroute_counts(state)
    for s in state.graph.facility_nodes:
        q = charge_request_count(state.pv.at(s, t), state.cfg.p_ch,
                                 charging.get(s, 0), enroute.get(s, 0))
        for _ in range(q):
            state.charges.append(ChargeRequest(id=state.next_charge_id, facility=s, issue_minute=t))
            state.next_charge_id += 1


def _eta_deadline(state: SimState, ev: Ev, t: int) -> int:
    eta = t + ev.dwell + remaining_minutes(ev, state.graph)
    if state.scenario == Scenario.CASE2:
        eta += state.cfg.detour_delay_per_passenger * max(ev.free_seats, 0)
    return eta


def _board(state: SimState, ev: Ev, ride: RideRequest, t: int, pooled: bool) -> None:
    if len(ev.onboard) >= ev.seats_total:
        raise SimulationInvariantError(f"EV {ev.id} is full but was asked to board ride {ride.id}")
    if pooled:
        ev.pending_pickups.remove(ride.id)
        ev.dwell += state.cfg.detour_delay_per_passenger
        state.metrics.pooled_rides += 1
    ride.pickup_minute = t
    ev.onboard.append(Passenger(ride.id, ride.destination, 0, ride.willing_to_share))
    ev.onboard[-1].deadline = _eta_deadline(state, ev, t)


def _dispatch_ride(state: SimState, ev: Ev, ride: RideRequest, t: int) -> None:
    ride.status = RideStatus.ASSIGNED
    ride.assigned_ev = ev.id
    g = state.graph
    if ev.activity == Activity.RIDING:
        ev.pending_pickups.append(ride.id)
        if ev.location == ride.origin and ev.edge_elapsed == 0:
            _board(state, ev, ride, t, pooled=True)
        return
    ev.committed_request = ride.id
    if ev.location == ride.origin and ride.degenerate:
        _complete_in_place(state, ev, ride, t)
    elif ev.location == ride.origin:
        ev.activity = Activity.RIDING
        ev.route = g.path(ride.origin, ride.destination)
        _board(state, ev, ride, t, pooled=False)
    else:
        ev.activity = Activity.TO_PICKUP
        ev.route = g.path(ev.location, ride.origin)


def _complete_in_place(state: SimState, ev: Ev, ride: RideRequest, t: int) -> None:
    """Pickup and drop-off in the same region take no driving time."""
    ride.status = RideStatus.COMPLETED
    ride.pickup_minute = ride.dropoff_minute = t
    state.metrics.completed_rides += 1
    ev.committed_request = None
    ev.activity = Activity.IDLE
    ev.route = []


def _dispatch_charge(state: SimState, ev: Ev, req: ChargeRequest) -> None:
    req.status = ChargeStatus.ASSIGNED
    ev.committed_request = None
    if ev.location == req.facility:
        ev.activity = Activity.CHARGING
        ev.route = []
    else:
        ev.activity = Activity.TO_CHARGER
        ev.route = state.graph.path(ev.location, req.facility)


def _send_low_to_charge(state: SimState) -> None:
    """Business as usual: idle EVs below the low-SOC band head for the nearest facility."""
    g, cfg = state.graph, state.cfg
    for ev in state.fleet:
        if ev.activity != Activity.IDLE or soc_band(ev, cfg) != SocBand.LOW:
            continue
        s = g.nearest_facility(ev.location)
        need = g.hops(ev.location, s) * g.minutes_per_hop * cfg.drive_drain
        if ev.soc + 1e-12 < need:
            continue
        if s == ev.location:
            ev.activity = Activity.CHARGING
        else:
            ev.activity = Activity.TO_CHARGER
            ev.route = g.path(ev.location, s)


def _candidates(state: SimState) -> list[Ev]:
    case2 = state.scenario == Scenario.CASE2
    out = []
    for ev in state.fleet:
        if ev.activity == Activity.IDLE and ev.committed_request is None:
            out.append(ev)
        elif case2 and ev.activity == Activity.RIDING and ev.dwell == 0:
            out.append(ev)
    return out


def _select_rows(prob: EpochProblem, rows: np.ndarray) -> EpochProblem:
    c = prob.costs
    costs = CostMatrices(C=c.C[rows], D=c.D[rows], A=c.A[rows], W=c.W[rows])
    return dataclasses.replace(prob, costs=costs)


def _epoch_problem(state: SimState, evs: list[Ev]) -> tuple[EpochProblem, list[Ev]]:
    cfg, g, t = state.cfg, state.graph, state.clock.minute
    charges = state.charges
    costs = build_cost_matrices(evs, state.pending, charges, g, cfg,
                                pool_check=lambda ev, r: pooling_feasible(ev, r, g, cfg, t))
    counts = charging_counts(state)
    prob = EpochProblem(
        costs=costs,
        charge_facility=np.array([c.facility for c in charges], dtype=np.int64),
        loss_target={s: compute_loss_target(s, t, state.pv, counts.get(s, 0), cfg)
                     for s in g.facility_nodes},
        ride_bounds=cfg.ride_bounds,
        charge_bounds=cfg.charge_entry_bounds,
        sum_bounds={s: cfg.facility_sum_bounds(s) for s in g.facility_nodes},
        minute=t,
    )
    # EVs with no feasible request cannot change the outcome
    useful = np.flatnonzero(np.any(costs.ride_feasible, axis=1) | np.any(costs.charge_feasible, axis=1))
    if state.dump_minute == t and len(useful) < len(evs):
        useful = np.arange(len(evs))
    return _select_rows(prob, useful), [evs[i] for i in useful]


def _assign(state: SimState) -> tuple[float, float]:
    """Run the scenario's assignment; returns (ride, charge) incentive sums."""
    t = state.clock.minute
    if state.scenario == Scenario.BUSINESS_AS_USUAL:
        _send_low_to_charge(state)
    dumping = state.dump_minute == t
    if not dumping and (not state.pending and not state.charges):
        return 0.0, 0.0
    evs = _candidates(state)
    prob, evs = _epoch_problem(state, evs)
    if not dumping and (prob.m == 0 or prob.p + prob.q == 0):
        return 0.0, 0.0
    m, p = prob.m, prob.p
    if state.scenario in (Scenario.FOSSIL, Scenario.BUSINESS_AS_USUAL):
        inst = pad_symmetric(prob.costs.C, prob.costs.D, None, m, p, prob.q)
        X, _ = solve_lap(inst)
        Y = np.zeros((m, p + prob.q))
        pairs = dispatch_indices(X, inst)
        converged = True
    else:
        res = bargain(prob, max_iters=state.cfg.max_iters)
        X, Y, pairs = res.X, res.Y, res.dispatch
        converged = res.trace.converged
        state.metrics.epochs += 1
        state.metrics.epochs_converged += int(converged)
        if state.record_trace:
            for row in res.trace.rows():
                state.trace.append({"minute": t, **row,
                                    "stop_reason": res.trace.stop_reason.value})
    if dumping:
        state.snapshot = {"minute": t, "scenario": state.cfg.scenario, "converged": converged,
                          "merit_eps": state.cfg.merit_eps, "problem": prob.to_dict(),
                          "X": np.asarray(X).tolist(), "Y": np.asarray(Y).tolist()}
    ride_sum = charge_sum = 0.0
    for i, j in pairs:
        ev = evs[i]
        if j < p:
            ride = state.pending[j]
            _dispatch_ride(state, ev, ride, t)
            ride_sum += Y[i, j]
        else:
            _dispatch_charge(state, ev, state.charges[j - p])
            charge_sum += Y[i, j]
    state.pending = [r for r in state.pending if r.status == RideStatus.PENDING]
    state.charges = [c for c in state.charges if c.status == ChargeStatus.PENDING]
    return float(ride_sum), float(charge_sum)


def _arrive(state: SimState, ev: Ev, t: int) -> None:
    """Events when an EV reaches a node."""
    if ev.activity == Activity.RIDING:
        for rid in list(ev.pending_pickups):
            if state.by_id[rid].origin == ev.location:
                _board(state, ev, state.by_id[rid], t, pooled=True)
        if not ev.route:
            for p in ev.onboard:
                ride = state.by_id[p.ride_id]
                ride.status = RideStatus.COMPLETED
                ride.dropoff_minute = t
                state.metrics.completed_rides += 1
            if ev.pending_pickups:
                raise SimulationInvariantError(f"EV {ev.id} finished its route with pickups pending")
            ev.onboard = []
            ev.committed_request = None
            ev.activity = Activity.IDLE
    elif ev.activity == Activity.TO_PICKUP and not ev.route:
        ride = state.by_id[ev.committed_request]
        if ride.degenerate:
            _complete_in_place(state, ev, ride, t)
            return
        ev.activity = Activity.RIDING
        ev.route = state.graph.path(ride.origin, ride.destination)
        _board(state, ev, ride, t, pooled=False)
    elif ev.activity == Activity.TO_CHARGER and not ev.route:
        if ev.location not in state.graph.facility_nodes:
            raise SimulationInvariantError(f"EV {ev.id} reached non-facility node {ev.location} to charge")
        ev.activity = Activity.CHARGING


def _advance(state: SimState) -> dict[int, float]:
    """Move and charge every EV for one minute; returns kWh delivered per facility."""
    cfg, g, t = state.cfg, state.graph, state.clock.minute
    delivered = {s: 0.0 for s in g.facility_nodes}
    m = state.metrics
    for ev in state.fleet:
        if ev.activity == Activity.CHARGING:
            gain = min(cfg.charge_gain, ev.battery_capacity - ev.soc)
            ev.soc += gain
            delivered[ev.location] += gain
            state.energy_delivered += gain
            m.charging_minutes += 1
            if ev.soc >= ev.battery_capacity - 1e-12:
                ev.activity = Activity.IDLE
        elif ev.dwell > 0:
            ev.dwell -= 1
        elif ev.route:
            ev.soc -= state.drain
            state.drained += state.drain
            m.driving_minutes += 1
            ev.edge_elapsed += 1
            if ev.edge_elapsed >= g.minutes_per_hop:
                ev.location = ev.route.pop(0)
                ev.edge_elapsed = 0
                _arrive(state, ev, t)
    return delivered


def _expire(state: SimState) -> None:
    t = state.clock.minute
    keep = []
    for r in state.pending:
        if t - r.submit_minute >= state.cfg.max_wait_minutes:
            r.status = RideStatus.MISSED
            state.metrics.missed_rides += 1
        else:
            keep.append(r)
    state.pending = keep


def _record(state: SimState, delivered: dict, incentives: tuple[float, float]) -> None:
    cfg, t, m = state.cfg, state.clock.minute, state.metrics
    row = {"minute": t, "clock": state.clock.label()}
    for a in Activity:
        row[a.value] = 0
    for b in SocBand:
        row[f"soc_{b.value.lower()}"] = 0
    for ev in state.fleet:
        row[ev.activity.value] += 1
        row[f"soc_{soc_band(ev, cfg).value.lower()}"] += 1
    for s in state.graph.facility_nodes:
        pv_kw = state.pv.at(s, t)
        pv_kwh = pv_kw / 60.0
        m.pv_available_kwh += pv_kwh
        m.pv_used_kwh += min(delivered[s], pv_kwh)
        m.charged_kwh += delivered[s]
        if pv_kw > 0:
            m.charged_kwh_pv_minutes += delivered[s]
        row[f"pv_kw_{s}"] = pv_kw
        row[f"charge_kw_{s}"] = delivered[s] * 60.0
    row["ride_incentive"], row["charge_incentive"] = incentives
    row["pending_rides"] = len(state.pending)
    row["pending_charges"] = len(state.charges)
    row["cumulative_missed"] = m.missed_rides
    state.timeseries.append(row)


def check_invariants(state: SimState) -> None:
    for ev in state.fleet:
        try:
            ev.check()
        except ValueError as exc:
            raise SimulationInvariantError(str(exc)) from exc
        if ev.activity == Activity.CHARGING and ev.location not in state.graph.facility_nodes:
            raise SimulationInvariantError(f"EV {ev.id} charging away from a facility")
    total = sum(ev.soc for ev in state.fleet)
    expected = state.initial_soc - state.drained + state.energy_delivered
    if abs(total - expected) > ENERGY_TOL:
        raise SimulationInvariantError(f"energy bookkeeping off by {total - expected:.3e} kWh")


def step(state: SimState) -> SimState:
    """Advance the simulation by one minute."""
    if state.clock.done:
        raise ValueError("simulation already finished")
    _admit_rides(state)
    _issue_charge_requests(state)
    incentives = _assign(state) if state.clock.is_epoch else (0.0, 0.0)
    delivered = _advance(state)
    _expire(state)
    _record(state, delivered, incentives)
    check_invariants(state)
    state.clock.minute += 1
    return state


def finalize(state: SimState) -> Metrics:
    m, cfg = state.metrics, state.cfg
    m.open_rides = sum(1 for r in state.requests[:state.next_request]
                       if r.status in (RideStatus.PENDING, RideStatus.ASSIGNED))
    if m.received_rides != m.completed_rides + m.missed_rides + m.open_rides:
        raise SimulationInvariantError("ride requests were lost in bookkeeping")
    m.final_soc_kwh = float(sum(ev.soc for ev in state.fleet))
    bands = {b.value: 0 for b in SocBand}
    for ev in state.fleet:
        bands[soc_band(ev, cfg).value] += 1
    m.final_soc_bands = bands
    # identity with the per-minute drain: final = initial - drain * minutes + charged
    expected = m.initial_soc_kwh - state.drain * m.driving_minutes + m.charged_kwh
    if abs(m.final_soc_kwh - expected) > ENERGY_TOL * max(1.0, len(state.fleet)):
        raise SimulationInvariantError(f"energy identity off by {m.final_soc_kwh - expected:.3e} kWh")
    return m


def run_scenario(cfg: ScenarioConfig, requests: list[RideRequest] | None = None,
                 pv: PvProfile | None = None, graph: CityGraph | None = None,
                 seed: int | None = None, record_trace: bool = False,
                 dump_minute: int | None = None) -> SimResult:
    """Simulate one day and return metrics, time series and optional trace."""
    state = new_state(cfg, requests, pv, graph, seed, record_trace, dump_minute)
    while not state.clock.done:
        step(state)
    metrics = finalize(state)
    return SimResult(metrics=metrics, timeseries=state.timeseries, trace=state.trace,
                     snapshot=state.snapshot, requests=state.requests)


def run_seeds(cfg: ScenarioConfig, seeds, requests=None, pv=None, graph=None) -> list[Metrics]:
    """Metrics of independent days, one per seed."""
    return [run_scenario(cfg, requests, pv, graph, seed=int(s)).metrics for s in seeds]


def aggregate(metrics: list[Metrics]) -> dict:
    """Mean and sample standard deviation of QoS and PL over runs."""
    qos = np.array([m.qos for m in metrics])
    pls = np.array([m.pl for m in metrics if m.pl_valid])
    out = {"runs": len(metrics),
           "qos_mean": float(qos.mean()) if qos.size else float("nan"),
           "qos_sd": float(qos.std(ddof=1)) if qos.size > 1 else 0.0,
           "pl_mean": float(pls.mean()) if pls.size else None,
           "pl_sd": float(pls.std(ddof=1)) if pls.size > 1 else (0.0 if pls.size else None)}
    for key in ("received_rides", "missed_rides", "charged_kwh", "charging_minutes",
                "pv_available_kwh", "pv_used_kwh", "pooled_rides"):
        out[f"{key}_mean"] = float(np.mean([getattr(m, key) for m in metrics]))
    return out
