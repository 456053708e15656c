"""Domain types shared across the package.

Nodes of the city graph are 1-based (the default instance has facilities at
nodes 3, 5, 8 and 9); all matrices are 0-based.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

#: Cost marking an infeasible vehicle/request pair.
INFEASIBLE = 1.0e6
#: Every legitimate cost must stay below this bound.
COST_CEILING = 1.0e5


class Activity(str, enum.Enum):
    IDLE = "Idle"
    TO_PICKUP = "ToPickup"
    RIDING = "Riding"
    TO_CHARGER = "ToCharger"
    CHARGING = "Charging"


class RideStatus(str, enum.Enum):
    PENDING = "Pending"
    ASSIGNED = "Assigned"
    COMPLETED = "Completed"
    MISSED = "Missed"


class ChargeStatus(str, enum.Enum):
    PENDING = "Pending"
    ASSIGNED = "Assigned"
    EXPIRED = "Expired"


class SocBand(str, enum.Enum):
    LOW = "Low"
    MID = "Mid"
    HIGH = "High"


class Scenario(str, enum.Enum):
    FOSSIL = "fossil"
    BUSINESS_AS_USUAL = "business_as_usual"
    CASE1 = "case1"
    CASE2 = "case2"


WEATHERS = ("sunny", "cloudy_morning", "cloudy_afternoon")
WILLINGNESS_LEVELS = (1.0, 0.75, 0.5, 0.25)


# --------------------------------------------------------------------------
# City graph
# --------------------------------------------------------------------------

# 3x3 grid (1 2 3 / 4 5 6 / 7 8 9) plus six diagonals.
DEFAULT_EDGES = (
    (1, 2), (2, 3), (4, 5), (5, 6), (7, 8), (8, 9),
    (1, 4), (4, 7), (2, 5), (5, 8), (3, 6), (6, 9),
    (1, 5), (2, 4), (2, 6), (4, 8), (5, 7), (5, 9),
)
DEFAULT_FACILITIES = (3, 5, 8, 9)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class CityGraph:
    node_count: int
    edges: frozenset
    facility_nodes: tuple
    hop_distance: np.ndarray = field(repr=False, compare=False)
    minutes_per_hop: int = 10

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int]],
                   facility_nodes: Iterable[int], minutes_per_hop: int = 10) -> "CityGraph":
        norm = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if not (1 <= u <= node_count and 1 <= v <= node_count):
                raise GraphError(f"edge ({u}, {v}) references a node outside 1..{node_count}")
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            norm.add((min(u, v), max(u, v)))
        facilities = tuple(sorted(int(s) for s in facility_nodes))
        for s in facilities:
            if not 1 <= s <= node_count:
                raise GraphError(f"facility node {s} is not a graph node")
        hops = _bfs_all_pairs(node_count, norm)
        if np.any(hops < 0):
            raise GraphError("graph is not connected")
        hops.setflags(write=False)
        return cls(node_count, frozenset(norm), facilities, hops, minutes_per_hop)

    @property
    def nodes(self) -> range:
        return range(1, self.node_count + 1)

    def hops(self, u: int, v: int) -> int:
        return int(self.hop_distance[u - 1, v - 1])

    def neighbors(self, u: int) -> list[int]:
        out = [b if a == u else a for a, b in self.edges if u in (a, b)]
        return sorted(out)

    def path(self, u: int, v: int) -> list[int]:
        """Shortest hop path from u to v, excluding u.

        Among equal-length paths the one taking the lowest-numbered next node
        at every step is returned.
        """
        out = []
        cur = u
        while cur != v:
            d = self.hops(cur, v)
            cur = next(n for n in self.neighbors(cur) if self.hops(n, v) == d - 1)
            out.append(cur)
        return out

    def nearest_facility(self, u: int) -> int:
        return min(self.facility_nodes, key=lambda s: (self.hops(u, s), s))

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "edges": sorted(list(e) for e in self.edges),
            "facility_nodes": list(self.facility_nodes),
            "minutes_per_hop": self.minutes_per_hop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CityGraph":
        return cls.from_edges(d["node_count"], [tuple(e) for e in d["edges"]],
                              d["facility_nodes"], d.get("minutes_per_hop", 10))


def _bfs_all_pairs(n: int, edges: set) -> np.ndarray:
    adj = [[] for _ in range(n + 1)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    dist = np.full((n, n), -1, dtype=np.int64)
    for src in range(1, n + 1):
        dist[src - 1, src - 1] = 0
        queue = deque([src])
        while queue:
            a = queue.popleft()
            for b in adj[a]:
                if dist[src - 1, b - 1] < 0:
                    dist[src - 1, b - 1] = dist[src - 1, a - 1] + 1
                    queue.append(b)
    return dist


def build_default_graph() -> CityGraph:
    """The 9-region lower-Manhattan abstraction with four charging facilities."""
    return CityGraph.from_edges(9, DEFAULT_EDGES, DEFAULT_FACILITIES)


# --------------------------------------------------------------------------
# Entities
# --------------------------------------------------------------------------

@dataclass
class Passenger:
    ride_id: int
    destination: int
    deadline: int
    willing_to_share: bool = True


@dataclass
class Ev:
    id: int
    location: int
    soc: float
    battery_capacity: float = 50.0
    activity: Activity = Activity.IDLE
    onboard: list = field(default_factory=list)
    seats_total: int = 4
    committed_request: int | None = None
    # movement state: upcoming nodes and minutes already spent on the current edge
    route: list = field(default_factory=list)
    edge_elapsed: int = 0
    dwell: int = 0
    # pooled pickups not yet boarded: list of ride ids
    pending_pickups: list = field(default_factory=list)

    @property
    def destination(self) -> int:
        return self.route[-1] if self.route else self.location

    @property
    def free_seats(self) -> int:
        return self.seats_total - len(self.onboard) - len(self.pending_pickups)

    def check(self) -> None:
        if not -1e-9 <= self.soc <= self.battery_capacity + 1e-9:
            raise ValueError(f"EV {self.id}: soc {self.soc} outside [0, {self.battery_capacity}]")
        if len(self.onboard) > self.seats_total:
            raise ValueError(f"EV {self.id}: {len(self.onboard)} passengers exceed {self.seats_total} seats")


@dataclass
class RideRequest:
    id: int
    submit_minute: int
    origin: int
    destination: int
    bid: float = 0.0
    willing_to_share: bool = False
    status: RideStatus = RideStatus.PENDING
    share_draw: float = 1.0
    assigned_ev: int | None = None
    pickup_minute: int | None = None
    dropoff_minute: int | None = None

    @property
    def degenerate(self) -> bool:
        return self.origin == self.destination


@dataclass
class ChargeRequest:
    id: int
    facility: int
    issue_minute: int
    status: ChargeStatus = ChargeStatus.PENDING


@dataclass
class CostMatrices:
    """Ride costs C, charge costs D, drop-off costs A and fixed incentives W."""

    C: np.ndarray
    D: np.ndarray
    A: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        m = self.C.shape[0]
        if self.D.shape[0] != m or self.A.shape != self.C.shape or self.W.shape != self.C.shape:
            raise ValueError("cost matrices have inconsistent shapes")
        for name in ("C", "D", "A"):
            mat = getattr(self, name)
            real = mat[mat != INFEASIBLE]
            if np.any(real < 0) or np.any(real >= COST_CEILING):
                raise ValueError(f"{name} has entries outside [0, {COST_CEILING:g})")

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    @property
    def q(self) -> int:
        return self.D.shape[1]

    @property
    def ride_feasible(self) -> np.ndarray:
        return self.C != INFEASIBLE

    @property
    def charge_feasible(self) -> np.ndarray:
        return self.D != INFEASIBLE


@dataclass
class PvProfile:
    """Per-facility PV power in kW, one sample per simulated minute."""

    power: dict
    weather: str = "sunny"

    def __post_init__(self):
        for s, series in self.power.items():
            arr = np.asarray(series, dtype=float)
            if np.any(arr < 0):
                raise ValueError(f"negative PV power at facility {s}")
            self.power[s] = arr

    def at(self, facility: int, minute: int) -> float:
        series = self.power.get(facility)
        if series is None or minute >= len(series):
            return 0.0
        return float(series[minute])

    @property
    def facilities(self) -> list:
        return sorted(self.power)


@dataclass
class ScenarioConfig:
    scenario: str = "case1"
    weather: str = "sunny"
    fleet_size: int = 100
    n_requests: int = 2462
    battery_capacity: float = 50.0
    drive_drain: float = 0.1          # kWh per driving minute
    charge_gain: float = 0.2          # kWh per charging minute (fast option: 1.15)
    p_ch: float = 12.0                # kW per charging EV
    assignment_period: int = 1
    ride_hop_limit: int = 2
    charge_hop_limit: int = 1
    soc_charge_eligibility: float = 2.0 / 3.0
    soc_low_threshold: float = 0.10
    soc_high_threshold: float = 0.60
    reserve_to_facility: bool = True
    hop_cost: float = 1.0             # currency per hop
    h_max: float = 5.0
    alpha: float = 0.5
    beta: float = 0.5
    r_min: float | None = None        # None -> -h_max
    r_max: float | None = None        # None -> +h_max
    l_min: float = 0.0
    l_max: float | None = None        # None -> 2 * c_rer * p_ch
    b_min: float = 0.0
    b_max: float | None = None        # None -> c_rer * peak PV of the facility
    c_rer: float = 0.1
    c_rer_schedule: tuple | None = None   # optional (start_minute, price) steps
    willingness: float = 1.0
    max_wait_minutes: int = 10
    detour_delay_per_passenger: int = 4
    sim_minutes: int = 1080
    start_hour: int = 6
    initial_soc: str = "random"       # "random" in [10%, 100%] or "full"
    pv_scale: float = 1.0
    stations: tuple = ((3, 2), (5, 3), (8, 2), (9, 3))
    station_peak_kw: float = 25.0
    max_iters: int = 20
    merit_eps: float = 1e-6
    rng_seed: int = 0

    def __post_init__(self):
        if isinstance(self.scenario, Scenario):
            self.scenario = self.scenario.value
        Scenario(self.scenario)
        if self.weather not in WEATHERS:
            raise ValueError(f"unknown weather {self.weather!r}")
        if not 0.0 <= self.willingness <= 1.0:
            raise ValueError("willingness must lie in [0, 1]")
        if self.hop_cost < 0:
            raise ValueError("hop_cost must be non-negative")
        if self.initial_soc not in ("random", "full"):
            raise ValueError("initial_soc must be 'random' or 'full'")
        self.stations = tuple(tuple(int(v) for v in pair) for pair in self.stations)
        if self.ride_bounds[0] > self.ride_bounds[1]:
            raise ValueError("r_min > r_max")
        if self.l_min > self.charge_entry_bounds[1]:
            raise ValueError("l_min > l_max")

    @property
    def ride_bounds(self) -> tuple[float, float]:
        lo = -self.h_max if self.r_min is None else self.r_min
        hi = self.h_max if self.r_max is None else self.r_max
        return lo, hi

    @property
    def charge_entry_bounds(self) -> tuple[float, float]:
        hi = 2.0 * self.c_rer * self.p_ch if self.l_max is None else self.l_max
        return self.l_min, hi

    def facility_sum_bounds(self, facility: int) -> tuple[float, float]:
        if self.b_max is not None:
            return self.b_min, self.b_max
        stations = dict(self.stations).get(facility, 0)
        peak = stations * self.station_peak_kw * self.pv_scale
        return self.b_min, self.c_rer * peak

    def price(self, minute: int) -> float:
        """Renewable energy price c_RER at a simulated minute."""
        if not self.c_rer_schedule:
            return self.c_rer
        value = self.c_rer
        for start, price in self.c_rer_schedule:
            if minute >= start:
                value = price
        return value

    @property
    def scenario_enum(self) -> Scenario:
        return Scenario(self.scenario)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stations"] = [list(p) for p in self.stations]
        if self.c_rer_schedule is not None:
            d["c_rer_schedule"] = [list(p) for p in self.c_rer_schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "stations" in d:
            d["stations"] = tuple(tuple(p) for p in d["stations"])
        if d.get("c_rer_schedule") is not None:
            d["c_rer_schedule"] = tuple(tuple(p) for p in d["c_rer_schedule"])
        return cls(**d)


def desk_scale(**overrides) -> ScenarioConfig:
    """20 EVs and ~500 requests.

    PV is scaled so each facility issues one charge request at its peak, which
    keeps the ratio of peak charge requests to EVs of the 100-EV setting
    (20 per 100). A plain fleet ratio of 0.2 would leave the two-station
    facilities below one charger's draw all day.
    """
    base = dict(fleet_size=20, n_requests=500, pv_scale=0.25)
    base.update(overrides)
    return ScenarioConfig(**base)


def soc_band(ev: Ev, cfg: ScenarioConfig) -> SocBand:
    frac = ev.soc / ev.battery_capacity
    if frac < cfg.soc_low_threshold:
        return SocBand.LOW
    if frac > cfg.soc_high_threshold:
        return SocBand.HIGH
    return SocBand.MID


@dataclass
class Metrics:
    scenario: str
    weather: str
    willingness: float
    seed: int
    received_rides: int = 0
    missed_rides: int = 0
    completed_rides: int = 0
    open_rides: int = 0
    pv_available_kwh: float = 0.0
    pv_used_kwh: float = 0.0
    pl_defined: bool = True
    charged_kwh: float = 0.0
    charged_kwh_pv_minutes: float = 0.0
    charging_minutes: int = 0
    driving_minutes: int = 0
    initial_soc_kwh: float = 0.0
    final_soc_kwh: float = 0.0
    final_soc_bands: dict = field(default_factory=dict)
    epochs: int = 0
    epochs_converged: int = 0
    pooled_rides: int = 0

    @property
    def qos(self) -> float:
        if self.received_rides == 0:
            return 1.0
        return 1.0 - self.missed_rides / self.received_rides

    @property
    def pl(self) -> float:
        """Share of available PV energy not used; 0 when undefined."""
        if not self.pl_defined or self.pv_available_kwh <= 0:
            return 0.0
        return 1.0 - self.pv_used_kwh / self.pv_available_kwh

    @property
    def pl_valid(self) -> bool:
        return self.pl_defined and self.pv_available_kwh > 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["qos"] = self.qos
        d["pl"] = self.pl if self.pl_valid else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# --------------------------------------------------------------------------
# JSON snapshots
# --------------------------------------------------------------------------

def _encode(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any, **kw) -> str:
    return json.dumps(obj, default=_encode, **kw)


@dataclass
class EpochProblem:
    """Matrix-level data of one assignment epoch.

    ``charge_facility[j]`` is the facility node of charge column j;
    ``loss_target`` and ``sum_bounds`` are keyed by facility node.
    """

    costs: CostMatrices
    charge_facility: np.ndarray
    loss_target: dict
    ride_bounds: tuple
    charge_bounds: tuple
    sum_bounds: dict
    minute: int = 0

    @property
    def m(self) -> int:
        return self.costs.m

    @property
    def p(self) -> int:
        return self.costs.p

    @property
    def q(self) -> int:
        return self.costs.q

    @property
    def h(self) -> int:
        return max(self.m, self.p + self.q)

    @property
    def facilities(self) -> list:
        return sorted(self.sum_bounds)

    def to_dict(self) -> dict:
        c = self.costs
        return {
            "minute": self.minute,
            "m": self.m, "p": self.p, "q": self.q,
            "C": c.C.tolist(), "D": c.D.tolist(), "A": c.A.tolist(), "W": c.W.tolist(),
            "charge_facility": [int(s) for s in self.charge_facility],
            "loss_target": {str(s): float(v) for s, v in self.loss_target.items()},
            "ride_bounds": list(self.ride_bounds),
            "charge_bounds": list(self.charge_bounds),
            "sum_bounds": {str(s): list(v) for s, v in self.sum_bounds.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpochProblem":
        m, p, q = int(d["m"]), int(d["p"]), int(d["q"])

        def mat(key, cols):
            return np.asarray(d[key], dtype=float).reshape(m, cols)

        costs = CostMatrices(C=mat("C", p), D=mat("D", q), A=mat("A", p), W=mat("W", p))
        return cls(
            costs=costs,
            charge_facility=np.asarray(d["charge_facility"], dtype=np.int64).reshape(q),
            loss_target={int(s): float(v) for s, v in d["loss_target"].items()},
            ride_bounds=tuple(d["ride_bounds"]),
            charge_bounds=tuple(d["charge_bounds"]),
            sum_bounds={int(s): tuple(v) for s, v in d["sum_bounds"].items()},
            minute=int(d.get("minute", 0)),
        )
