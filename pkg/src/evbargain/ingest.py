"""Loaders for trip records, PV profiles, graphs and configuration files.

Every loader raises :class:`DataError` on unusable input; malformed rows of a
trip-record file are skipped with a warning instead.
"""

from __future__ import annotations

import ast
import csv
import dataclasses
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (WEATHERS, CityGraph, GraphError, PvProfile, RideRequest, ScenarioConfig)

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Input data could not be loaded."""


# TLC taxi zone -> region node. Lower-Manhattan zones partitioned into nine
# regions, numbered row by row from the north-west corner.
DEFAULT_REGION_MAP = {
    1: (246, 68, 186, 100, 50, 48),
    2: (164, 90, 234, 161, 230, 163),
    3: (170, 137, 107, 224, 233, 162),
    4: (158, 249, 113),
    5: (114, 79, 144),
    6: (4, 148, 232),
    7: (231, 125, 13, 261),
    8: (211, 45, 87),
    9: (88, 209, 12),
}

TLC_DATE = dt.date(2022, 3, 1)
PICKUP_COLUMNS = ("tpep_pickup_datetime", "lpep_pickup_datetime", "pickup_datetime")


def default_region_map() -> dict[int, int]:
    return {zone: node for node, zones in DEFAULT_REGION_MAP.items() for zone in zones}


def load_region_map(path) -> dict[int, int]:
    """CSV with columns zone_id,node."""
    out = {}
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out[int(row["zone_id"])] = int(row["node"])
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read region map {path}: {exc}") from exc
    if not out:
        raise DataError(f"region map {path} is empty")
    return out


# --------------------------------------------------------------------------
# Trip records
# --------------------------------------------------------------------------

@dataclass
class TlcReport:
    rows: int = 0
    malformed: int = 0
    outside_window: int = 0
    unknown_zone: int = 0
    in_window: int = 0
    sampled: int = 0
    per_minute: dict = field(default_factory=dict)


def _parse_timestamp(text: str) -> dt.datetime:
    text = text.strip()
    for fmt in ("%Y-%m-%d %H:%M:%S", "%m/%d/%Y %I:%M:%S %p", "%Y-%m-%dT%H:%M:%S"):
        try:
            return dt.datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"unrecognised timestamp {text!r}")


def scan_tlc(path, region_map: dict | None = None, date: dt.date = TLC_DATE,
             start_hour: int = 6, end_hour: int = 24) -> tuple[list[tuple[int, int, int]], TlcReport]:
    """(minute, origin node, destination node) for every in-window, in-map row.

    Minutes count from ``start_hour`` on ``date``.
    """
    region_map = default_region_map() if region_map is None else region_map
    report = TlcReport()
    trips = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open trip file {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        ts_col = next((c for c in PICKUP_COLUMNS if c in cols), None)
        if ts_col is None or "PULocationID" not in cols or "DOLocationID" not in cols:
            raise DataError(f"{path}: missing pickup timestamp or zone columns")
        for lineno, row in enumerate(reader, start=2):
            report.rows += 1
            try:
                when = _parse_timestamp(row[ts_col])
                pu, do = int(row["PULocationID"]), int(row["DOLocationID"])
            except (ValueError, TypeError, KeyError) as exc:
                report.malformed += 1
                log.warning("%s:%d skipped: %s", path, lineno, exc)
                continue
            if when.date() != date or not start_hour <= when.hour < end_hour:
                report.outside_window += 1
                continue
            report.in_window += 1
            if pu not in region_map or do not in region_map:
                report.unknown_zone += 1
                continue
            minute = (when.hour - start_hour) * 60 + when.minute
            trips.append((minute, region_map[pu], region_map[do]))
    if report.unknown_zone:
        log.info("%s: %d in-window rows dropped for zones outside the map", path, report.unknown_zone)
    return trips, report


def load_tlc(path, region_map: dict | None = None, sample_size: int | None = 2462,
             seed: int = 0, date: dt.date = TLC_DATE, report: TlcReport | None = None) -> list[RideRequest]:
    """Ride requests sampled uniformly without replacement and ordered by minute."""
    trips, rep = scan_tlc(path, region_map, date)
    if not trips:
        raise DataError(f"{path}: no trips inside the time window and region map")
    idx = np.arange(len(trips))
    if sample_size is not None and sample_size < len(trips):
        idx = np.sort(np.random.default_rng(seed).choice(len(trips), size=sample_size, replace=False))
    chosen = sorted((trips[k] + (int(k),) for k in idx))
    requests = [RideRequest(id=n, submit_minute=t, origin=o, destination=d)
                for n, (t, o, d, _) in enumerate(chosen)]
    rep.sampled = len(requests)
    rep.per_minute = dict(zip(*np.unique([r.submit_minute for r in requests], return_counts=True)))
    if report is not None:
        for f in dataclasses.fields(TlcReport):
            setattr(report, f.name, getattr(rep, f.name))
    return requests


# Relative trip intensity per hour from 6:00 to 23:00 (weekday taxi shape).
HOURLY_DEMAND = (0.35, 0.7, 0.95, 0.85, 0.75, 0.8, 0.85, 0.85, 0.85,
                 0.9, 0.95, 1.0, 1.0, 0.95, 0.85, 0.75, 0.65, 0.5)


def synthetic_requests(n: int, graph: CityGraph, seed=0, minutes: int = 1080,
                       decay: float = 0.8) -> list[RideRequest]:
    """Demand with a weekday hourly profile and distance-decaying destinations.

    Origins are uniform over nodes; a destination d is drawn with weight
    exp(-decay * hops(origin, d)), so short trips dominate and same-region
    trips occur.
    """
    rng = np.random.default_rng(seed)
    hours = np.repeat(np.asarray(HOURLY_DEMAND), 60)[:minutes]
    times = np.sort(rng.choice(minutes, size=n, p=hours / hours.sum()))
    weights = np.exp(-decay * graph.hop_distance)
    weights /= weights.sum(axis=1, keepdims=True)
    out = []
    for k, t in enumerate(times):
        o = int(rng.integers(graph.node_count))
        d = int(rng.choice(graph.node_count, p=weights[o]))
        out.append(RideRequest(id=k, submit_minute=int(t), origin=o + 1, destination=d + 1))
    return out


# --------------------------------------------------------------------------
# PV
# --------------------------------------------------------------------------

SUNRISE_MIN, SUNSET_MIN = 60, 720      # 7:00 and 18:00 with the day starting at 6:00
CLOUD_DEPTH = 0.7


def pv_shape(weather: str, minutes: int = 1080) -> np.ndarray:
    """Unit-peak PV curve for one day, 0 outside daylight."""
    if weather not in WEATHERS:
        raise DataError(f"unknown weather {weather!r}; choose from {', '.join(WEATHERS)}")
    t = np.arange(minutes, dtype=float)
    span = SUNSET_MIN - SUNRISE_MIN
    day = (t >= SUNRISE_MIN) & (t <= SUNSET_MIN)
    shape = np.where(day, np.sin(np.pi * (t - SUNRISE_MIN) / span) ** 2, 0.0)
    if weather == "sunny":
        return shape
    lo, hi = (120, 420) if weather == "cloudy_morning" else (420, 720)
    dip = np.where((t >= lo) & (t <= hi), np.sin(np.pi * (t - lo) / (hi - lo)) ** 2, 0.0)
    return shape * (1.0 - CLOUD_DEPTH * dip)


def builtin_pv(cfg: ScenarioConfig, weather: str | None = None) -> PvProfile:
    weather = cfg.weather if weather is None else weather
    shape = pv_shape(weather, cfg.sim_minutes)
    power = {s: shape * n * cfg.station_peak_kw * cfg.pv_scale for s, n in cfg.stations}
    return PvProfile(power=power, weather=weather)


def load_pv(source, cfg: ScenarioConfig | None = None) -> PvProfile:
    """Builtin weather label or CSV with columns minute,facility,kw."""
    cfg = ScenarioConfig() if cfg is None else cfg
    if str(source) in WEATHERS:
        return builtin_pv(cfg, str(source))
    series: dict[int, np.ndarray] = {}
    try:
        with open(source, newline="") as fh:
            for row in csv.DictReader(fh):
                minute, s, kw = int(row["minute"]), int(row["facility"]), float(row["kw"])
                if kw < 0:
                    raise DataError(f"{source}: negative PV power {kw} at minute {minute}")
                if not 0 <= minute < cfg.sim_minutes:
                    continue
                series.setdefault(s, np.zeros(cfg.sim_minutes))[minute] = kw
    except OSError as exc:
        raise DataError(f"cannot read PV file {source}: {exc}") from exc
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{source}: malformed PV row ({exc})") from exc
    if not series:
        raise DataError(f"PV file {source} has no rows")
    return PvProfile(power=series, weather=Path(source).stem)


# --------------------------------------------------------------------------
# Graph and configuration files
# --------------------------------------------------------------------------

def load_graph(path, minutes_per_hop: int = 10) -> CityGraph:
    """Edge list ``u v`` per line plus a ``facilities: a b c`` line; '#' starts a comment."""
    edges, facilities, nodes = [], None, None
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read graph file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.lower().startswith("facilities:"):
                facilities = [int(v) for v in line.split(":", 1)[1].replace(",", " ").split()]
            elif line.lower().startswith("nodes:"):
                nodes = int(line.split(":", 1)[1])
            else:
                u, v = line.split()
                edges.append((int(u), int(v)))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: cannot parse {raw!r}") from exc
    if facilities is None:
        raise DataError(f"{path}: missing 'facilities:' line")
    if not edges:
        raise DataError(f"{path}: no edges")
    if nodes is None:
        nodes = max(max(e) for e in edges)
    try:
        return CityGraph.from_edges(nodes, edges, facilities, minutes_per_hop)
    except GraphError as exc:
        raise DataError(f"{path}: {exc}") from exc


def parse_value(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip("'\"")


def read_config_values(path) -> dict:
    """Raw ``key = value`` settings naming :class:`ScenarioConfig` fields."""
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in names:
            raise DataError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = parse_value(value)
    return values


def make_config(values: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid configuration: {exc}") from exc


def load_config(path, **overrides) -> ScenarioConfig:
    """Config file settings, then non-None ``overrides`` on top."""
    values = read_config_values(path)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return make_config(values)
