"""Command-line front end: ``run``, ``sweep`` and ``certify``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation or
failed certificate.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import ingest
from .equilibrium import certify, ProjectionBudgetExceeded
from .incentive import InfeasibleIncentiveBounds
from .model import WEATHERS, WILLINGNESS_LEVELS, EpochProblem, ScenarioConfig, dumps
from .sim import SimulationInvariantError, aggregate, run_scenario

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

DESK = {"fleet_size": 20, "n_requests": 500, "pv_scale": 0.25}

log = logging.getLogger("evbargain")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def fmt_pct(mean, sd=None) -> str:
    if mean is None:
        return "n/a"
    text = f"{100 * mean:.1f}%"
    if sd is not None:
        text += f" ± {100 * sd:.1f}"
    return text


def summary_line(cfg: ScenarioConfig, summary: dict) -> str:
    sd = summary["runs"] > 1
    return (f"{cfg.scenario:<18} {cfg.weather:<16} w={cfg.willingness:.2f}  "
            f"QoS {fmt_pct(summary['qos_mean'], summary['qos_sd'] if sd else None)}  "
            f"PL {fmt_pct(summary['pl_mean'], summary['pl_sd'] if sd else None)}  "
            f"(runs={summary['runs']})")


# --------------------------------------------------------------------------
# Configuration and inputs
# --------------------------------------------------------------------------

def parse_seeds(args) -> list[int]:
    base = args.seed if args.seed is not None else 0
    if args.seeds is None:
        return [base]
    text = str(args.seeds)
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        n = int(text)
    except ValueError as exc:
        raise UsageError(f"--seeds expects a count or a comma list, got {text!r}") from exc
    if n < 1:
        raise UsageError("--seeds must be at least 1")
    return list(range(base, base + n))


def build_config(args, **fixed) -> ScenarioConfig:
    values = dict(DESK) if getattr(args, "desk", False) else {}
    if getattr(args, "config", None):
        values.update(ingest.read_config_values(args.config))
    flags = {"scenario": getattr(args, "scenario", None),
             "weather": getattr(args, "weather", None),
             "willingness": getattr(args, "willingness", None),
             "fleet_size": getattr(args, "fleet_size", None),
             "n_requests": getattr(args, "requests", None),
             "charge_gain": getattr(args, "charge_gain", None)}
    values.update({k: v for k, v in flags.items() if v is not None})
    values.update(fixed)
    return ingest.make_config(values)


class Inputs:
    """Graph, PV and request sources shared by all runs of one command."""

    def __init__(self, args):
        self.graph = ingest.load_graph(args.graph) if args.graph else None
        self.pv_path = args.pv
        self.tlc = args.tlc
        self.region_map = ingest.load_region_map(args.region_map) if args.region_map else None

    def pv(self, cfg: ScenarioConfig):
        return ingest.load_pv(self.pv_path or cfg.weather, cfg)

    def requests(self, cfg: ScenarioConfig, seed: int):
        if not self.tlc:
            return None
        return ingest.load_tlc(self.tlc, self.region_map, cfg.n_requests, seed)


def run_many(cfg: ScenarioConfig, seeds, inputs: Inputs, trace=False, dump_minute=None):
    results = []
    pv = inputs.pv(cfg)
    for s in seeds:
        results.append(run_scenario(cfg, inputs.requests(cfg, s), pv, inputs.graph, seed=s,
                                    record_trace=trace, dump_minute=dump_minute))
    return results


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = build_config(args)
    seeds = parse_seeds(args)
    inputs = Inputs(args)
    results = run_many(cfg, seeds, inputs, trace=args.trace, dump_minute=args.dump_epoch)
    out = Path(args.out_dir)
    metrics = [r.metrics for r in results]
    summary = aggregate(metrics)
    doc = {"config": cfg.to_dict(), "seeds": seeds, "summary": summary,
           "runs": [m.to_dict() for m in metrics]}
    write_atomic(out / "metrics.json", dumps(doc, indent=2))
    ts = [{"seed": r.metrics.seed, **row} for r in results for row in r.timeseries]
    write_atomic(out / "timeseries.csv", rows_to_csv(ts))
    if args.trace:
        tr = [{"seed": r.metrics.seed, **row} for r in results for row in r.trace]
        write_atomic(out / "bargain_trace.csv", rows_to_csv(tr))
    if args.dump_epoch is not None:
        for r in results:
            if r.snapshot is None:
                log.warning("seed %d: minute %d was never simulated", r.metrics.seed, args.dump_epoch)
                continue
            name = f"epoch_{args.dump_epoch}_seed{r.metrics.seed}.json"
            write_atomic(out / name, dumps(r.snapshot))
    print(summary_line(cfg, summary))
    return EXIT_OK


def sweep_cells(args) -> list[tuple[str, str, float]]:
    weathers = args.weathers.split(",") if args.weathers else list(WEATHERS)
    levels = ([float(v) for v in args.levels.split(",")] if args.levels
              else list(WILLINGNESS_LEVELS))
    if args.axis == "willingness":
        weathers = weathers[:1] if args.weathers else [args.weather or "sunny"]
    elif args.axis == "weather":
        levels = levels[:1] if args.levels else [1.0]
    cells = []
    for w in weathers:
        if w not in WEATHERS:
            raise UsageError(f"unknown weather {w!r}")
        if not args.no_case1:
            cells.append(("case1", w, 1.0))
        cells.extend(("case2", w, lv) for lv in levels)
    return cells


def cmd_sweep(args) -> int:
    seeds = parse_seeds(args)
    inputs = Inputs(args)
    rows = []
    for scenario, weather, level in sweep_cells(args):
        cfg = build_config(args, scenario=scenario, weather=weather, willingness=level)
        summary = aggregate([r.metrics for r in run_many(cfg, seeds, inputs)])
        rows.append({"scenario": scenario, "weather": weather,
                     "willingness": level if scenario == "case2" else "",
                     "runs": summary["runs"],
                     "qos_mean": summary["qos_mean"], "qos_sd": summary["qos_sd"],
                     "pl_mean": summary["pl_mean"], "pl_sd": summary["pl_sd"]})
        print(summary_line(cfg, summary))
    write_atomic(Path(args.out_dir) / "table1.csv", rows_to_csv(rows))
    return EXIT_OK


def load_snapshot(path) -> tuple[EpochProblem, np.ndarray, np.ndarray, float | None]:
    try:
        doc = json.loads(Path(path).read_text())
        prob = EpochProblem.from_dict(doc["problem"])
        X = np.asarray(doc["X"], dtype=float).reshape(prob.h, prob.h)
        Y = np.asarray(doc["Y"], dtype=float).reshape(prob.m, prob.p + prob.q)
    except OSError as exc:
        raise ingest.DataError(f"cannot read snapshot {path}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ingest.DataError(f"malformed snapshot {path}: {exc}") from exc
    return prob, X, Y, doc.get("merit_eps")


def cmd_certify(args) -> int:
    prob, X, Y, eps = load_snapshot(args.snapshot)
    eps = args.eps if args.eps is not None else (eps if eps is not None else 1e-6)
    u = certify(prob, X, Y)
    verdict = "PASS" if u <= eps else "FAIL"
    print(f"u = {u:.6e}  eps = {eps:.1e}  {verdict}")
    return EXIT_OK if verdict == "PASS" else EXIT_INVARIANT


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key = value scenario file")
    p.add_argument("--desk", action="store_true", help="20 EVs, 500 requests, scaled PV")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--seeds", help="number of seeds from --seed, or a comma list")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--graph", help="edge-list graph file")
    p.add_argument("--pv", help="PV CSV (minute,facility,kw) instead of the builtin profile")
    p.add_argument("--tlc", help="TLC trip-record CSV; synthetic demand when absent")
    p.add_argument("--region-map", help="zone_id,node CSV")
    p.add_argument("--fleet-size", type=int)
    p.add_argument("--requests", type=int, help="number of ride requests")
    p.add_argument("--charge-gain", type=float, help="kWh per charging minute")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evbargain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate one scenario")
    _add_common(run)
    run.add_argument("--scenario", choices=["fossil", "business_as_usual", "case1", "case2"])
    run.add_argument("--weather", choices=WEATHERS)
    run.add_argument("--willingness", type=float)
    run.add_argument("--dump-epoch", type=int, metavar="MINUTE",
                     help="write the epoch problem and outcome at this minute")
    run.add_argument("--trace", action="store_true", help="write bargain_trace.csv")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="QoS/PL table over weather and willingness")
    _add_common(sw)
    sw.add_argument("--axis", choices=["both", "willingness", "weather"], default="both")
    sw.add_argument("--weather", choices=WEATHERS, help="fixed weather for --axis willingness")
    sw.add_argument("--weathers", help="comma list of weather labels")
    sw.add_argument("--levels", help="comma list of willingness levels")
    sw.add_argument("--no-case1", action="store_true", help="omit the case-1 reference rows")
    sw.set_defaults(func=cmd_sweep)

    cert = sub.add_parser("certify", help="merit value of a dumped epoch")
    cert.add_argument("snapshot")
    cert.add_argument("--eps", type=float, help="pass threshold (default from snapshot or 1e-6)")
    cert.set_defaults(func=cmd_certify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"evbargain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ingest.DataError, InfeasibleIncentiveBounds) as exc:
        print(f"evbargain: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SimulationInvariantError, ProjectionBudgetExceeded) as exc:
        print(f"evbargain: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
