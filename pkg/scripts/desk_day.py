"""Simulate one desk-scale day per scenario and print the headline metrics.

    python3 scripts/desk_day.py --seed 0 --weather sunny
"""

import argparse
import time

from evbargain.model import desk_scale
from evbargain.sim import run_scenario

SCENARIOS = ("fossil", "business_as_usual", "case1", "case2")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--weather", default="sunny")
    ap.add_argument("--willingness", type=float, default=1.0)
    args = ap.parse_args()

    print(f"{'scenario':<18} {'QoS':>7} {'PL':>7} {'missed':>7} {'charged kWh':>12} "
          f"{'in PV min':>10} {'pooled':>7} {'secs':>6}")
    for scenario in SCENARIOS:
        cfg = desk_scale(scenario=scenario, weather=args.weather, willingness=args.willingness)
        start = time.perf_counter()
        m = run_scenario(cfg, seed=args.seed).metrics
        secs = time.perf_counter() - start
        pl = f"{m.pl:.1%}" if m.pl_valid else "n/a"
        share = f"{m.charged_kwh_pv_minutes / m.charged_kwh:.1%}" if m.charged_kwh else "n/a"
        print(f"{scenario:<18} {m.qos:>7.1%} {pl:>7} {m.missed_rides:>7d} {m.charged_kwh:>12.1f} "
              f"{share:>10} {m.pooled_rides:>7d} {secs:>6.2f}")


if __name__ == "__main__":
    main()
