"""Hourly PV and charging power per facility for one desk-scale day.

    python3 scripts/charging_profile.py --scenario case1 --weather cloudy_morning
"""

import argparse

import numpy as np

from evbargain.model import desk_scale
from evbargain.sim import run_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="case1")
    ap.add_argument("--weather", default="sunny")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = desk_scale(scenario=args.scenario, weather=args.weather)
    res = run_scenario(cfg, seed=args.seed)
    facilities = [s for s, _ in cfg.stations]
    hours = len(res.timeseries) // 60
    print("hour  " + "  ".join(f"pv{s:<2} ch{s:<2}" for s in facilities) + "   (mean kW)")
    for h in range(hours):
        rows = res.timeseries[60 * h:60 * (h + 1)]
        parts = []
        for s in facilities:
            pv = np.mean([r[f"pv_kw_{s}"] for r in rows])
            ch = np.mean([r[f"charge_kw_{s}"] for r in rows])
            parts.append(f"{pv:4.1f} {ch:5.1f}")
        print(f"{cfg.start_hour + h:02d}:00 " + "  ".join(parts))


if __name__ == "__main__":
    main()
