"""Weather x willingness table of mean QoS and PL at desk scale.

    python3 scripts/table1_sweep.py --seeds 3
"""

import argparse

from evbargain.model import WEATHERS, WILLINGNESS_LEVELS, desk_scale
from evbargain.sim import aggregate, run_seeds


def cell(summary: dict) -> str:
    return f"{summary['qos_mean']:6.1%} {summary['pl_mean']:6.1%}"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    seeds = range(args.seeds)

    head = ["case1"] + [f"case2 w={w:g}" for w in WILLINGNESS_LEVELS]
    print(f"{'weather':<17}" + "".join(f"{h:>15}" for h in head))
    print(f"{'':<17}" + "".join(f"{'QoS     PL':>15}" for _ in head))
    for weather in WEATHERS:
        cells = [aggregate(run_seeds(desk_scale(scenario="case1", weather=weather), seeds))]
        for w in WILLINGNESS_LEVELS:
            cfg = desk_scale(scenario="case2", weather=weather, willingness=w)
            cells.append(aggregate(run_seeds(cfg, seeds)))
        print(f"{weather:<17}" + "".join(f"{cell(c):>15}" for c in cells))


if __name__ == "__main__":
    main()
