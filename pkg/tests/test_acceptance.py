"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Criterion 8 needs the real taxi trip file; point EVBARGAIN_TLC at it to run.
"""

import itertools
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from helpers import project_box_slab, projected_gradient, random_epoch, random_sub
from evbargain.assign import pad_symmetric, solve_lap
from evbargain.bargain import bargain
from evbargain.equilibrium import (GamePoint, certify, game_gradient, incentive_cost,
                                   provider_cost)
from evbargain.incentive import ev_best_bids, ev_objective, utility_incentives
from evbargain.ingest import load_tlc
from evbargain.model import INFEASIBLE, ScenarioConfig, desk_scale
from evbargain.sim import aggregate, run_scenario, run_seeds

SEEDS = range(10)
LEVELS = (0.25, 0.5, 0.75, 1.0)
PERMS = {n: np.array(list(itertools.permutations(range(n)))) for n in range(1, 8)}

_cache: dict = {}


def desk_runs(**kw):
    """Desk-scale metrics over the ten seeds, memoised across criteria."""
    key = tuple(sorted(kw.items()))
    if key not in _cache:
        _cache[key] = run_seeds(desk_scale(**kw), SEEDS)
    return _cache[key]


# --------------------------------------------------------------------------

def test_criterion_1_lap_exactness(verdict):
    rng = np.random.default_rng(2024)
    failures, solve_time = 0, 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 8))
        p = int(rng.integers(0, 5))
        q = int(rng.integers(0, 8 - p))
        C = rng.integers(0, 5, size=(m, p)).astype(float)
        C[rng.random((m, p)) < 0.3] = INFEASIBLE
        D = rng.integers(0, 2, size=(m, q)).astype(float)
        D[rng.random((m, q)) < 0.3] = INFEASIBLE
        Y = rng.uniform(-5, 5, size=(m, p + q))
        inst = pad_symmetric(C, D, Y, m, p, q)
        start = time.perf_counter()
        X, obj = solve_lap(inst)
        solve_time += time.perf_counter() - start
        h = inst.h
        best = inst.net_cost[np.arange(h), PERMS[h]].sum(axis=1).min()
        integral = (np.all((X == 0) | (X == 1)) and np.all(X.sum(0) == 1)
                    and np.all(X.sum(1) == 1))
        if not integral or abs(obj - best) > 1e-9 * max(1.0, abs(best)):
            failures += 1
    verdict(1, failures == 0 and solve_time < 5.0,
            f"{failures} mismatches in 1000 instances (h <= 7), solver time {solve_time:.2f} s")


def test_criterion_2_incentive_best_responses(verdict):
    rng = np.random.default_rng(7)
    lo, hi = -5.0, 5.0
    worst, box_ok, t = 0.0, True, 0.0
    for _ in range(500):
        n = int(rng.integers(1, 6))
        w = rng.uniform(-8, 8, size=n)
        feas = rng.random(n) < 0.8
        start = time.perf_counter()
        y = ev_best_bids(w, feas, lo, hi)
        t += time.perf_counter() - start
        oracle = projected_gradient(lambda v: 2 * (v - w), lambda v: np.clip(v, lo, hi),
                                    rng.uniform(lo, hi, n))
        worst = max(worst, abs(ev_objective(y, w, feas) - ev_objective(oracle, w, feas)))
        box_ok &= bool(np.all((y[feas] >= lo) & (y[feas] <= hi)))
    for _ in range(500):
        s = random_sub(rng)
        n = len(s.assigned_pairs)
        start = time.perf_counter()
        sol = utility_incentives([s])
        t += time.perf_counter() - start
        y = np.array([sol[pr] for pr in s.assigned_pairs])
        oracle = projected_gradient(
            lambda v: -2 * (s.loss_target - v.sum()) * np.ones(n),
            lambda v: project_box_slab(v, s.l_min, s.l_max, s.b_min, s.b_max),
            rng.uniform(s.l_min, s.l_max, n))
        worst = max(worst, abs(s.objective(y) - s.objective(oracle)))
        box_ok &= bool(np.all((y >= s.l_min) & (y <= s.l_max))
                       and s.b_min <= y.sum() <= s.b_max)
    verdict(2, worst <= 1e-6 and box_ok and t < 10.0,
            f"max objective gap {worst:.2e}, boxes respected {box_ok}, closed forms {t:.3f} s")


def test_criterion_3_gradient_check(verdict):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        gp = GamePoint.from_problem(random_epoch(rng, m=4, p=2, q=3))
        X = np.zeros((gp.h, gp.h))
        for wgt in rng.dirichlet(np.ones(3)):
            X[np.arange(gp.h), rng.permutation(gp.h)] += wgt
        Y = rng.uniform(-3, 3, size=(gp.h, gp.h))
        Fx, Fy = gp.split(game_gradient(gp.stack(X, Y), gp))
        for fun, base, F in ((lambda v: provider_cost(gp, v.reshape(X.shape), Y), X, Fx),
                             (lambda v: incentive_cost(gp, X, v.reshape(Y.shape)), Y, Fy)):
            x = base.ravel()
            g = np.array([(fun(x + e) - fun(x - e)) / 2e-5 for e in np.eye(x.size) * 1e-5])
            worst = max(worst, np.linalg.norm(g - F.ravel()) / max(np.linalg.norm(F), 1.0))
    verdict(3, worst <= 1e-6, f"max relative error {worst:.2e} over 100 instances")


def test_criterion_4_fixed_point_and_merit(verdict):
    reached, worst = 0, 0.0
    for seed in range(200):
        prob = random_epoch(np.random.default_rng(seed), m=10, p=5, q=3)
        res = bargain(prob, max_iters=20)
        if res.trace.converged:
            reached += 1
            worst = max(worst, certify(prob, res.X, res.Y))
    verdict(4, reached >= 190 and worst <= 1e-6,
            f"{reached}/200 fixed points within 20 sweeps, max merit {worst:.2e}")


def test_criterion_5_energy_conservation(verdict):
    worst = 0.0
    for scenario in ("business_as_usual", "case1", "case2"):
        # per-minute bookkeeping is checked inside the run; recheck the day identity here
        m = run_scenario(desk_scale(scenario=scenario), seed=0).metrics
        gap = abs(m.final_soc_kwh - (m.initial_soc_kwh - 0.1 * m.driving_minutes + m.charged_kwh))
        worst = max(worst, gap)
    verdict(5, worst <= 1e-9, f"max day-level energy gap {worst:.2e} kWh (20 EVs, 500 requests)")


def pv_share(runs):
    return sum(m.charged_kwh_pv_minutes for m in runs) / sum(m.charged_kwh for m in runs)


def test_criterion_6_charging_tracks_pv(verdict):
    case1 = pv_share(desk_runs(scenario="case1"))
    bau = pv_share(desk_runs(scenario="business_as_usual"))
    full = pv_share(run_seeds(desk_scale(scenario="business_as_usual", initial_soc="full"), SEEDS))
    verdict(6, case1 >= 0.80 and bau < 0.50,
            f"share of charging energy in PV minutes: case1 {case1:.1%} (>= 80%), "
            f"BAU {bau:.1%} (< 50%); BAU from full batteries {full:.1%} for reference")


def test_criterion_7_sharing_monotonicity(verdict):
    case1 = aggregate(desk_runs(scenario="case1"))
    rows = [aggregate(desk_runs(scenario="case2", willingness=w)) for w in LEVELS]
    qos = [r["qos_mean"] for r in rows]
    pl = [r["pl_mean"] for r in rows]
    q_mono = all(b >= a for a, b in zip(qos, qos[1:]))
    p_mono = all(b >= a for a, b in zip(pl, pl[1:]))
    beats = qos[-1] >= case1["qos_mean"]
    detail = ("QoS " + " ".join(f"{q:.4f}" for q in qos) + f" ({'non-decreasing' if q_mono else 'not monotone'}), "
              "PL " + " ".join(f"{x:.4f}" for x in pl) + f" ({'non-decreasing' if p_mono else 'not monotone'}), "
              f"case1 QoS {case1['qos_mean']:.4f}")
    verdict(7, q_mono and p_mono and beats, detail)


def test_criterion_8_headline_trend(verdict):
    path = os.environ.get("EVBARGAIN_TLC")
    if not path or not os.path.exists(path):
        ACCEPTANCE_LINES.append("criterion 8: SKIP  set EVBARGAIN_TLC to the 2022-03-01 trip file")
        pytest.skip("real trip file not available")
    ok, parts = True, []
    for weather in ("sunny", "cloudy_morning", "cloudy_afternoon"):
        summ = {}
        for scenario in ("case1", "case2"):
            cfg = ScenarioConfig(scenario=scenario, weather=weather, willingness=1.0)
            ms = [run_scenario(cfg, load_tlc(path, sample_size=cfg.n_requests, seed=s), seed=s).metrics
                  for s in SEEDS]
            summ[scenario] = aggregate(ms)
        gain = summ["case2"]["qos_mean"] - summ["case1"]["qos_mean"]
        pl = summ["case1"]["pl_mean"]
        ok &= gain >= 0.03 and 0.15 <= pl <= 0.60
        parts.append(f"{weather}: QoS gain {100 * gain:.1f} pp, case1 PL {pl:.1%}")
    verdict(8, ok, "; ".join(parts))


def test_criterion_9_fast_charging(verdict):
    base = aggregate(desk_runs(scenario="case1"))
    fast = aggregate(desk_runs(scenario="case1", charge_gain=1.15))
    fewer = fast["charging_minutes_mean"] < base["charging_minutes_mean"]
    qos_ok = fast["qos_mean"] >= base["qos_mean"]
    verdict(9, fewer and qos_ok,
            f"charging minutes {base['charging_minutes_mean']:.1f} -> {fast['charging_minutes_mean']:.1f}, "
            f"QoS {base['qos_mean']:.4f} -> {fast['qos_mean']:.4f}")
