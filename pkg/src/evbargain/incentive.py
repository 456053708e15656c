"""Best-response incentive updates for the EVs and the power utility."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PvProfile, ScenarioConfig


class InfeasibleIncentiveBounds(ValueError):
    def __init__(self, facility, lo, hi):
        super().__init__(f"facility {facility}: empty incentive interval [{lo:g}, {hi:g}]")
        self.facility = facility


@dataclass
class FacilitySubproblem:
    facility: int
    assigned_pairs: list = field(default_factory=list)
    loss_target: float = 0.0
    l_min: float = 0.0
    l_max: float = 0.0
    b_min: float = 0.0
    b_max: float = 0.0

    def __post_init__(self):
        if self.l_min > self.l_max:
            raise ValueError(f"facility {self.facility}: l_min > l_max")
        if self.b_min > self.b_max:
            raise ValueError(f"facility {self.facility}: b_min > b_max")

    def sum_interval(self) -> tuple[float, float]:
        n = len(self.assigned_pairs)
        return max(self.b_min, n * self.l_min), min(self.b_max, n * self.l_max)

    def objective(self, values) -> float:
        return (self.loss_target - float(np.sum(values))) ** 2


def ev_best_bids(w_row, feasible_row, r_min: float, r_max: float, x_row=None) -> np.ndarray:
    """One EV's ride incentives: argmin sum (y - w)^2 over [r_min, r_max].

    The objective is separable, so the minimiser is w clamped to the box.
    Infeasible pairs get 0. ``x_row`` is accepted for interface symmetry; the
    quadratic cost used here does not depend on the ride assignment.
    """
    if r_min > r_max:
        raise ValueError(f"r_min={r_min} exceeds r_max={r_max}")
    w = np.asarray(w_row, dtype=float)
    return np.where(np.asarray(feasible_row, bool), np.clip(w, r_min, r_max), 0.0)


def ev_objective(y_row, w_row, feasible_row) -> float:
    mask = np.asarray(feasible_row, bool)
    d = np.asarray(y_row, float)[mask] - np.asarray(w_row, float)[mask]
    return float(d @ d)


def utility_incentives(subs: list[FacilitySubproblem]) -> dict:
    """Per-facility minimiser of (L_s - sum y)^2 under entry and sum boxes.

    The optimal total is L_s clamped to the feasible sum interval; it is split
    evenly, which is the minimum-norm minimiser. Returns {(i, j): y_ij} for
    the assigned pairs only; every other charge entry is 0.
    """
    out = {}
    for sub in subs:
        n = len(sub.assigned_pairs)
        if n == 0:
            continue
        lo, hi = sub.sum_interval()
        if lo > hi + 1e-12:
            raise InfeasibleIncentiveBounds(sub.facility, lo, hi)
        total = min(max(sub.loss_target, lo), hi)
        share = _even_share(total, n, sub)
        for pair in sub.assigned_pairs:
            out[pair] = share
    return out


def _even_share(total: float, n: int, sub: FacilitySubproblem) -> float:
    """total / n, nudged by a few ulps so the rounded entries and sum stay in their boxes."""
    v = min(max(total / n, sub.l_min), sub.l_max)
    for _ in range(8):
        s = float(np.sum(np.full(n, v)))
        if s > sub.b_max and v > sub.l_min:
            v = max(np.nextafter(v, -np.inf), sub.l_min)
        elif s < sub.b_min and v < sub.l_max:
            v = min(np.nextafter(v, np.inf), sub.l_max)
        else:
            break
    return float(v)


def compute_loss_target(facility: int, minute: int, pv: PvProfile, charging_count: int,
                        cfg: ScenarioConfig) -> float:
    """Economic value of unused PV at a facility: c_RER * (P_ref - v_ch * p_ch)."""
    return cfg.price(minute) * (pv.at(facility, minute) - charging_count * cfg.p_ch)


def puc_objective(subs: list[FacilitySubproblem], y: dict) -> float:
    total = 0.0
    for sub in subs:
        total += sub.objective([y.get(pair, 0.0) for pair in sub.assigned_pairs])
    return total
