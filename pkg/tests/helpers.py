"""Random instance generators shared by the test modules."""

import numpy as np

from evbargain.incentive import FacilitySubproblem
from evbargain.model import INFEASIBLE, CostMatrices, EpochProblem

FACILITIES = (3, 5, 8, 9)


def random_epoch(rng, m=10, p=5, q=3, alpha=0.5, h_max=5.0, inactive=True,
                 p_infeasible=0.25, l_bounds=(0.0, 2.4)):
    """Epoch with hop-like integer costs and bids; sum boxes inactive by default."""
    a = rng.integers(0, 5, size=(m, p)).astype(float)
    C = a.copy()
    C[rng.random((m, p)) < p_infeasible] = INFEASIBLE
    D = rng.integers(0, 2, size=(m, q)).astype(float)
    D[rng.random((m, q)) < p_infeasible] = INFEASIBLE
    bids = rng.uniform(0, h_max, size=p)
    W = bids[None, :] - alpha * a
    fac = rng.choice(FACILITIES, size=q)
    loss = {s: float(rng.uniform(-2.0, 8.0)) for s in FACILITIES}
    if inactive:
        sums = {s: (-1e3, 1e3) for s in FACILITIES}
    else:
        sums = {s: (0.0, float(rng.uniform(0.5, 3.0))) for s in FACILITIES}
    return EpochProblem(
        costs=CostMatrices(C=C, D=D, A=a, W=W),
        charge_facility=np.asarray(fac, dtype=np.int64),
        loss_target=loss,
        ride_bounds=(-h_max, h_max),
        charge_bounds=l_bounds,
        sum_bounds=sums,
    )


def projected_gradient(grad, project, y0, step=0.1, iters=10_000):
    y = project(np.asarray(y0, dtype=float))
    for _ in range(iters):
        y_new = project(y - step * grad(y))
        if np.max(np.abs(y_new - y)) < 1e-15:
            break
        y = y_new
    return y


def project_box_slab(v, lo, hi, s_lo, s_hi, sweeps=5000):
    """Dykstra between the entry box and the sum slab."""
    x = np.asarray(v, dtype=float).copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    n = x.size
    for _ in range(sweeps):
        y = np.clip(x + p, lo, hi)
        p = x + p - y
        z = y + q
        total = z.sum()
        shift = (total - np.clip(total, s_lo, s_hi)) / n
        x_new = z - shift
        q = z - x_new
        if np.max(np.abs(x_new - x)) < 1e-14:
            x = x_new
            break
        x = x_new
    return np.clip(x, lo, hi)


def random_sub(rng, facility=3):
    n = int(rng.integers(1, 5))
    l_lo = float(rng.uniform(-1, 1))
    l_hi = l_lo + float(rng.uniform(0.1, 3))
    lo, hi = n * l_lo, n * l_hi
    b_lo = float(rng.uniform(lo - 1, hi))
    b_hi = float(rng.uniform(max(b_lo, lo), hi + 1))
    L = float(rng.uniform(-5, 15))
    return FacilitySubproblem(facility, [(i, 0) for i in range(n)], L, l_lo, l_hi, b_lo, b_hi)
