"""Independent oracles shared by the unit and acceptance tests."""

import itertools
import math

import numpy as np

from ecoacc.planner import PlannerConfig
from ecoacc.signals import Corridor, DelayDistribution, Intersection, feasible_crossing
from ecoacc.vehicle import traction_accel


def tiny_instance(rng, vehicle):
    """Random N<=5 route, 3 velocity nodes, 5 torques, one light, snap-to-node grid."""
    N = int(rng.integers(2, 6))
    ds = float(rng.choice([5.0, 10.0]))
    v_lo = float(rng.uniform(2.0, 5.0))
    v_hi = v_lo + float(rng.uniform(2.0, 6.0))
    p = vehicle.with_(v_min_plan=v_lo, v_max=v_hi)
    torques = tuple(sorted(rng.choice(np.arange(-1500.0, 1501.0, 100.0), 5, replace=False)))
    cycle = float(rng.uniform(10.0, 20.0))
    green = float(rng.uniform(0.4, 0.6)) * cycle
    yellow = 3.0
    pos = float(rng.uniform(0.5, N - 0.5)) * ds
    delay = DelayDistribution((0.0, 0.5, 1.0), (0.6, 0.3, 0.1))
    inter = Intersection(pos, cycle, cycle - green - yellow, green, yellow,
                         offset=float(rng.uniform(0.0, cycle)), delay=delay)
    route = Corridor(N * ds, (inter,))
    t_f = float(rng.uniform(1.5, 3.5)) * N * ds / v_hi
    cfg = PlannerConfig(ds=ds, N=N, lam=float(rng.choice([0.0, 1e-4, 1e-3])), eta=0.2,
                        t_f=t_f, n_v=3, n_t=int(rng.integers(8, 30)), torque_grid=torques,
                        interpolation="nearest")
    i_start = int(rng.integers(0, 3))
    return p, route, cfg, i_start


def enumerate_tiny(p, route, cfg, i_start):
    """Exhaustive search over every torque sequence on the snapped grid."""
    v_nodes = np.linspace(p.v_min_plan, p.v_max, cfg.n_v)
    dt = cfg.t_f / (cfg.n_t - 1)
    h = v_nodes[1] - v_nodes[0]
    inter = route.intersections[0]
    k_bar = math.ceil(inter.position / cfg.ds - 1e-9) - 1
    frac = (inter.position - k_bar * cfg.ds) / cfg.ds
    lam = cfg.lam * cfg.lambda_scale
    best = math.inf
    for seq in itertools.product(cfg.torque_grid, repeat=cfg.N):
        i, j, ok = i_start, 0, True
        stages = []
        for k, u in enumerate(seq):
            v = v_nodes[i]
            a = traction_accel(p, v, u)
            if not (p.a_min - 1e-9 <= a <= p.a_max + 1e-9):
                ok = False
                break
            vn = v + a * cfg.ds / v
            if not (p.v_min_plan - 1e-9 <= vn <= p.v_max + 1e-9):
                ok = False
                break
            if k == k_bar and not feasible_crossing(inter, j * dt + frac * cfg.ds / vn, cfg.eta):
                ok = False
                break
            stages.append((u * u + lam * (1.0 / v) ** 2) * cfg.ds * cfg.ds)
            i = int(np.rint(np.clip((vn - v_nodes[0]) / h, 0, cfg.n_v - 1)))
            j += int(np.rint(cfg.ds / vn / dt))
            if j > cfg.n_t - 1:
                ok = False
                break
        if ok:
            # Accumulate from the end of the route, as a backward recursion does.
            cost = (0.0 + lam * (1.0 / v_nodes[i]) ** 2) * cfg.ds * cfg.ds
            for c in reversed(stages):
                cost = c + cost
            best = min(best, cost)
    return best
