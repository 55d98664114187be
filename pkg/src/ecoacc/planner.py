"""Eco-driving planner: backward DP over (position, velocity, time).

The state grid is ``n_v`` velocity nodes over ``[v_min_plan, v_max]`` and
uniform time nodes over ``[0, t_f]``. Values between nodes are bilinear in
(v, t); a neighbour with infinite value makes the interpolated value infinite
unless its weight is exactly zero. Transitions whose spatial cell contains a
stop bar are admitted only when the linearly interpolated arrival time passes
the chance-constrained crossing test.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import NoFeasiblePlanError, StepInfeasibleError
from .signals import Corridor, delay_quantile
from .vehicle import PlanState, VehicleParams, step_space, traction_accel

_EPS = 1e-9

DEFAULT_TORQUES = (
    -2500.0, -1600.0, -1000.0, -600.0, -350.0, -200.0, -100.0, -50.0, 0.0, 25.0, 50.0,
    75.0, 100.0, 150.0, 200.0, 300.0, 450.0, 650.0, 900.0, 1200.0, 1500.0,
)


@dataclass(frozen=True)
class PlannerConfig:
    ds: float = 10.0
    N: int = 260
    lam: float = 100.0
    eta: float = 0.9
    t_f: float = 400.0
    n_v: int = 31
    n_t: int | None = None
    torque_grid: tuple[float, ...] = DEFAULT_TORQUES
    lambda_scale: float = 3.0e5
    interpolation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "torque_grid", tuple(float(u) for u in self.torque_grid))
        if self.n_t is None:
            object.__setattr__(self, "n_t", int(round(self.t_f)) + 1)
        if self.ds <= 0 or self.N < 1:
            raise ValueError("need ds > 0 and N >= 1")
        if self.lam < 0 or self.lambda_scale < 0:
            raise ValueError("lambda must be nonnegative")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.t_f <= 0:
            raise ValueError("t_f must be positive")
        if self.n_v < 1 or self.n_t < 2 or not self.torque_grid:
            raise ValueError("grids must be nonempty")
        if self.interpolation not in ("linear", "nearest"):
            raise ValueError("interpolation must be 'linear' or 'nearest'")

    @property
    def lam_raw(self) -> float:
        """Weight multiplying (1/v)**2 in the stage cost."""
        return self.lam * self.lambda_scale

    @property
    def dt(self) -> float:
        return self.t_f / (self.n_t - 1)

    @classmethod
    def for_corridor(cls, c: Corridor, ds: float = 10.0, **kw) -> "PlannerConfig":
        n = int(round(c.length / ds))
        return cls(ds=ds, N=n, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["torque_grid"] = list(self.torque_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        d = dict(d)
        if "torque_grid" in d:
            d["torque_grid"] = tuple(d["torque_grid"])
        return cls(**d)


def stage_cost(T_w: float, v: float, lam: float, ds: float) -> float:
    """Squared wheel torque plus time penalty for one position step."""
    if v <= 0:
        raise ValueError("stage cost needs v > 0")
    return (T_w * T_w + lam * (1.0 / v) ** 2) * ds * ds


def _stage_cost_array(u: np.ndarray, v: np.ndarray, lam: float, ds: float) -> np.ndarray:
    return (u * u + lam * (1.0 / v) ** 2) * ds * ds


@dataclass
class _Tables:
    """Per-(velocity node, torque) transition data; independent of stage on a flat road."""

    v_next: np.ndarray
    dtime: np.ndarray
    valid: np.ndarray
    stage: np.ndarray
    iv0: np.ndarray
    wv: np.ndarray
    joff: np.ndarray
    wt: np.ndarray


def _grid(p: VehicleParams, cfg: PlannerConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.n_v == 1:
        v_nodes = np.array([p.v_min_plan])
    else:
        v_nodes = np.linspace(p.v_min_plan, p.v_max, cfg.n_v)
    t_nodes = np.arange(cfg.n_t) * cfg.dt
    return v_nodes, t_nodes


def _v_index(v_nodes: np.ndarray, v: np.ndarray, nearest: bool):
    n_v = len(v_nodes)
    if n_v == 1:
        return np.zeros(np.shape(v), dtype=np.int64), np.zeros(np.shape(v))
    h = v_nodes[1] - v_nodes[0]
    x = np.clip((np.asarray(v) - v_nodes[0]) / h, 0.0, n_v - 1.0)
    if nearest:
        return np.rint(x).astype(np.int64), np.zeros_like(x)
    i0 = np.minimum(np.floor(x).astype(np.int64), n_v - 2)
    return i0, x - i0


def _t_shift(y: np.ndarray, nearest: bool):
    """Split a shift of ``y`` time nodes into (integer offset, weight of next node)."""
    if nearest:
        return np.rint(y).astype(np.int64), np.zeros_like(y)
    j = np.floor(y + 1e-12).astype(np.int64)
    w = y - j
    w = np.where(w < 1e-12, 0.0, w)
    return j, w


def _build_tables(p: VehicleParams, cfg: PlannerConfig, v_nodes: np.ndarray) -> _Tables:
    n_v, n_u = len(v_nodes), len(cfg.torque_grid)
    v_next = np.full((n_v, n_u), np.nan)
    valid = np.zeros((n_v, n_u), dtype=bool)
    for i, v in enumerate(v_nodes):
        for k, u in enumerate(cfg.torque_grid):
            ok, vn = _transition(p, cfg, float(v), u)
            valid[i, k] = ok
            v_next[i, k] = vn
    vn_safe = np.where(valid, v_next, v_nodes[:, None])
    dtime = cfg.ds / vn_safe
    u = np.asarray(cfg.torque_grid)[None, :]
    stage = _stage_cost_array(u, v_nodes[:, None], cfg.lam_raw, cfg.ds)
    nearest = cfg.interpolation == "nearest"
    iv0, wv = _v_index(v_nodes, vn_safe, nearest)
    joff, wt = _t_shift(dtime / cfg.dt, nearest)
    return _Tables(v_next, dtime, valid, stage, iv0, wv, joff, wt)


def _transition(p: VehicleParams, cfg: PlannerConfig, v: float, u: float) -> tuple[bool, float]:
    """Admissibility of torque ``u`` at speed ``v`` and the resulting speed."""
    if u < p.T_w_min - _EPS or u > p.T_w_max + _EPS:
        return False, math.nan
    a = traction_accel(p, v, u)
    if a < p.a_min - _EPS or a > p.a_max + _EPS:
        return False, math.nan
    vn = v + a * cfg.ds / v
    if vn < p.v_min_plan - _EPS or vn > p.v_max + _EPS:
        return False, vn
    return True, vn


def _cells_with_stop_bars(c: Corridor, cfg: PlannerConfig) -> dict[int, list[tuple[float, int]]]:
    """Map stage k -> [(fraction of the step at the stop bar, intersection index)]."""
    out: dict[int, list[tuple[float, int]]] = {}
    for idx, x in enumerate(c.intersections):
        k = int(math.ceil(x.position / cfg.ds - 1e-9)) - 1
        if k < 0 or k >= cfg.N:
            continue
        frac = (x.position - k * cfg.ds) / cfg.ds
        out.setdefault(k, []).append((frac, idx))
    return out


def _cross_mask(c: Corridor, cfg: PlannerConfig, cells, k: int, t_nodes: np.ndarray,
                tab: _Tables, quantiles: Sequence[float]) -> np.ndarray | None:
    if k not in cells:
        return None
    ok = np.ones(tab.valid.shape + (len(t_nodes),), dtype=bool)
    for frac, idx in cells[k]:
        x = c.intersections[idx]
        t_arr = t_nodes[None, None, :] + frac * tab.dtime[:, :, None]
        tau = np.mod(t_arr - x.offset, x.cycle)
        ok &= (quantiles[idx] <= tau) & (tau < x.green)
    return ok


@dataclass
class Policy:
    params: VehicleParams
    corridor: Corridor
    cfg: PlannerConfig
    v_nodes: np.ndarray
    t_nodes: np.ndarray
    value: np.ndarray  # (N+1, n_v, n_t)
    torque_idx: np.ndarray  # (N, n_v, n_t), -1 where infeasible
    k0: int
    j_lo: int
    quantiles: tuple[float, ...]
    backend: str = "numpy"
    _cells: dict = field(default_factory=dict, repr=False)

    def torque(self, k: int, i: int, j: int) -> float | None:
        a = int(self.torque_idx[k, i, j])
        return None if a < 0 else self.cfg.torque_grid[a]

    def interp_value(self, k: int, v: float, t: float) -> float:
        """Grid value at a continuous state, with the kernel's interpolation rule."""
        if k > self.cfg.N or t > self.t_nodes[-1] + 1e-9 or t < -1e-9:
            return math.inf
        if v < self.v_nodes[0] - 1e-9 or v > self.v_nodes[-1] + 1e-9:
            return math.inf
        nearest = self.cfg.interpolation == "nearest"
        i0a, wva = _v_index(self.v_nodes, np.array([v]), nearest)
        i0, wv = int(i0a[0]), float(wva[0])
        jt = t / self.cfg.dt
        jb = int(math.floor(jt + 1e-12))
        j0a, wta = _t_shift(np.array([jt - jb]), nearest)
        j0, wt = jb + int(j0a[0]), float(wta[0])
        return self._blend(k, i0, wv, j0, wt)

    def _blend(self, k, i0, wv, j0, wt) -> float:
        n_v, n_t = len(self.v_nodes), len(self.t_nodes)
        if j0 > n_t - 1 or (wt != 0.0 and j0 + 1 > n_t - 1):
            return math.inf
        i1 = min(i0 + 1, n_v - 1)
        V = self.value[k]
        w00 = (1.0 - wv) * (1.0 - wt)
        w10 = wv * (1.0 - wt)
        w01 = (1.0 - wv) * wt
        w11 = wv * wt
        s = 0.0
        if w00 > 0.0:
            s = w00 * V[i0, j0]
        if w10 > 0.0:
            s = s + w10 * V[i1, j0]
        if w01 > 0.0:
            s = s + w01 * V[i0, j0 + 1]
        if w11 > 0.0:
            s = s + w11 * V[i1, j0 + 1]
        return float(s)

    def bellman_rhs(self, k: int, v: float, t: float) -> np.ndarray:
        """Right-hand side of the Bellman backup for every candidate torque.

        Evaluated at the continuous state (v, t) at stage ``k``; inadmissible
        torques get ``inf``.
        """
        cfg, p = self.cfg, self.params
        out = np.full(len(cfg.torque_grid), math.inf)
        nearest = cfg.interpolation == "nearest"
        jt = t / cfg.dt
        jb = int(math.floor(jt + 1e-12))
        frac_t = jt - jb
        for a, u in enumerate(cfg.torque_grid):
            ok, vn = _transition(p, cfg, v, u)
            if not ok:
                continue
            dtime = cfg.ds / vn
            for frac, idx in self._cells.get(k, ()):
                x = self.corridor.intersections[idx]
                tau = (t + frac * dtime - x.offset) % x.cycle
                if not (self.quantiles[idx] <= tau < x.green):
                    ok = False
            if not ok:
                continue
            i0a, wva = _v_index(self.v_nodes, np.array([vn]), nearest)
            j0a, wta = _t_shift(np.array([frac_t + dtime / cfg.dt]), nearest)
            nxt = self._blend(k + 1, int(i0a[0]), float(wva[0]), jb + int(j0a[0]), float(wta[0]))
            out[a] = _stage_cost_array(np.float64(u), np.float64(v), cfg.lam_raw, cfg.ds) + nxt
        return out

    def best_torque(self, k: int, v: float, t: float) -> float | None:
        q = self.bellman_rhs(k, v, t)
        a = int(np.argmin(q))
        return None if not np.isfinite(q[a]) else self.cfg.torque_grid[a]

    def has_future_node(self, position: float, t: float) -> bool:
        """True if the stage serving ``position`` has a feasible node at or after ``t``."""
        k = max(int(math.ceil(position / self.cfg.ds - 1e-9)), self.k0)
        if k >= self.cfg.N:
            return True
        j_min = max(int(math.floor(t / self.cfg.dt + 1e-12)), 0)
        return bool((self.torque_idx[k][:, j_min:] >= 0).any())

    def start_value(self) -> float:
        return float(self._start_value)

    def save(self, path: str | Path) -> None:
        """Binary dump: grids, tables and JSON metadata."""
        meta = {
            "params": self.params.to_dict(),
            "corridor": self.corridor.to_dict(),
            "planner": self.cfg.to_dict(),
            "k0": self.k0,
            "j_lo": self.j_lo,
            "quantiles": list(self.quantiles),
            "backend": self.backend,
        }
        np.savez_compressed(
            path,
            meta=np.array(json.dumps(meta)),
            v_nodes=self.v_nodes,
            t_nodes=self.t_nodes,
            value=self.value,
            torque_idx=self.torque_idx,
            torque_grid=np.asarray(self.cfg.torque_grid),
        )


def load_policy(path: str | Path) -> Policy:
    from .signals import corridor_from_dict

    z = np.load(path, allow_pickle=False)
    meta = json.loads(str(z["meta"]))
    p = VehicleParams.from_dict(meta["params"])
    c = corridor_from_dict(meta["corridor"])
    cfg = PlannerConfig.from_dict(meta["planner"])
    pol = Policy(p, c, cfg, z["v_nodes"], z["t_nodes"], z["value"], z["torque_idx"],
                 meta["k0"], meta["j_lo"], tuple(meta["quantiles"]), meta["backend"],
                 _cells_with_stop_bars(c, cfg))
    return pol


_TABLE_CACHE: dict = {}
_TABLE_LOCK = threading.Lock()


def _tables_for(p: VehicleParams, cfg: PlannerConfig, v_nodes: np.ndarray) -> _Tables:
    key = (p, replace(cfg, lam=0.0, eta=0.0), cfg.lam_raw)
    with _TABLE_LOCK:
        tab = _TABLE_CACHE.get(key)
        if tab is None:
            if len(_TABLE_CACHE) > 32:
                _TABLE_CACHE.clear()
            tab = _build_tables(p, cfg, v_nodes)
            _TABLE_CACHE[key] = tab
    return tab


_MASK_CACHE: dict = {}


def _cached_mask(p, c, cfg, cells, k, t_nodes, tab, quantiles):
    """Crossing masks depend on the corridor but not on the start state, so
    successive replans on the same corridor reuse them."""
    if k not in cells:
        return None
    key = (p, c, replace(cfg, lam=0.0), k)
    with _TABLE_LOCK:
        m = _MASK_CACHE.get(key)
    if m is None:
        m = _cross_mask(c, cfg, cells, k, t_nodes, tab, quantiles)
        with _TABLE_LOCK:
            if len(_MASK_CACHE) > 256:
                _MASK_CACHE.clear()
            _MASK_CACHE[key] = m
    return m


def solve_dp(p: VehicleParams, c: Corridor, cfg: PlannerConfig, start: PlanState,
             start_position: float = 0.0, backend: str | None = None,
             require_feasible_start: bool = True) -> Policy:
    """Backward DP from the end of the route to the start node.

    Raises ``NoFeasiblePlanError`` if the start state has infinite value,
    unless ``require_feasible_start`` is False (mid-trip replans still serve
    reference queries from the other nodes).
    """
    if abs(cfg.ds * cfg.N - c.length) > 1e-6 * max(1.0, c.length):
        raise ValueError("ds * N must equal the corridor length")
    if not 0.0 <= start_position <= c.length + 1e-9:
        raise ValueError("start position outside the route")
    if not (p.v_min_plan - 1e-9 <= start.v <= p.v_max + 1e-9) or not 0 <= start.t <= cfg.t_f:
        raise ValueError("start state outside the planning grid")
    backend = backend or kernels.BACKEND
    v_nodes, t_nodes = _grid(p, cfg)
    tab = _tables_for(p, cfg, v_nodes)
    quantiles = tuple(delay_quantile(x.delay, cfg.eta) for x in c.intersections)
    cells = _cells_with_stop_bars(c, cfg)

    k0 = int(round(start_position / cfg.ds))
    j_lo = max(0, int(math.floor(start.t / cfg.dt + 1e-9)))
    n_v, n_t = len(v_nodes), len(t_nodes)
    value = np.full((cfg.N + 1, n_v, n_t), np.inf)
    torque_idx = np.full((cfg.N, n_v, n_t), -1, dtype=np.int16)
    term = _stage_cost_array(np.float64(0.0), v_nodes, cfg.lam_raw, cfg.ds)
    value[cfg.N, :, j_lo:] = term[:, None]

    # Every step takes at least ds / v_max, so nodes later than this bound
    # cannot meet t_f and are infinite anyway.
    step_min = cfg.ds / (p.v_max + 1e-6)
    for k in range(cfg.N - 1, k0 - 1, -1):
        jk_hi = int(math.floor((cfg.t_f - (cfg.N - k) * step_min) / cfg.dt)) + 1
        cross = _cached_mask(p, c, cfg, cells, k, t_nodes, tab, quantiles)
        V, U = kernels.bellman_stage(value[k + 1], tab.iv0, tab.wv, tab.joff, tab.wt,
                                     tab.valid, tab.stage, cross, j_lo, jk_hi,
                                     backend=backend)
        value[k] = V
        torque_idx[k] = U

    pol = Policy(p, c, cfg, v_nodes, t_nodes, value, torque_idx, k0, j_lo, quantiles,
                 backend, cells)
    v0 = pol.interp_value(k0, start.v, start.t)
    if not math.isfinite(v0) and require_feasible_start:
        raise NoFeasiblePlanError(
            f"no feasible plan from v={start.v:.3g} m/s, t={start.t:.3g} s at {start_position:g} m"
        )
    pol._start_value = v0
    return pol


@dataclass(frozen=True)
class QueryResult:
    v_ref: float | None
    flagged: bool
    feasible: bool
    k: int


def _propagate(pol: Policy, k: int, i: int, j: int) -> float | None:
    u = pol.torque(k, i, j)
    if u is None:
        return None
    try:
        return step_space(pol.params, PlanState(float(pol.v_nodes[i]), 0.0), u, pol.cfg.ds).v
    except StepInfeasibleError:
        return None


def query_reference(pol: Policy, position: float, v: float, t: float) -> QueryResult:
    """Reference velocity for the cruise controller at the current state.

    Uses the first grid position at or ahead of ``position``; interpolates the
    one-step propagated velocities of the surrounding (v, t) nodes. If none
    of them is feasible, the nearest feasible node that is not in the past
    is used and the result is flagged; ``feasible`` is False when there is no
    such node at all.
    """
    p, cfg = pol.params, pol.cfg
    if position < -1e-9 or position > pol.corridor.length + 1e-9:
        raise ValueError("position outside the route")
    k = max(int(math.ceil(position / cfg.ds - 1e-9)), pol.k0)
    if k >= cfg.N:
        return QueryResult(min(max(v, p.v_min_plan), p.v_max), False, True, cfg.N)
    flagged = False
    vq = v
    if vq < pol.v_nodes[0] or vq > pol.v_nodes[-1]:
        vq = min(max(vq, pol.v_nodes[0]), pol.v_nodes[-1])
        flagged = True
    n_v, n_t = len(pol.v_nodes), len(pol.t_nodes)
    tq = min(max(t, 0.0), pol.t_nodes[-1])
    if t > pol.t_nodes[-1]:
        flagged = True
    i0a, wva = _v_index(pol.v_nodes, np.array([vq]), False)
    i0, wv = int(i0a[0]), float(wva[0])
    jt = tq / cfg.dt
    j0 = min(int(math.floor(jt + 1e-12)), n_t - 1)
    wt = jt - j0 if j0 < n_t - 1 else 0.0
    if wt < 1e-12:
        wt = 0.0
    acc = 0.0
    wsum = 0.0
    for di, dj, w in ((0, 0, (1 - wv) * (1 - wt)), (1, 0, wv * (1 - wt)),
                      (0, 1, (1 - wv) * wt), (1, 1, wv * wt)):
        if w <= 0.0:
            continue
        vn = _propagate(pol, k, min(i0 + di, n_v - 1), j0 + dj)
        if vn is None:
            flagged = True
            continue
        acc += w * vn
        wsum += w
    if wsum > 0.0:
        v_ref = acc / wsum
        return QueryResult(min(max(v_ref, p.v_min_plan), p.v_max), flagged, True, k)

    # Nearest feasible node not earlier than the current time.
    feas = pol.torque_idx[k] >= 0
    j_min = int(math.floor(jt + 1e-12))
    feas[:, :max(j_min, 0)] = False
    if not feas.any():
        return QueryResult(None, True, False, k)
    ii, jj = np.nonzero(feas)
    hv = (pol.v_nodes[1] - pol.v_nodes[0]) if n_v > 1 else 1.0
    d2 = ((pol.v_nodes[ii] - vq) / hv) ** 2 + ((pol.t_nodes[jj] - tq) / cfg.dt) ** 2
    m = int(np.argmin(d2))
    vn = _propagate(pol, k, int(ii[m]), int(jj[m]))
    v_ref = min(max(vn, p.v_min_plan), p.v_max)
    return QueryResult(v_ref, True, True, k)


def replan(pol_prev: Policy, position: float, state: PlanState, cfg: PlannerConfig | None = None,
           corridor: Corridor | None = None) -> Policy:
    """Fresh solve from the current node with the latest signal information."""
    if position > pol_prev.corridor.length + 1e-9:
        raise ValueError("position beyond the route")
    return solve_dp(pol_prev.params, corridor or pol_prev.corridor, cfg or pol_prev.cfg,
                    state, position, backend=pol_prev.backend)


@dataclass(frozen=True)
class TrajectoryPoint:
    position: float
    v: float
    t: float
    T_w: float | None


def nominal_trajectory(pol: Policy, start: PlanState) -> list[TrajectoryPoint]:
    """Forward rollout choosing the Bellman-optimal torque at each continuous state."""
    cfg = pol.cfg
    rows = []
    s = start
    for k in range(pol.k0, cfg.N):
        u = pol.best_torque(k, s.v, s.t)
        if u is None:
            raise NoFeasiblePlanError(f"rollout left the feasible set at stage {k}")
        rows.append(TrajectoryPoint(k * cfg.ds, s.v, s.t, u))
        s = step_space(pol.params, s, u, cfg.ds)
    rows.append(TrajectoryPoint(cfg.N * cfg.ds, s.v, s.t, None))
    return rows


def crossing_times(pol: Policy, traj: Sequence[TrajectoryPoint]) -> list[float]:
    """Stop-bar arrival times along a rollout, interpolated within each step."""
    out = []
    ds = pol.cfg.ds
    for x in pol.corridor.intersections:
        k = int(math.ceil(x.position / ds - 1e-9)) - 1
        k -= pol.k0
        if k < 0 or k + 1 >= len(traj):
            continue
        a, b = traj[k], traj[k + 1]
        frac = (x.position - a.position) / ds
        out.append(a.t + frac * (b.t - a.t))
    return out


class PolicyHandle:
    """Atomically published policy snapshot shared by planner and query tasks."""

    def __init__(self, policy: Policy | None = None):
        self._lock = threading.Lock()
        self._policy = policy
        self.version = 0 if policy is None else 1

    def publish(self, policy: Policy) -> None:
        with self._lock:
            self._policy = policy
            self.version += 1

    def current(self) -> Policy | None:
        with self._lock:
            return self._policy
