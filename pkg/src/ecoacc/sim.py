"""Closed-loop corridor simulation: plant, IDM traffic, signals and controllers."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import NoFeasiblePlanError, TraceInvariantError, TrafficCollisionError
from .mpc import FALLBACK_STATUS, MpcConfig, build_terminal_sets, predict_front, solve_mpc
from .planner import Policy, PlannerConfig, PolicyHandle, query_reference, solve_dp
from .signals import GREEN, RED, YELLOW, Corridor, PhaseState, phase_at, sample_schedule
from .vehicle import AccState, PlanState, VehicleParams, plant_step

NO_LEADER_GAP = 1e4
NO_LIGHT_DISTANCE = 1e4
VEHICLE_LENGTH = 4.5
# A stop bar counts as passed once the vehicle is this far beyond it; smaller
# overshoots are QP round-off from a car held exactly on the bar.
BAR_TOL = 1e-6

CONTROLLERS = ("eco-acc", "acc-only", "eco-acc-offline")


@dataclass(frozen=True)
class IdmParams:
    v0: float = 13.0
    T: float = 1.5
    s0: float = 2.0
    a: float = 1.5
    b: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        if min(self.v0, self.T, self.s0, self.a, self.b, self.delta) <= 0:
            raise ValueError("IDM parameters must be positive")


def idm_accel(p: IdmParams, v: float, gap: float, dv: float) -> float:
    """Intelligent driver model; ``dv`` is the approach rate v - v_leader."""
    if gap <= 0:
        raise TrafficCollisionError(f"IDM gap {gap:.3g} m is not positive")
    s_star = p.s0 + v * p.T + v * dv / (2.0 * math.sqrt(p.a * p.b))
    return p.a * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)


@dataclass(frozen=True)
class TrafficConfig:
    idm: IdmParams = IdmParams()
    v0_range: tuple[float, float] = (11.0, 15.0)
    cut_in_rate: float = 1.0 / 60.0
    cut_in_extra_gap: tuple[float, float] = (3.0, 25.0)
    cut_in_speed_factor: tuple[float, float] = (0.6, 1.0)
    queue_headway: float = 2.0
    queue_lookahead: float = 400.0
    turn_probability: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["idm"] = asdict(self.idm)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficConfig":
        d = dict(d)
        if "idm" in d:
            d["idm"] = IdmParams(**d["idm"])
        for key in ("v0_range", "cut_in_extra_gap", "cut_in_speed_factor"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Scenario:
    corridor: Corridor
    vehicle: VehicleParams
    planner: PlannerConfig
    mpc: MpcConfig
    traffic: TrafficConfig | None = None
    seed: int = 0
    controller: str = "eco-acc"
    v0: float = 0.0
    position0: float = 0.0
    acc_only_vref: float = 15.0
    hard_cap: float = 600.0
    replan_period: float = 10.0
    randomize_offsets: bool = True
    deadline_extension: float = 60.0

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if not 0 <= self.acc_only_vref <= self.vehicle.v_max:
            raise ValueError("acc-only reference outside [0, v_max]")
        if abs(self.planner.ds * self.planner.N - self.corridor.length) > 1e-6:
            raise ValueError("planner grid does not span the corridor")

    def digest(self) -> str:
        payload = {
            "corridor": self.corridor.to_dict(),
            "vehicle": self.vehicle.to_dict(),
            "planner": self.planner.to_dict(),
            "mpc": self.mpc.to_dict(),
            "traffic": None if self.traffic is None else self.traffic.to_dict(),
            "seed": self.seed,
            "controller": self.controller,
            "v0": self.v0,
            "acc_only_vref": self.acc_only_vref,
            "hard_cap": self.hard_cap,
            "replan_period": self.replan_period,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- environment


@dataclass
class _Car:
    position: float
    v: float
    v0: float
    exit_at: int | None  # intersection index at which it turns off
    committed: dict = field(default_factory=dict)  # intersection -> "stop" | "go"


@dataclass(frozen=True)
class Environment:
    """Seeded realization shared by every controller run on the same seed."""

    corridor: Corridor
    alphas: tuple[float, ...]
    cut_in_times: tuple[float, ...]
    cut_in_gaps: tuple[float, ...]
    cut_in_speed: tuple[float, ...]
    cut_in_v0: tuple[float, ...]
    cut_in_exit: tuple[float, ...]
    queue_v0: tuple[float, ...]

    def digest(self) -> str:
        payload = json.dumps(
            {
                "offsets": [x.offset for x in self.corridor.intersections],
                "alphas": self.alphas,
                "cut_in": [self.cut_in_times, self.cut_in_gaps, self.cut_in_speed,
                           self.cut_in_v0, self.cut_in_exit],
                "queue_v0": self.queue_v0,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def realize_environment(scn: Scenario) -> Environment:
    sample = sample_schedule(scn.corridor, scn.seed, randomize_offsets=scn.randomize_offsets)
    corridor = scn.corridor.with_offsets(sample.offsets)
    rng = np.random.default_rng(np.random.SeedSequence([scn.seed, 7]))
    tc = scn.traffic
    if tc is None or tc.cut_in_rate <= 0:
        times: list[float] = []
    else:
        times, t = [], 0.0
        while True:
            t += float(rng.exponential(1.0 / tc.cut_in_rate))
            if t >= scn.hard_cap:
                break
            times.append(round(t / scn.mpc.t_s) * scn.mpc.t_s)
    n = len(times)
    if tc is None:
        gaps = speed = v0s = exits = ()
        qv0: tuple[float, ...] = ()
    else:
        gaps = tuple(float(x) for x in rng.uniform(*tc.cut_in_extra_gap, size=n))
        speed = tuple(float(x) for x in rng.uniform(*tc.cut_in_speed_factor, size=n))
        v0s = tuple(float(x) for x in rng.uniform(*tc.v0_range, size=n))
        exits = tuple(float(x) for x in rng.uniform(0, 1, size=n))
        qv0 = tuple(float(x) for x in rng.uniform(*tc.v0_range, size=64))
    return Environment(corridor, sample.alphas, tuple(times), tuple(gaps), tuple(speed),
                       tuple(v0s), tuple(exits), qv0)


class Traffic:
    """Single-lane IDM vehicles ahead of the subject."""

    def __init__(self, scn: Scenario, env: Environment, a_brake: float):
        self.scn, self.env = scn, env
        self.cfg = scn.traffic
        self.a_brake = a_brake
        self.cars: list[_Car] = []  # sorted by position ascending
        self._next_cut = 0
        self._queued: set[tuple[int, int]] = set()
        self._qv0 = 0

    # -- helpers
    def leader_of(self, position: float) -> _Car | None:
        for car in self.cars:
            if car.position > position:
                return car
        return None

    def _exit_index(self, position: float, u: float) -> int | None:
        c = self.env.corridor
        ahead = [k for k, x in enumerate(c.intersections) if x.position > position + 1.0]
        if not ahead or u >= self.cfg.turn_probability:
            return None
        # turning vehicles leave at a uniformly chosen upcoming intersection
        return ahead[int(u / self.cfg.turn_probability * len(ahead)) % len(ahead)]

    def _safe_gap(self, v_back: float, v_front: float, sets) -> float:
        need = max(0.0, (v_back**2 - v_front**2) / (2 * self.a_brake) + sets.margin_time * v_back)
        return sets.d_min + need

    def spawn(self, t: float, subj_pos: float, subj_v: float, sets) -> None:
        """Inject scheduled cut-ins and red-light queues."""
        if self.cfg is None:
            return
        env = self.env
        while self._next_cut < len(env.cut_in_times) and env.cut_in_times[self._next_cut] <= t + 1e-9:
            i = self._next_cut
            self._next_cut += 1
            v = env.cut_in_speed[i] * subj_v
            gap = self._safe_gap(subj_v, v, sets) + env.cut_in_gaps[i]
            pos = subj_pos + gap + VEHICLE_LENGTH
            if pos >= env.corridor.length:
                continue
            lead = self.leader_of(subj_pos)
            if lead is not None:
                room = lead.position - VEHICLE_LENGTH - pos
                if room < self._safe_gap(v, lead.v, sets) + 2.0:
                    continue
            self._insert(_Car(pos, v, env.cut_in_v0[i], self._exit_index(pos, env.cut_in_exit[i])))

        c = env.corridor
        for k, x in enumerate(c.intersections):
            if not subj_pos < x.position <= subj_pos + self.cfg.queue_lookahead:
                continue
            ph = phase_at(x, t)
            if ph.phase != RED:
                continue
            cycle_id = int(math.floor((t - x.offset) / x.cycle))
            if (k, cycle_id) in self._queued:
                continue
            self._queued.add((k, cycle_id))
            n_q = int(round(env.alphas[k] / self.cfg.queue_headway))
            for q in range(n_q):
                pos = x.position - 0.5 - q * (VEHICLE_LENGTH + self.cfg.idm.s0)
                back = pos - VEHICLE_LENGTH
                if back - subj_pos < self._safe_gap(subj_v, 0.0, sets) + 2.0:
                    break
                if any(abs(car.position - pos) < VEHICLE_LENGTH + self.cfg.idm.s0 for car in self.cars):
                    break
                # Traffic behind the new car must be able to stop too.
                behind = [car for car in self.cars if car.position < pos]
                if behind and back - behind[-1].position < self._safe_gap(behind[-1].v, 0.0, sets) + 2.0:
                    break
                v0 = env.queue_v0[self._qv0 % len(env.queue_v0)]
                self._qv0 += 1
                car = _Car(pos, 0.0, v0, None)
                car.committed[k] = "stop"
                self._insert(car)

    def _insert(self, car: _Car) -> None:
        self.cars.append(car)
        self.cars.sort(key=lambda c: c.position)

    def step(self, t: float, t_s: float) -> None:
        c = self.env.corridor
        idm = self.cfg.idm
        acc = []
        for n, car in enumerate(self.cars):
            p = replace(idm, v0=car.v0)
            a = p.a * (1.0 - (car.v / p.v0) ** p.delta)
            if n + 1 < len(self.cars):
                lead = self.cars[n + 1]
                gap = lead.position - VEHICLE_LENGTH - car.position
                a = min(a, idm_accel(p, car.v, gap, car.v - lead.v))
            k = c.next_intersection(car.position)
            if k is not None:
                x = c.intersections[k]
                dist = x.position - car.position
                ph = phase_at(x, t)
                decision = car.committed.get(k)
                if ph.phase in (YELLOW, RED) and decision is None:
                    stop_d = car.v**2 / (2 * min(idm.b * 1.5, self.a_brake))
                    decision = "stop" if stop_d <= dist else "go"
                    car.committed[k] = decision
                if ph.phase == GREEN:
                    car.committed.pop(k, None)
                elif decision == "stop" and dist > 0.05:
                    a = min(a, idm_accel(p, car.v, dist, car.v))
                elif decision == "stop":
                    a = min(a, -car.v / t_s)
            acc.append(min(max(a, -self.a_brake), idm.a))
        for car, a in zip(self.cars, acc):
            car.position += t_s * car.v
            car.v = max(0.0, car.v + t_s * a)
        keep = []
        for car in self.cars:
            if car.position >= c.length:
                continue
            if car.exit_at is not None and car.position >= c.intersections[car.exit_at].position:
                continue
            keep.append(car)
        self.cars = keep


# ---------------------------------------------------------------- trace


TRACE_FIELDS = ("t", "position", "v", "T_w", "v_ref", "d_f", "d_TL", "phase", "slack",
                "status", "cost", "plan_flag")


@dataclass
class SimRecord:
    t: float
    position: float
    v: float
    T_w: float
    v_ref: float
    d_f: float
    d_TL: float
    phase: str
    slack: float
    status: str
    cost: float
    plan_flag: str


@dataclass
class SimTrace:
    records: list[SimRecord]
    summary: dict
    t_s: float
    vehicle: VehicleParams
    scenario_digest: str = ""
    environment_digest: str = ""

    @property
    def completed(self) -> bool:
        return bool(self.summary.get("completed"))

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in self.records:
            w.writerow([_fmt(getattr(r, f)) for f in TRACE_FIELDS])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.6f}"
    return str(x)


def check_trace(trace: SimTrace, corridor: Corridor) -> None:
    """Raise ``TraceInvariantError`` if the trace is malformed."""
    prev_t, prev_x = -math.inf, -math.inf
    for n, r in enumerate(trace.records):
        if not math.isfinite(r.v) or not math.isfinite(r.position):
            raise TraceInvariantError(f"non-finite state at record {n}")
        if n and abs((r.t - prev_t) - trace.t_s) > 1e-6:
            raise TraceInvariantError(f"time step irregular at record {n}")
        if r.position < prev_x - 1e-9:
            raise TraceInvariantError(f"position decreased at record {n}")
        k = light_ahead(corridor, r.position)
        expected = GREEN if k is None else phase_at(corridor.intersections[k], r.t).phase
        if r.phase != expected:
            raise TraceInvariantError(f"phase mismatch at record {n}")
        prev_t, prev_x = r.t, r.position


# ---------------------------------------------------------------- controller loop


class _EcoPlanner:
    """Online or frozen DP policy serving reference queries."""

    def __init__(self, scn: Scenario, corridor: Corridor, online: bool):
        self.scn, self.corridor, self.online = scn, corridor, online
        self.cfg = scn.planner
        self.handle = PolicyHandle()
        self.last_plan_t = -math.inf
        self.replans = 0
        self.solves = 0
        self.deadline_extensions = 0
        self.start_flagged = False

    def _solve(self, position: float, v: float, t: float, require_start: bool) -> Policy:
        p = self.scn.vehicle
        start = PlanState(min(max(v, p.v_min_plan), p.v_max), t)
        pos = min(position, self.corridor.length)
        while True:
            cfg = self.cfg
            if start.t > cfg.t_f:
                pol = None
            else:
                pol = self._reusable(cfg, pos, t)
                if pol is None:
                    pol = solve_dp(p, self.corridor, cfg, start, pos,
                                   require_feasible_start=require_start)
                    self.solves += 1
                if pol.has_future_node(pos, t):
                    return pol
            if not self.online or cfg.t_f >= self.scn.hard_cap:
                if pol is None:
                    raise NoFeasiblePlanError("travel-time budget exhausted")
                return pol
            self.cfg = replace(cfg, t_f=min(cfg.t_f + self.scn.deadline_extension,
                                            self.scn.hard_cap), n_t=None)
            self.deadline_extensions += 1

    def _reusable(self, cfg: PlannerConfig, position: float, t: float) -> Policy | None:
        """The published policy if a fresh solve would reproduce it.

        With unchanged corridor and config, values at stages from the new
        start node and times from the new start time depend only on later
        stages and later times, so they equal the stored ones exactly.
        """
        pol = self.handle.current()
        if pol is None or pol.cfg != cfg or pol.corridor != self.corridor:
            return None
        k0 = int(round(position / cfg.ds))
        j_lo = int(math.floor(t / cfg.dt + 1e-9))
        if k0 < pol.k0 or j_lo < pol.j_lo:
            return None
        return pol

    def initialize(self, position: float, v: float, t: float) -> None:
        bound = t + (self.corridor.length - position) / self.scn.vehicle.v_max
        if self.cfg.t_f < bound:
            raise NoFeasiblePlanError(
                f"t_f = {self.cfg.t_f:g} s is below the {bound:.1f} s needed at v_max")
        try:
            pol = self._solve(position, v, t, require_start=True)
        except NoFeasiblePlanError:
            # The start node itself can be infeasible, e.g. a red light just
            # ahead that the floor speed cannot wait out. Serve the nearest
            # feasible node instead and let the ACC stop at the bar.
            pol = self._solve(position, v, t, require_start=False)
            self.start_flagged = True
        self.handle.publish(pol)
        self.last_plan_t = t

    def reference(self, position: float, v: float, t: float) -> tuple[float | None, str]:
        if self.online and t - self.last_plan_t >= self.scn.replan_period - 1e-9:
            self._replan(position, v, t)
        pol = self.handle.current()
        q = query_reference(pol, position, v, t)
        if not q.feasible and self.online:
            self._replan(position, v, t)
            q = query_reference(self.handle.current(), position, v, t)
        if not q.feasible:
            return None, "infeasible"
        return q.v_ref, "flagged" if q.flagged else "ok"

    def _replan(self, position: float, v: float, t: float) -> None:
        try:
            pol = self._solve(position, v, t, require_start=False)
        except NoFeasiblePlanError:
            return
        self.handle.publish(pol)
        self.last_plan_t = t
        self.replans += 1


def light_ahead(corridor: Corridor, position: float) -> int | None:
    """First stop bar at or ahead of ``position``; a car waiting on the bar still sees it."""
    for k, x in enumerate(corridor.intersections):
        if x.position >= position - BAR_TOL:
            return k
    return None


def _sense(corridor: Corridor, traffic: Traffic | None, position: float, t: float):
    k = light_ahead(corridor, position)
    if k is None:
        phase, d_tl, k_light = PhaseState(GREEN, math.inf), NO_LIGHT_DISTANCE, None
    else:
        x = corridor.intersections[k]
        phase, d_tl, k_light = phase_at(x, t), max(x.position - position, 0.0), k
    lead = traffic.leader_of(position) if traffic is not None else None
    if lead is None:
        d_f, v_f = NO_LEADER_GAP, 0.0
    else:
        d_f, v_f = lead.position - VEHICLE_LENGTH - position, lead.v
    return phase, d_tl, k_light, d_f, v_f


def run_closed_loop(scn: Scenario, env: Environment | None = None,
                    check: bool = True) -> SimTrace:
    """Simulate one trip at the controller sample time."""
    env = env or realize_environment(scn)
    corridor = env.corridor
    p, mcfg = scn.vehicle, scn.mpc
    ts = mcfg.t_s
    sets = build_terminal_sets(p, mcfg)
    traffic = Traffic(scn, env, sets.a_brake) if scn.traffic is not None else None

    planner = None
    if scn.controller != "acc-only":
        planner = _EcoPlanner(scn, corridor, online=scn.controller == "eco-acc")
        planner.initialize(scn.position0, scn.v0, 0.0)

    records: list[SimRecord] = []
    position, v, u_prev = scn.position0, scn.v0, 0.0
    red_crossings = 0
    fallbacks = 0
    stranded = False
    aborted = ""
    n_steps = int(round(scn.hard_cap / ts))
    step = 0
    for step in range(n_steps + 1):
        t = step * ts
        if position >= corridor.length:
            break
        if step == n_steps:
            break
        if traffic is not None:
            traffic.spawn(t, position, v, sets)
        phase, d_tl, k_light, d_f, v_f = _sense(corridor, traffic, position, t)

        if planner is None:
            v_ref, flag = scn.acc_only_vref, "const"
        else:
            v_ref, flag = planner.reference(position, v, t)
            if v_ref is None:
                v_ref = 0.0
                stranded = True
        front = predict_front(v_f, mcfg.N_p)
        sol = solve_mpc(p, mcfg, AccState(d_tl, d_f, v), phase, v_ref, front, u_prev, sets=sets)
        if sol.status == FALLBACK_STATUS:
            fallbacks += 1
        u = sol.u0
        records.append(SimRecord(t, position, v, u, v_ref, d_f, d_tl, phase.phase,
                                 float(sol.slack.max()) if sol.slack.size else 0.0,
                                 sol.status, sol.cost, flag))

        dx, v_next = plant_step(p, v, u, ts)
        if not (math.isfinite(dx) and math.isfinite(v_next)):
            aborted = "plant produced a non-finite state"
            break
        new_pos = position + dx
        if k_light is not None:
            bar = corridor.intersections[k_light].position
            if position <= bar + BAR_TOL < new_pos:
                frac = (bar - position) / dx if dx > 0 else 0.0
                if phase_at(corridor.intersections[k_light], t + frac * ts).phase == RED:
                    red_crossings += 1
        if traffic is not None:
            try:
                traffic.step(t, ts)
            except TrafficCollisionError as exc:
                aborted = f"traffic collision: {exc}"
                break
        position, v, u_prev = new_pos, v_next, u

    t_end = step * ts
    completed = position >= corridor.length and not aborted
    trace = SimTrace(records, {}, ts, p, scn.digest(), env.digest())
    trace.summary = _summarize(trace, scn, completed, t_end, red_crossings, fallbacks,
                               stranded, aborted, planner)
    if check and records:
        check_trace(trace, corridor)
    return trace


def _summarize(trace: SimTrace, scn: Scenario, completed: bool, t_end: float,
               red_crossings: int, fallbacks: int, stranded: bool, aborted: str,
               planner) -> dict:
    from .harness import wheel_energy

    recs = trace.records
    v = trace.column("v") if recs else np.zeros(0)
    d_f = trace.column("d_f") if recs else np.zeros(0)
    moved = np.nonzero(v >= scn.vehicle.v_min_plan)[0]
    post = v[moved[0]:] if moved.size else np.zeros(0)
    stops = 0
    moving = False
    for x in v:
        if x >= 1.0:
            moving = True
        elif moving and x < 0.1:
            stops += 1
            moving = False
    return {
        "scenario": trace.scenario_digest,
        "environment": trace.environment_digest,
        "controller": scn.controller,
        "seed": scn.seed,
        "lambda": scn.planner.lam,
        "completed": bool(completed),
        "travel_time": float(t_end) if completed else None,
        "elapsed": float(t_end),
        "wheel_energy_kwh": wheel_energy(trace),
        "mean_speed": float(v.mean()) if v.size else 0.0,
        "std_speed": float(v.std()) if v.size else 0.0,
        "min_gap": float(d_f.min()) if d_f.size else NO_LEADER_GAP,
        "min_speed_after_start": float(post.min()) if post.size else 0.0,
        "stop_count": stops,
        "red_crossings": red_crossings,
        "fallback_steps": fallbacks,
        "steps": len(recs),
        "stranded": bool(stranded),
        "aborted": aborted,
        "replans": planner.replans if planner is not None else 0,
        "dp_solves": planner.solves if planner is not None else 0,
        "deadline_extensions": planner.deadline_extensions if planner is not None else 0,
        "start_flagged": bool(planner is not None and planner.start_flagged),
    }
