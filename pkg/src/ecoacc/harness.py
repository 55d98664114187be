"""Energy accounting, paired comparisons, lambda sweeps and report emission."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

KWH_PER_GALLON = 33.7
J_PER_KWH = 3.6e6

REPORT_FIELDS = ("scenario", "environment", "controller", "seed", "lam", "completed",
                 "travel_time", "wheel_energy_kwh", "fuel_gal", "mean_speed", "std_speed",
                 "stop_count", "min_gap", "red_crossings", "fallback_steps", "error")


def wheel_energy(trace) -> float:
    """Positive traction work at the wheel in kWh (braking earns no credit)."""
    r_w = trace.vehicle.R_w
    ts = trace.t_s
    total = 0.0
    for rec in trace.records:
        pw = rec.T_w * rec.v / r_w
        if pw > 0.0:
            total += pw * ts
    return total / J_PER_KWH


def segment_energy(trace, start: int, stop: int) -> float:
    """Wheel energy of records ``start:stop``; segments add up to the whole."""
    sub = replace(trace, records=trace.records[start:stop])
    return wheel_energy(sub)


def equivalent_fuel(elec_kwh: float) -> float:
    if elec_kwh < 0:
        raise ValueError("energy must be nonnegative")
    return elec_kwh / KWH_PER_GALLON


@dataclass(frozen=True)
class ExperimentReport:
    scenario: str
    environment: str
    controller: str
    seed: int
    lam: float
    completed: bool
    travel_time: float | None
    wheel_energy_kwh: float
    fuel_gal: float
    mean_speed: float
    std_speed: float
    stop_count: int
    min_gap: float
    red_crossings: int
    fallback_steps: int
    error: str = ""

    def __post_init__(self):
        if self.wheel_energy_kwh < 0:
            raise ValueError("energy must be nonnegative")
        if self.completed and not (self.travel_time and self.travel_time > 0):
            raise ValueError("completed runs need a positive travel time")

    @classmethod
    def from_trace(cls, trace) -> "ExperimentReport":
        s = trace.summary
        e = s["wheel_energy_kwh"]
        return cls(s["scenario"], s["environment"], s["controller"], s["seed"], s["lambda"],
                   s["completed"], s["travel_time"], e, equivalent_fuel(e), s["mean_speed"],
                   s["std_speed"], s["stop_count"], s["min_gap"], s["red_crossings"],
                   s["fallback_steps"], s["aborted"])

    def row(self) -> list:
        d = asdict(self)
        return [_cell(d[f]) for f in REPORT_FIELDS]


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return x


def write_reports_csv(reports: Iterable[ExperimentReport], path: str | Path) -> Path:
    path = Path(path)
    rows = sorted(reports, key=lambda r: (r.lam, r.seed, r.controller))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow(r.row())
    return path


def run_report(scn, env=None) -> tuple[ExperimentReport, object]:
    """Run one scenario and convert its trace into a report row."""
    from .sim import run_closed_loop

    trace = run_closed_loop(scn, env)
    return ExperimentReport.from_trace(trace), trace


# ---------------------------------------------------------------- comparisons


@dataclass
class Comparison:
    pairs: list[tuple[ExperimentReport, ExperimentReport]]
    excluded: list[int]
    energy_delta: float  # median relative change of candidate vs baseline
    time_delta: float
    mean_energy_delta: float
    mean_time_delta: float


def compare_controllers(base_scenario, seeds: Sequence[int], baseline: dict,
                        candidate: dict, workers: int = 1) -> Comparison:
    """Paired runs: both controllers see the same environment for each seed.

    ``baseline`` and ``candidate`` are field overrides applied to
    ``base_scenario`` (for example ``{"controller": "acc-only"}``).
    """
    if not seeds:
        raise ValueError("need at least one seed")
    jobs = []
    for seed in seeds:
        sb = replace(base_scenario, seed=seed, **baseline)
        sc = replace(base_scenario, seed=seed, **candidate)
        jobs.append((sb, sc))
    results = _map(_paired_job, jobs, workers)
    pairs, excluded = [], []
    for seed, (rb, rc) in zip(seeds, results):
        if rb.environment != rc.environment:
            raise AssertionError("paired runs saw different environments")
        if rb.completed and rc.completed:
            pairs.append((rb, rc))
        else:
            excluded.append(seed)
    de = [rc.wheel_energy_kwh / rb.wheel_energy_kwh - 1.0 for rb, rc in pairs
          if rb.wheel_energy_kwh > 0]
    dt = [rc.travel_time / rb.travel_time - 1.0 for rb, rc in pairs]
    med = lambda xs: float(statistics.median(xs)) if xs else math.nan  # noqa: E731
    mean = lambda xs: float(np.mean(xs)) if xs else math.nan  # noqa: E731
    return Comparison(pairs, excluded, med(de), med(dt), mean(de), mean(dt))


def _paired_job(job):
    sb, sc = job
    return run_report(sb)[0], run_report(sc)[0]


def _single_job(scn):
    try:
        return run_report(scn)[0]
    except Exception as exc:  # per-run errors are flagged on the row
        return ExperimentReport(scn.digest(), "", scn.controller, scn.seed, scn.planner.lam,
                                False, None, 0.0, 0.0, 0.0, 0.0, 0, math.nan, 0, 0,
                                f"{type(exc).__name__}: {exc}")


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def run_batch(scenarios: Sequence, workers: int = 1) -> list[ExperimentReport]:
    return _map(_single_job, scenarios, workers)


# ---------------------------------------------------------------- lambda sweep


@dataclass
class SweepResult:
    reports: list[ExperimentReport]
    medians: dict[float, tuple[float, float]]  # lam -> (energy, travel time)


def pareto_sweep(base_scenario, lambdas: Sequence[float], seeds: Sequence[int],
                 workers: int = 1) -> SweepResult:
    if not lambdas:
        raise ValueError("need at least one lambda")
    if not seeds:
        raise ValueError("need at least one seed")
    scns = [replace(base_scenario, seed=s, planner=replace(base_scenario.planner, lam=float(lam)))
            for lam in lambdas for s in seeds]
    reports = sorted(run_batch(scns, workers), key=lambda r: (r.lam, r.seed))
    medians = {}
    for lam in lambdas:
        done = [r for r in reports if r.lam == float(lam) and r.completed]
        if done:
            medians[float(lam)] = (float(statistics.median(r.wheel_energy_kwh for r in done)),
                                   float(statistics.median(r.travel_time for r in done)))
    return SweepResult(reports, medians)


def write_sweep_csv(res: SweepResult, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("lam", "seed", "completed", "wheel_energy_kwh", "travel_time", "error"))
        for r in res.reports:
            w.writerow([_cell(r.lam), r.seed, r.completed, _cell(r.wheel_energy_kwh),
                        _cell(r.travel_time), r.error])
        for lam, (e, t) in sorted(res.medians.items()):
            w.writerow([_cell(lam), "median", True, _cell(e), _cell(t), ""])
    return path


def travel_time_clusters(times: Sequence[float], gap: float = 8.0) -> list[list[float]]:
    """Split sorted travel times wherever consecutive values differ by more than ``gap``."""
    xs = sorted(times)
    if not xs:
        return []
    out = [[xs[0]]]
    for a, b in zip(xs, xs[1:]):
        if b - a > gap:
            out.append([])
        out[-1].append(b)
    return out


# ---------------------------------------------------------------- plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_velocity(trace, corridor, path: str | Path) -> Path:
    """Velocity over distance with red periods marked at each stop bar."""
    if not trace.records:
        raise ValueError("empty trace")
    plt = _pyplot()
    from .signals import RED, phase_at

    x = trace.column("position")
    v = trace.column("v")
    t = trace.column("t")
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(x, v, lw=1.2)
    ax1.set_ylabel("velocity (m/s)")
    ax2.plot(x, t, lw=1.2)
    ax2.set_ylabel("time (s)")
    ax2.set_xlabel("distance (m)")
    t_grid = np.arange(0.0, float(t[-1]) + 30.0, 0.5)
    for inter in corridor.intersections:
        red = np.array([phase_at(inter, tt).phase == RED for tt in t_grid])
        edges = np.flatnonzero(np.diff(np.r_[0, red.astype(int), 0]))
        for a, b in zip(edges[::2], edges[1::2]):
            ax2.plot([inter.position] * 2, [t_grid[a], t_grid[b - 1]], "r--", lw=1.5)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_cumulative_energy(trace, path: str | Path) -> Path:
    if not trace.records:
        raise ValueError("empty trace")
    plt = _pyplot()
    pw = np.maximum(trace.column("T_w") * trace.column("v") / trace.vehicle.R_w, 0.0)
    e = np.cumsum(pw * trace.t_s) / J_PER_KWH
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.fill_between(trace.column("position"), e, alpha=0.5)
    ax.set_xlabel("distance (m)")
    ax.set_ylabel("wheel energy (kWh)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_pareto(reports: Sequence[ExperimentReport], path: str | Path) -> Path:
    done = [r for r in reports if r.completed]
    if not done:
        raise ValueError("no completed runs to plot")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    lams = sorted({r.lam for r in done})
    for lam in lams:
        rs = [r for r in done if r.lam == lam]
        ax.scatter([r.travel_time for r in rs], [r.wheel_energy_kwh for r in rs],
                   label=f"lambda={lam:g}", s=18)
    ax.set_xlabel("travel time (s)")
    ax.set_ylabel("wheel energy (kWh)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def emit_report(reports: Sequence[ExperimentReport], out_dir: str | Path, trace=None,
                corridor=None, fmt: str = "png") -> list[Path]:
    """Write the report CSV and, given a trace, the three standard plots."""
    if not reports:
        raise ValueError("no reports to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [write_reports_csv(reports, out / "reports.csv")]
    if trace is not None:
        if corridor is None:
            raise ValueError("velocity plot needs the corridor")
        files.append(plot_velocity(trace, corridor, out / f"velocity.{fmt}"))
        files.append(plot_cumulative_energy(trace, out / f"energy.{fmt}"))
        files.append(plot_pareto(reports, out / f"pareto.{fmt}"))
    return files
