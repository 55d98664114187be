"""Signalized corridor: fixed-cycle light schedules and queue-delay statistics.

Each light cycles green -> yellow -> red; ``offset`` is the absolute time of
a green onset. The queue-induced delay after green onset is described by an
empirical distribution whose generalized inverse CDF parametrizes the
planner's chance constraints.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDistributionError

GREEN, YELLOW, RED = "green", "yellow", "red"
_PMF_TOL = 1e-9
_CDF_TOL = 1e-12


@dataclass(frozen=True)
class DelayDistribution:
    support: tuple[float, ...]
    pmf: tuple[float, ...]

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        p = np.asarray(self.pmf, dtype=float)
        if s.size == 0:
            raise EmptyDistributionError("delay distribution has no support")
        if s.shape != p.shape:
            raise ValueError("support and pmf lengths differ")
        if np.any(s < 0) or np.any(np.diff(s) <= 0):
            raise ValueError("support must be nonnegative and strictly ascending")
        if np.any(p < 0) or abs(p.sum() - 1.0) > _PMF_TOL:
            raise ValueError("pmf must be nonnegative and sum to 1")
        object.__setattr__(self, "support", tuple(float(x) for x in s))
        object.__setattr__(self, "pmf", tuple(float(x) for x in p))

    @classmethod
    def point(cls, value: float = 0.0) -> "DelayDistribution":
        return cls((float(value),), (1.0,))

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf))

    @property
    def std(self) -> float:
        s = np.asarray(self.support)
        return float(math.sqrt(max(np.dot(s * s, self.pmf) - self.mean**2, 0.0)))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(np.asarray(self.support), size=size, p=np.asarray(self.pmf))

    def to_dict(self) -> dict:
        return {"support": list(self.support), "pmf": list(self.pmf)}


def delay_quantile(d: DelayDistribution, eta: float) -> float:
    """Generalized inverse CDF evaluated at ``1 - eta``.

    Returns the smallest support point whose CDF reaches ``1 - eta``.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if len(d.support) == 0:
        raise EmptyDistributionError("empty delay distribution")
    level = 1.0 - eta
    cdf = d.cdf
    idx = int(np.searchsorted(cdf, level - _CDF_TOL, side="left"))
    return d.support[min(idx, len(d.support) - 1)]


def fit_delay_distribution(samples: Sequence[float], bin_width: float) -> DelayDistribution:
    """Histogram PMF with bins centred on multiples of ``bin_width``."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise EmptyDistributionError("no delay samples")
    if np.any(x < 0):
        raise ValueError("delay samples must be nonnegative")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    idx = np.rint(x / bin_width).astype(np.int64)
    keys, counts = np.unique(idx, return_counts=True)
    pmf = counts / counts.sum()
    pmf = pmf / pmf.sum()
    return DelayDistribution(tuple(keys * bin_width), tuple(pmf))


def read_delay_csv(path: str | Path) -> list[float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [float(row[0]) for row in csv.reader(fh) if row and row[0].strip()]


# Max-entropy PMF on a 0.5 s grid with mean 1.96 s and std 1.033 s.
DEFAULT_DELAY = DelayDistribution(
    tuple(0.5 * k for k in range(11)),
    (0.043, 0.084, 0.133, 0.173, 0.184, 0.159, 0.112, 0.065, 0.031, 0.012, 0.004),
)


@dataclass(frozen=True)
class PhaseState:
    phase: str
    remaining: float


@dataclass(frozen=True)
class Intersection:
    position: float
    cycle: float
    red: float
    green: float
    yellow: float
    offset: float = 0.0
    delay: DelayDistribution = field(default_factory=lambda: DelayDistribution.point(0.0))

    def __post_init__(self):
        if min(self.red, self.green, self.yellow) < 0:
            raise ValueError("phase durations must be nonnegative")
        if abs(self.red + self.green + self.yellow - self.cycle) > 1e-9:
            raise ValueError("red + green + yellow must equal the cycle length")
        if self.cycle <= 0:
            raise ValueError("cycle must be positive")
        if self.delay.support[-1] > self.green + 1e-9:
            raise ValueError("delay support must lie within the green duration")

    def cycle_time(self, t: float) -> float:
        """Seconds elapsed since the most recent green onset."""
        return (t - self.offset) % self.cycle

    def to_dict(self) -> dict:
        return {
            "position": self.position,
            "cycle": self.cycle,
            "red": self.red,
            "green": self.green,
            "yellow": self.yellow,
            "offset": self.offset,
            "delay": self.delay.to_dict(),
        }


def phase_at(i: Intersection, t: float) -> PhaseState:
    tau = i.cycle_time(t)
    if tau < i.green:
        return PhaseState(GREEN, i.green - tau)
    if tau < i.green + i.yellow:
        return PhaseState(YELLOW, i.green + i.yellow - tau)
    return PhaseState(RED, i.cycle - tau)


def remaining_red(i: Intersection, t_arrival: float) -> float:
    """Time until the next green onset; yellow is planned as red."""
    tau = i.cycle_time(t_arrival)
    if tau < i.green:
        return 0.0
    return i.cycle - tau


def feasible_crossing(i: Intersection, t_arrival: float, eta: float, quantile: float | None = None) -> bool:
    """Whether crossing at ``t_arrival`` clears the queue with the required reliability.

    ``quantile`` may be passed to skip recomputing the delay quantile.
    """
    q = delay_quantile(i.delay, eta) if quantile is None else quantile
    tau = i.cycle_time(t_arrival)
    return q <= tau < i.green


@dataclass(frozen=True)
class Corridor:
    length: float
    intersections: tuple[Intersection, ...]

    def __post_init__(self):
        object.__setattr__(self, "intersections", tuple(self.intersections))
        pos = [x.position for x in self.intersections]
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("intersection positions must be strictly increasing")
        if pos and (pos[0] < 0 or pos[-1] >= self.length):
            raise ValueError("intersections must lie inside [0, length)")

    def check_vehicle(self, t_stop_max: float) -> None:
        for k, x in enumerate(self.intersections):
            if x.yellow < t_stop_max:
                raise ValueError(
                    f"intersection {k}: yellow {x.yellow:g} s shorter than the "
                    f"vehicle's worst-case stopping time {t_stop_max:.3g} s"
                )

    def next_intersection(self, position: float) -> int | None:
        """Index of the first stop bar strictly ahead of ``position``."""
        for k, x in enumerate(self.intersections):
            if x.position > position:
                return k
        return None

    def with_offsets(self, offsets: Sequence[float]) -> "Corridor":
        return replace(
            self,
            intersections=tuple(
                replace(x, offset=float(o)) for x, o in zip(self.intersections, offsets)
            ),
        )

    def shifted(self, dt: float) -> "Corridor":
        """Same corridor with every schedule delayed by ``dt`` seconds."""
        return self.with_offsets([x.offset + dt for x in self.intersections])

    def to_dict(self) -> dict:
        return {"length": self.length, "intersections": [x.to_dict() for x in self.intersections]}


@dataclass(frozen=True)
class SignalSample:
    alphas: tuple[float, ...]
    offsets: tuple[float, ...]


def sample_schedule(c: Corridor, seed: int, randomize_offsets: bool = True) -> SignalSample:
    """Draw one realization of per-intersection delays and phase offsets."""
    rng = np.random.default_rng(seed)
    alphas = tuple(float(x.delay.sample(rng)) for x in c.intersections)
    if randomize_offsets:
        offsets = tuple(float(rng.uniform(0.0, x.cycle)) for x in c.intersections)
    else:
        offsets = tuple(x.offset for x in c.intersections)
    return SignalSample(alphas=alphas, offsets=offsets)


# Stop-bar positions of the reference route; cycle splits are synthetic.
DEFAULT_POSITIONS = (42.0, 351.0, 610.0, 1190.0, 1509.0, 1764.0, 2050.0, 2456.0)
_DEFAULT_SPLITS = (
    # cycle, green, yellow
    (60.0, 30.0, 4.0),
    (70.0, 34.0, 4.0),
    (65.0, 32.0, 4.0),
    (80.0, 40.0, 4.0),
    (70.0, 36.0, 4.0),
    (60.0, 28.0, 4.0),
    (75.0, 38.0, 4.0),
    (70.0, 34.0, 4.0),
)
_DEFAULT_OFFSETS = (10.0, 25.0, 40.0, 5.0, 50.0, 20.0, 35.0, 15.0)


def default_corridor(delay: DelayDistribution = DEFAULT_DELAY) -> Corridor:
    inters = []
    for pos, (cyc, g, y), off in zip(DEFAULT_POSITIONS, _DEFAULT_SPLITS, _DEFAULT_OFFSETS):
        inters.append(
            Intersection(position=pos, cycle=cyc, green=g, yellow=y, red=cyc - g - y,
                         offset=off, delay=delay)
        )
    return Corridor(length=2600.0, intersections=tuple(inters))


def _delay_from_entry(entry: dict, base: Path) -> DelayDistribution:
    if "delay" in entry:
        d = entry["delay"]
        return DelayDistribution(tuple(d["support"]), tuple(d["pmf"]))
    if "delay_csv" in entry:
        samples = read_delay_csv(base / entry["delay_csv"])
        return fit_delay_distribution(samples, float(entry.get("bin_width", 0.5)))
    return DEFAULT_DELAY


def corridor_from_dict(data: dict, base: str | Path = ".") -> Corridor:
    base = Path(base)
    inters = []
    for e in data["intersections"]:
        cycle = float(e["cycle"])
        green = float(e["green"])
        yellow = float(e["yellow"])
        red = float(e.get("red", cycle - green - yellow))
        inters.append(
            Intersection(
                position=float(e["position"]), cycle=cycle, red=red, green=green,
                yellow=yellow, offset=float(e.get("offset", 0.0)),
                delay=_delay_from_entry(e, base),
            )
        )
    return Corridor(length=float(data["length"]), intersections=tuple(inters))


def load_corridor(path: str | Path) -> Corridor:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return corridor_from_dict(json.load(fh), base=path.parent)
