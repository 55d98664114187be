"""Longitudinal vehicle dynamics.

Two discretizations of the same point-mass model are provided:

* ``step_space`` advances (velocity, elapsed time) by a fixed distance and is
  what the eco-driving planner works with.
* ``step_time`` advances (distance to light, gap, velocity) by a fixed sample
  time and is the prediction model of the cruise controller.

Wheel torque ``T_w`` is always a torque at the wheel in N*m; the traction
force is ``T_w / R_w``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import StepInfeasibleError, TorqueBoundsError

_TORQUE_TOL = 1e-9


@dataclass(frozen=True)
class VehicleParams:
    m: float
    R_w: float
    A: float
    C_d: float
    C_r1: float
    C_r2: float
    rho: float
    g: float
    T_w_min: float
    T_w_max: float
    a_min: float
    a_max: float
    v_min_plan: float
    v_max: float

    def __post_init__(self):
        if not (self.m > 0 and self.R_w > 0 and self.A > 0 and self.rho > 0):
            raise ValueError("m, R_w, A and rho must be positive")
        if not self.T_w_min < 0 < self.T_w_max:
            raise ValueError("need T_w_min < 0 < T_w_max")
        if not self.a_min < 0 < self.a_max:
            raise ValueError("need a_min < 0 < a_max")
        if not 0 < self.v_min_plan < self.v_max:
            raise ValueError("need 0 < v_min_plan < v_max")

    @property
    def drag_coeff(self) -> float:
        """k such that aerodynamic drag force is k * v**2."""
        return 0.5 * self.rho * self.A * self.C_d

    def with_(self, **changes) -> "VehicleParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleParams":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        if missing:
            raise ValueError(f"vehicle parameters missing fields: {', '.join(missing)}")
        return cls(**{n: float(data[n]) for n in names})


def load_vehicle(path: str | Path) -> VehicleParams:
    with open(path, encoding="utf-8") as fh:
        return VehicleParams.from_dict(json.load(fh))


def default_vehicle() -> VehicleParams:
    """Representative mid-size sedan; absolute energy figures depend on it."""
    return load_vehicle(Path(__file__).parent / "data" / "vehicle.json")


@dataclass(frozen=True)
class PlanState:
    v: float
    t: float


@dataclass(frozen=True)
class AccState:
    d_TL: float
    d_f: float
    v: float


def check_torque(p: VehicleParams, T_w: float) -> None:
    if T_w < p.T_w_min - _TORQUE_TOL or T_w > p.T_w_max + _TORQUE_TOL:
        raise TorqueBoundsError(
            f"wheel torque {T_w:g} N*m outside [{p.T_w_min:g}, {p.T_w_max:g}]"
        )


def traction_accel(p: VehicleParams, v: float, T_w: float, theta: float = 0.0) -> float:
    """Longitudinal acceleration with speed-dependent rolling resistance.

    A stationary vehicle whose traction does not overcome static rolling
    resistance stays put (no backward roll).
    """
    if v < 0:
        raise ValueError("velocity must be nonnegative")
    check_torque(p, T_w)
    drive = T_w / (p.m * p.R_w)
    a = (
        drive
        - p.g * (math.cos(theta) * (p.C_r1 + p.C_r2 * v) - math.sin(theta))
        - p.rho * p.A * p.C_d * v * v / (2.0 * p.m)
    )
    if v == 0.0 and drive <= p.g * p.C_r1:
        a = max(a, 0.0)
    return a


def step_space(p: VehicleParams, s: PlanState, T_w: float, ds: float) -> PlanState:
    """Advance the planner state by one position step ``ds``."""
    if s.v <= 0:
        raise StepInfeasibleError("spatial dynamics need v > 0")
    if ds == 0:
        return s
    a = traction_accel(p, s.v, T_w)
    v_next = s.v + a * ds / s.v
    if v_next <= 0:
        raise StepInfeasibleError(
            f"deceleration {a:.3g} m/s^2 stops the vehicle within a {ds:g} m step"
        )
    return PlanState(v=v_next, t=s.t + ds / v_next)


def resistance_force(p: VehicleParams, v: float) -> float:
    """Road-load force of the cruise-control model (constant rolling term)."""
    if v < 0:
        raise ValueError("velocity must be nonnegative")
    return p.m * p.g * p.C_r1 + p.drag_coeff * v * v


def step_time(
    p: VehicleParams, s: AccState, T_w: float, v_f: float, t_s: float
) -> AccState:
    if t_s <= 0:
        raise ValueError("sample time must be positive")
    v = s.v
    v_next = v + (t_s / p.m) * (T_w / p.R_w - resistance_force(p, v))
    return AccState(
        d_TL=s.d_TL - t_s * v,
        d_f=s.d_f + t_s * (v_f - v),
        v=max(0.0, v_next),
    )


def plant_step(p: VehicleParams, v: float, T_w: float, t_s: float) -> tuple[float, float]:
    """Full nonlinear plant over one sample: returns (distance travelled, new v).

    Uses the speed-dependent rolling resistance of ``traction_accel``, so it
    differs from the controller's prediction model by design. Torque is
    saturated to the admissible range rather than rejected.
    """
    T_w = min(max(T_w, p.T_w_min), p.T_w_max)
    a = traction_accel(p, v, T_w)
    v_next = max(0.0, v + t_s * a)
    return t_s * v, v_next


def braking_limits(p: VehicleParams) -> tuple[float, float]:
    """Maximum deceleration (negative) and worst-case time to stop from v_max."""
    a_dec_max = p.T_w_min / (p.m * p.R_w) - p.g * p.C_r1
    return a_dec_max, -p.v_max / a_dec_max


def holding_torque(p: VehicleParams, v: float) -> float:
    """Torque that keeps ``step_time`` at constant speed."""
    return p.R_w * resistance_force(p, v)
