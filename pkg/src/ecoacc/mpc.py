"""Safety-enforcing cruise MPC.

Each sample the controller linearizes aerodynamic drag around the measured
speed, condenses the prediction model into an affine map from the torque
sequence to predicted states, and solves the resulting QP. Quadratic
terminal-set inequalities are inner-approximated by chords of ``v**2`` so
that every constraint is linear and every accepted point satisfies the
exact set.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .qp import MAX_ITER, OPTIMAL, solve_qp
from .signals import GREEN, RED, YELLOW, PhaseState
from .vehicle import AccState, VehicleParams, braking_limits

OPTIMAL_STATUS = "optimal"
SUBOPTIMAL_STATUS = "feasible-suboptimal"
FALLBACK_STATUS = "infeasible-safety-fallback"

_FEAS_TOL = 1e-6
# The gap rows ask for this much more than d_min so QP round-off cannot
# leave the applied trajectory a hair under the limit.
_GAP_MARGIN = 1e-6


@dataclass(frozen=True)
class MpcConfig:
    N_p: int = 25
    t_s: float = 0.2
    W_v: float = 1.0
    W_u: float = 1e-5
    W_du: float = 1e-3
    W_phi: float = 1e3
    d_min: float = 5.0
    n_chords: int = 8
    jerk_from_previous: bool = False
    max_iter: int = 400

    def __post_init__(self):
        if self.N_p < 2:
            raise ValueError("N_p must be at least 2")
        if self.t_s <= 0:
            raise ValueError("t_s must be positive")
        if min(self.W_v, self.W_u, self.W_du, self.W_phi) < 0:
            raise ValueError("weights must be nonnegative")
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")
        if self.W_phi < 100 * self.W_v:
            raise ValueError("W_phi must dominate W_v")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MpcConfig":
        return cls(**d)


def load_mpc_config(path: str | Path) -> MpcConfig:
    with open(path, encoding="utf-8") as fh:
        return MpcConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class TerminalSets:
    """Braking-reachability sets.

    ``a_brake`` is the (positive) deceleration assumed for both the subject
    and, in the worst case, the front vehicle. ``margin_time`` adds
    ``margin_time * v`` of distance to cover the forward-Euler discretization
    of a braking manoeuvre.
    """

    a_brake: float
    d_min: float
    margin_time: float = 0.0
    v_cap: float = 20.0
    n_chords: int = 8

    def stop_distance(self, v: float) -> float:
        return v * v / (2.0 * self.a_brake) + self.margin_time * v

    def in_stop_set(self, s: AccState) -> bool:
        return self.stop_distance(s.v) <= s.d_TL + 1e-9

    def in_follow_set(self, s: AccState, v_f: float) -> bool:
        need = max(0.0, (s.v * s.v - v_f * v_f) / (2.0 * self.a_brake) + self.margin_time * s.v)
        return self.d_min + need <= s.d_f + 1e-9

    def chords(self) -> tuple[np.ndarray, np.ndarray]:
        """Lines ``slope * v - icpt`` whose maximum over-estimates ``v**2`` on [0, v_cap]."""
        bp = np.linspace(0.0, self.v_cap, self.n_chords + 1)
        return bp[:-1] + bp[1:], bp[:-1] * bp[1:]

    def stop_rows(self) -> list[tuple[float, float]]:
        """(coef_v, const) pairs with ``coef_v * v + const <= d_TL`` implying membership."""
        slope, icpt = self.chords()
        return [(sl / (2 * self.a_brake) + self.margin_time, -ic / (2 * self.a_brake))
                for sl, ic in zip(slope, icpt)]

    def follow_rows(self, v_f: float) -> list[tuple[float, float]]:
        """(coef_v, const) with ``coef_v * v + const <= d_f`` implying membership."""
        slope, icpt = self.chords()
        rows = [(sl / (2 * self.a_brake) + self.margin_time,
                 self.d_min - (ic + v_f * v_f) / (2 * self.a_brake))
                for sl, ic in zip(slope, icpt)]
        rows.append((0.0, self.d_min))
        return rows


def build_terminal_sets(p: VehicleParams, cfg: MpcConfig) -> TerminalSets:
    """Sets from which maximum braking keeps the light and gap constraints.

    The braking deceleration is reduced by the drag the linearized prediction
    model may omit, so the sets are reachable under that model as well.
    """
    a_dec_max, _ = braking_limits(p)
    a_brake = -a_dec_max - p.drag_coeff * p.v_max**2 / p.m
    return TerminalSets(a_brake=a_brake, d_min=cfg.d_min, margin_time=cfg.t_s,
                        v_cap=1.05 * p.v_max, n_chords=cfg.n_chords)


@dataclass(frozen=True)
class FrontPrediction:
    v_f: tuple[float, ...]

    def __post_init__(self):
        if any(x < 0 for x in self.v_f):
            raise ValueError("front speeds must be nonnegative")


def predict_front(v_f: float, n: int, mode: str = "constant", a_brake: float = 0.0,
                  t_s: float = 0.2, d_f_history=None) -> FrontPrediction:
    """Front-vehicle speed over the horizon from the latest measurement.

    ``mode="constant"`` holds the last speed; ``"worst"`` brakes at ``a_brake``.
    """
    v_f = max(0.0, float(v_f))
    if mode == "constant":
        return FrontPrediction(tuple([v_f] * n))
    if mode == "worst":
        return FrontPrediction(tuple(max(0.0, v_f - a_brake * t_s * l) for l in range(n)))
    raise ValueError(f"unknown prediction mode {mode!r}")


@dataclass
class MpcSolution:
    torques: np.ndarray
    v: np.ndarray
    d_TL: np.ndarray
    d_f: np.ndarray
    slack: np.ndarray
    cost: float
    status: str
    cost_terms: dict = field(default_factory=dict)
    mode: str = "free"

    @property
    def u0(self) -> float:
        return float(self.torques[0])


class _Model:
    """Condensed affine prediction: states as functions of scaled inputs z = u / (m R_w)."""

    def __init__(self, p: VehicleParams, cfg: MpcConfig, x: AccState, v_f: np.ndarray):
        n, ts = cfg.N_p, cfg.t_s
        k = p.drag_coeff
        v0 = max(x.v, 0.0)
        c0 = p.m * p.g * p.C_r1 - k * v0 * v0
        c1 = 2.0 * k * v0
        alpha = 1.0 - ts * c1 / p.m
        gamma = -ts * c0 / p.m
        self.scale = p.m * p.R_w
        beta = ts  # per unit of z

        # v[l] = vfree[l] + Bv[l] @ z for l = 0..n
        vfree = np.empty(n + 1)
        vfree[0] = x.v
        for l in range(n):
            vfree[l + 1] = alpha * vfree[l] + gamma
        powers = alpha ** np.arange(n)
        lag = np.arange(n + 1)[:, None] - 1 - np.arange(n)[None, :]
        Bv = np.where(lag >= 0, beta * powers[np.clip(lag, 0, n - 1)], 0.0)
        self.vfree, self.Bv = vfree, Bv

        # distances use the velocity at the start of each step
        cum = ts * np.tril(np.ones((n + 1, n + 1)), -1)
        self.dtl_free = x.d_TL - cum @ vfree
        self.Bdtl = -cum @ Bv
        vf = np.asarray(v_f, dtype=float)
        vf_pad = np.append(vf, vf[-1] if vf.size else 0.0)[: n + 1]
        self.df_free = x.d_f + cum @ vf_pad - cum @ vfree
        self.Bdf = -cum @ Bv


def _fallback(p: VehicleParams, cfg: MpcConfig, x: AccState, mode: str) -> MpcSolution:
    n = cfg.N_p
    return MpcSolution(
        torques=np.full(n, p.T_w_min), v=np.full(n + 1, np.nan), d_TL=np.full(n + 1, np.nan),
        d_f=np.full(n + 1, np.nan), slack=np.zeros(max(n - 1, 0)), cost=math.inf,
        status=FALLBACK_STATUS, mode=mode,
    )


def solve_mpc(p: VehicleParams, cfg: MpcConfig, x: AccState, phase: PhaseState, v_ref: float,
              front: FrontPrediction, u_prev: float = 0.0,
              sets: TerminalSets | None = None) -> MpcSolution:
    """One receding-horizon solve; apply ``solution.u0``.

    Light constraints follow the phase measured now, held over the horizon:
    red forces ``d_TL >= 0`` and a terminal state that can still stop;
    yellow does the same when stopping is possible and otherwise softens the
    stop-bar constraint with a penalized slack; green adds nothing. The gap
    constraint holds at every predicted step, the first predicted state must
    survive a worst-case front brake, and non-red terminals must be in the
    following set.
    """
    if not 0.0 <= v_ref <= p.v_max + 1e-9:
        raise ValueError("v_ref outside [0, v_max]")
    sets = sets or build_terminal_sets(p, cfg)
    n = cfg.N_p
    vf = np.asarray(front.v_f, dtype=float)
    if vf.size < n:
        vf = np.append(vf, np.full(n - vf.size, vf[-1] if vf.size else 0.0))
    model = _Model(p, cfg, x, vf[:n])
    if phase.phase == YELLOW:
        # Stop whenever the stop problem is feasible; otherwise pass on yellow.
        sol = _solve_mode(p, cfg, x, v_ref, vf, u_prev, sets, model, "stop")
        if sol is not None:
            return sol
        mode = "yellow-go"
    else:
        mode = "stop" if phase.phase == RED else "free"
    sol = _solve_mode(p, cfg, x, v_ref, vf, u_prev, sets, model, mode)
    return sol if sol is not None else _fallback(p, cfg, x, mode)


def _solve_mode(p: VehicleParams, cfg: MpcConfig, x: AccState, v_ref: float, vf: np.ndarray,
                u_prev: float, sets: TerminalSets, model: _Model,
                mode: str) -> MpcSolution | None:
    n = cfg.N_p
    S = model.scale
    soft = mode == "yellow-go"
    n_phi = n - 1 if soft else 0
    nz = n + n_phi

    # ---- cost
    H = np.zeros((nz, nz))
    f = np.zeros(nz)
    Bv = model.Bv[1:]
    ev = model.vfree[1:] - v_ref
    H[:n, :n] += 2 * cfg.W_v * Bv.T @ Bv
    f[:n] += 2 * cfg.W_v * Bv.T @ ev
    H[:n, :n] += 2 * cfg.W_u * S * S * np.eye(n)
    D = np.zeros((n - 1, n))
    D[np.arange(n - 1), np.arange(n - 1)] = -1.0
    D[np.arange(n - 1), np.arange(1, n)] = 1.0
    H[:n, :n] += 2 * cfg.W_du * S * S * D.T @ D
    if cfg.jerk_from_previous:
        H[0, 0] += 2 * cfg.W_du * S * S
        f[0] += -2 * cfg.W_du * S * u_prev
    if soft:
        H[n:, n:] += 2 * cfg.W_phi * np.eye(n_phi)
    H += 1e-10 * np.eye(nz)

    # ---- constraints  A @ z >= b, assembled block-wise over the u columns
    blocks: list[np.ndarray] = []
    rhs: list[np.ndarray] = []

    def add(coef_u, lo):
        blocks.append(np.atleast_2d(coef_u))
        rhs.append(np.atleast_1d(np.asarray(lo, dtype=float)))

    z_lo, z_hi = p.T_w_min / S, p.T_w_max / S
    eye = np.eye(n)
    add(eye, np.full(n, z_lo))
    add(-eye, np.full(n, -z_hi))
    Bv1, vf1_ = model.Bv[1:], model.vfree[1:]
    add(Bv1, -vf1_)
    add(-Bv1, vf1_ - p.v_max)
    add(model.Bdf[1:], cfg.d_min + _GAP_MARGIN - model.df_free[1:])

    def set_rows(B_d, d_free, B_v, v_free, pairs):
        cv = np.array([r[0] for r in pairs])
        c = np.array([r[1] for r in pairs])
        add(B_d[None, :] - cv[:, None] * B_v[None, :], cv * v_free + c - d_free)

    # first predicted state robust to a full front brake during this sample
    vf1 = max(0.0, vf[0] - sets.a_brake * cfg.t_s)
    set_rows(model.Bdf[1], model.df_free[1], model.Bv[1], model.vfree[1], sets.follow_rows(vf1))
    if mode == "stop":
        add(model.Bdtl[1:], -model.dtl_free[1:])
        set_rows(model.Bdtl[n], model.dtl_free[n], model.Bv[n], model.vfree[n], sets.stop_rows())
    else:
        set_rows(model.Bdf[n], model.df_free[n], model.Bv[n], model.vfree[n],
                 sets.follow_rows(vf[n - 1]))
    A = np.vstack(blocks)
    b = np.concatenate(rhs)
    if soft:
        # d_TL[l] + phi[l] >= 0 for l = 1..n-1, and phi >= 0
        A = np.hstack([A, np.zeros((len(A), n_phi))])
        eye_phi = np.eye(n_phi)
        A = np.vstack([A, np.hstack([model.Bdtl[1:n], eye_phi]),
                       np.hstack([np.zeros((n_phi, n)), eye_phi])])
        b = np.concatenate([b, -model.dtl_free[1:n], np.zeros(n_phi)])
    A, b = _prune(A, b, n, z_lo, z_hi)
    res = solve_qp(H, f, A, b, max_iter=cfg.max_iter)
    if res.status == OPTIMAL:
        status = OPTIMAL_STATUS
    elif res.status == MAX_ITER and (A.size == 0 or np.min(A @ res.x - b) >= -_FEAS_TOL):
        status = SUBOPTIMAL_STATUS
    else:
        return None

    z = res.x
    u = np.clip(z[:n] * S, p.T_w_min, p.T_w_max)
    phi = np.maximum(z[n:], 0.0) if soft else np.zeros(n - 1)
    zu = u / S
    v = model.vfree + model.Bv @ zu
    dtl = model.dtl_free + model.Bdtl @ zu
    dfp = model.df_free + model.Bdf @ zu
    terms = {
        "tracking": float(cfg.W_v * np.sum((v - v_ref) ** 2)),
        "input": float(cfg.W_u * np.sum(u**2)),
        "jerk": float(cfg.W_du * np.sum(np.diff(u) ** 2)),
        "slack": float(cfg.W_phi * np.sum(phi**2)),
    }
    if cfg.jerk_from_previous:
        terms["jerk"] += float(cfg.W_du * (u[0] - u_prev) ** 2)
    return MpcSolution(torques=u, v=v, d_TL=dtl, d_f=dfp, slack=phi,
                       cost=float(sum(terms.values())), status=status, cost_terms=terms,
                       mode=mode)


def _prune(A: np.ndarray, b: np.ndarray, n: int, z_lo: float, z_hi: float):
    """Drop rows implied by the input box (slack columns are unbounded above)."""
    if A.size == 0:
        return A, b
    Au = A[:, :n]
    lo = np.where(Au > 0, Au * z_lo, Au * z_hi).sum(axis=1)
    Ap = A[:, n:]
    touches_slack = (Ap != 0).any(axis=1) if Ap.size else np.zeros(len(A), dtype=bool)
    box_row = (np.count_nonzero(A, axis=1) == 1) & (np.abs(A[:, :n]).sum(axis=1) > 0)
    needed = box_row | touches_slack | (lo < b - 1e-9)
    return A[needed], b[needed]
