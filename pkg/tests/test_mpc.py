import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecoacc.mpc import (
    FALLBACK_STATUS,
    OPTIMAL_STATUS,
    SUBOPTIMAL_STATUS,
    MpcConfig,
    TerminalSets,
    build_terminal_sets,
    load_mpc_config,
    predict_front,
    solve_mpc,
)
from ecoacc.signals import GREEN, RED, YELLOW, PhaseState
from ecoacc.vehicle import AccState, braking_limits, holding_torque, plant_step

FAR = 1e4
OK = (OPTIMAL_STATUS, SUBOPTIMAL_STATUS)


@pytest.fixture(scope="module")
def cfg():
    return MpcConfig()


@pytest.fixture(scope="module")
def sets(vehicle, cfg):
    return build_terminal_sets(vehicle, cfg)


def _front(v, n=25):
    return predict_front(v, n)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        MpcConfig(N_p=1)
    with pytest.raises(ValueError):
        MpcConfig(W_phi=1.0)
    with pytest.raises(ValueError):
        MpcConfig(d_min=0.0)
    path = tmp_path / "mpc.json"
    path.write_text(json.dumps(MpcConfig(N_p=10).to_dict()))
    assert load_mpc_config(path) == MpcConfig(N_p=10)


def test_terminal_set_examples(vehicle, sets):
    assert TerminalSets(a_brake=3.0, d_min=5.0).stop_distance(12.0) == pytest.approx(24.0)
    rest = AccState(0.0, sets.d_min, 0.0)
    assert sets.in_stop_set(rest) and sets.in_follow_set(rest, 0.0)
    short = AccState(sets.stop_distance(vehicle.v_max) - 1.0, FAR, vehicle.v_max)
    assert not sets.in_stop_set(short)
    a_dec, _ = braking_limits(vehicle)
    assert 0 < sets.a_brake < -a_dec


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0.0, 15.75))
def test_chord_rows_imply_membership(sets, v):
    need = max(c * v + k for c, k in sets.stop_rows())
    assert need >= sets.stop_distance(v) - 1e-9
    assert sets.in_stop_set(AccState(need, FAR, v))


def test_predict_front():
    assert predict_front(10.0, 10).v_f == (10.0,) * 10
    assert predict_front(0.0, 5).v_f == (0.0,) * 5
    worst = predict_front(10.0, 30, mode="worst", a_brake=3.0, t_s=0.2).v_f
    assert worst[:3] == pytest.approx((10.0, 9.4, 8.8))
    assert min(worst) == 0.0 and all(b <= a for a, b in zip(worst, worst[1:]))
    with pytest.raises(ValueError):
        predict_front(1.0, 3, mode="psychic")


def test_exact_tracking_holds_speed(vehicle):
    cfg = MpcConfig(W_u=0.0, W_du=0.0)
    v = 12.0
    sol = solve_mpc(vehicle, cfg, AccState(FAR, FAR, v), PhaseState(GREEN, 10.0), v,
                    _front(v))
    assert sol.status in OK
    assert np.allclose(sol.torques, holding_torque(vehicle, v), atol=1e-3)
    assert sol.cost == pytest.approx(0.0, abs=1e-9)


def test_red_at_braking_distance(vehicle, cfg, sets):
    v = 12.0
    x = AccState(sets.stop_distance(v), FAR, v)
    sol = solve_mpc(vehicle, cfg, x, PhaseState(RED, 20.0), 15.0, _front(15.0))
    assert sol.status in OK
    assert sol.u0 < 0
    assert np.all(sol.d_TL >= -1e-6)
    assert sets.in_stop_set(AccState(sol.d_TL[-1], FAR, sol.v[-1]))
    assert np.all(sol.slack == 0.0)


def test_unrecoverable_state_falls_back(vehicle, cfg):
    sol = solve_mpc(vehicle, cfg, AccState(2.0, FAR, 15.0), PhaseState(RED, 20.0), 15.0,
                    _front(15.0))
    assert sol.status == FALLBACK_STATUS
    assert sol.u0 == vehicle.T_w_min


def test_short_horizon_matches_grid_search(vehicle):
    """N_p = 2 against a brute-force torque lattice on the same linearized model."""
    cfg = MpcConfig(N_p=2, W_u=1e-6, W_du=1e-6)
    v0, v_ref = 9.0, 10.5
    sol = solve_mpc(vehicle, cfg, AccState(FAR, FAR, v0), PhaseState(GREEN, 10.0), v_ref,
                    _front(v0, 2))
    k, m, ts = vehicle.drag_coeff, vehicle.m, cfg.t_s

    def nxt(v, u):
        drag = k * v0 * v0 + 2 * k * v0 * (v - v0)  # drag linearized at the measured speed
        return v + ts / m * (u / vehicle.R_w - m * vehicle.g * vehicle.C_r1 - drag)

    lattice = np.linspace(vehicle.T_w_min, vehicle.T_w_max, 2001)
    u0, u1 = np.meshgrid(lattice, lattice, indexing="ij")
    v1 = nxt(v0, u0)
    v2 = nxt(v1, u1)
    cost = ((v0 - v_ref) ** 2 + (v1 - v_ref) ** 2 + (v2 - v_ref) ** 2
            + 1e-6 * (u0**2 + u1**2) + 1e-6 * (u1 - u0) ** 2)
    assert sol.status in OK
    assert sol.cost == pytest.approx(cost.min(), rel=0.01)
    assert sol.cost <= cost.min() + 1e-9


def test_gap_constraint_respected(vehicle, cfg):
    x = AccState(FAR, 30.0, 14.0)
    sol = solve_mpc(vehicle, cfg, x, PhaseState(GREEN, 30.0), 15.0, _front(8.0))
    assert sol.status in OK
    assert np.all(sol.d_f[1:] >= cfg.d_min)


@settings(max_examples=60, deadline=None)
@given(v=st.floats(0.5, 15.0), d=st.floats(0.0, 120.0), phase=st.sampled_from([GREEN, RED]))
def test_no_slack_outside_yellow(vehicle, cfg, v, d, phase):
    sol = solve_mpc(vehicle, cfg, AccState(d, FAR, v), PhaseState(phase, 5.0), v, _front(v))
    assert np.all(sol.slack == 0.0)


@settings(max_examples=60, deadline=None)
@given(v=st.floats(0.5, 15.0), extra=st.floats(0.0, 60.0))
def test_yellow_stops_when_it_can(vehicle, cfg, sets, v, extra):
    x = AccState(sets.stop_distance(v) + extra, FAR, v)
    sol = solve_mpc(vehicle, cfg, x, PhaseState(YELLOW, 3.0), 15.0, _front(15.0), sets=sets)
    assert sol.status in OK
    assert sol.mode == "stop"
    assert np.all(sol.slack == 0.0)


def test_yellow_passes_when_it_cannot_stop(vehicle, cfg, sets):
    x = AccState(5.0, FAR, 14.0)
    sol = solve_mpc(vehicle, cfg, x, PhaseState(YELLOW, 3.0), 14.0, _front(14.0), sets=sets)
    assert sol.status in OK
    assert sol.mode == "yellow-go"
    assert np.all(sol.slack >= 0.0)


@settings(max_examples=300, deadline=None)
@given(v=st.floats(0.0, 15.0), dtl=st.floats(0.0, 200.0), df=st.floats(5.0, 200.0),
       vf=st.floats(0.0, 15.0))
def test_braking_keeps_terminal_sets(vehicle, sets, v, dtl, df, vf):
    """Maximum braking maps each terminal set into itself over one sample."""
    ts = sets.margin_time
    _, v_next = plant_step(vehicle, v, vehicle.T_w_min, ts)
    vf_next = max(0.0, vf - sets.a_brake * ts)
    x = AccState(dtl, df, v)
    nxt = AccState(dtl - ts * v, df + ts * (vf - v), v_next)
    if sets.in_stop_set(x):
        assert sets.in_stop_set(nxt)
    if sets.in_follow_set(x, vf):
        assert sets.in_follow_set(nxt, vf_next)


@pytest.mark.parametrize("seed", range(6))
def test_jerk_weight_monotone(vehicle, cfg, seed):
    rng = np.random.default_rng(seed)
    x = AccState(FAR, float(rng.uniform(20, 60)), float(rng.uniform(3, 14)))
    v_ref = float(rng.uniform(5, 15))
    front = _front(float(rng.uniform(5, 15)))
    jerks = []
    for w in (0.0, 1e-4, 1e-3, 1e-2, 1e-1):
        sol = solve_mpc(vehicle, replace(cfg, W_du=w), x, PhaseState(GREEN, 20.0), v_ref, front)
        assert sol.status in OK
        jerks.append(float(np.sum(np.diff(sol.torques) ** 2)))
    assert all(b <= a * (1 + 1e-6) + 1e-6 for a, b in zip(jerks, jerks[1:]))


def test_rejects_bad_reference(vehicle, cfg):
    with pytest.raises(ValueError):
        solve_mpc(vehicle, cfg, AccState(FAR, FAR, 5.0), PhaseState(GREEN, 1.0), 99.0, _front(5.0))
