import csv
from dataclasses import replace

import pytest

from ecoacc.harness import (
    ExperimentReport,
    compare_controllers,
    emit_report,
    equivalent_fuel,
    pareto_sweep,
    segment_energy,
    travel_time_clusters,
    wheel_energy,
    write_reports_csv,
    write_sweep_csv,
)
from ecoacc.sim import SimRecord, SimTrace, run_closed_loop


def _trace(vehicle, rows, ts=1.0):
    recs = [SimRecord(float(n) * ts, float(n), v, T, 0.0, 1e4, 1e4, "green", 0.0, "optimal",
                      0.0, "ok") for n, (T, v) in enumerate(rows)]
    return SimTrace(recs, {}, ts, vehicle)


def test_energy_examples(vehicle):
    assert wheel_energy(_trace(vehicle, [(0.0, 10.0)] * 50)) == 0.0
    # 1000 N at 10 m/s for 100 s is 1e6 J.
    T = 1000.0 * vehicle.R_w
    assert wheel_energy(_trace(vehicle, [(T, 10.0)] * 100)) == pytest.approx(0.2778, abs=5e-5)
    assert wheel_energy(_trace(vehicle, [(-T, 10.0)] * 100)) == 0.0


def test_segments_add_up(vehicle):
    rows = [(300.0 * ((n % 7) - 3), 5.0 + n % 4) for n in range(60)]
    tr = _trace(vehicle, rows, ts=0.2)
    total = segment_energy(tr, 0, 17) + segment_energy(tr, 17, 41) + segment_energy(tr, 41, 60)
    assert total == pytest.approx(wheel_energy(tr), rel=1e-12)


def test_equivalent_fuel():
    assert equivalent_fuel(33.7) == pytest.approx(1.0)
    assert equivalent_fuel(8.425) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        equivalent_fuel(-1.0)


def test_report_invariants():
    with pytest.raises(ValueError):
        ExperimentReport("s", "e", "eco-acc", 0, 1.0, True, None, 0.1, 0.0, 1, 1, 0, 10, 0, 0)
    with pytest.raises(ValueError):
        ExperimentReport("s", "e", "eco-acc", 0, 1.0, False, None, -0.1, 0.0, 1, 1, 0, 10, 0, 0)


def test_identical_configs_give_zero_delta(make_scenario):
    base = make_scenario(controller="acc-only", hard_cap=400.0)
    cmp = compare_controllers(base, [0, 1], {"controller": "acc-only"},
                              {"controller": "acc-only"})
    assert cmp.energy_delta == 0.0 and cmp.time_delta == 0.0
    assert len(cmp.pairs) == 2 and cmp.excluded == []
    with pytest.raises(ValueError):
        compare_controllers(base, [], {}, {})


def test_incomplete_pairs_are_excluded(make_scenario):
    base = make_scenario(controller="acc-only")
    cmp = compare_controllers(base, [3], {"hard_cap": 60.0}, {})
    assert cmp.pairs == [] and cmp.excluded == [3]


def test_emit_report(make_scenario, tmp_path):
    scn = make_scenario(seed=2)
    trace = run_closed_loop(scn)
    from ecoacc.sim import realize_environment

    rep = ExperimentReport.from_trace(trace)
    files = emit_report([rep], tmp_path, trace=trace, corridor=realize_environment(scn).corridor)
    names = sorted(f.name for f in files)
    assert names == ["energy.png", "pareto.png", "reports.csv", "velocity.png"]
    assert all(f.stat().st_size > 0 for f in files)
    rows = list(csv.DictReader(open(tmp_path / "reports.csv")))
    assert rows[0]["controller"] == "eco-acc" and rows[0]["completed"] == "True"
    assert float(rows[0]["wheel_energy_kwh"]) == pytest.approx(rep.wheel_energy_kwh, abs=1e-6)
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_reports_csv_sorted(tmp_path):
    mk = lambda lam, seed, c: ExperimentReport("s", "e", c, seed, float(lam), True, 100.0, 0.1,  # noqa: E731
                                               0.003, 10, 1, 0, 50, 0, 0)
    path = write_reports_csv([mk(5, 1, "b"), mk(0, 2, "a"), mk(0, 1, "b")], tmp_path / "r.csv")
    rows = list(csv.DictReader(open(path)))
    assert [(float(r["lam"]), r["seed"]) for r in rows] == [(0.0, "1"), (0.0, "2"), (5.0, "1")]


def test_sweep_small(make_scenario, tmp_path):
    base = make_scenario(seed=0)
    res = pareto_sweep(base, [0.0, 100.0], [0])
    assert set(res.medians) == {0.0, 100.0}
    e0, t0 = res.medians[0.0]
    e1, t1 = res.medians[100.0]
    assert e1 >= e0 and t1 <= t0
    path = write_sweep_csv(res, tmp_path / "sweep.csv")
    assert sum(1 for row in open(path) if ",median," in row) == 2
    with pytest.raises(ValueError):
        pareto_sweep(base, [], [0])


def test_clusters():
    assert travel_time_clusters([]) == []
    assert travel_time_clusters([330, 400, 331, 329]) == [[329, 330, 331], [400]]
