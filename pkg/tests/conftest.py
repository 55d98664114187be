"""Shared fixtures for the ecoacc test suite."""

from __future__ import annotations

import pytest

from ecoacc.signals import DelayDistribution, Intersection, default_corridor
from ecoacc.vehicle import default_vehicle


@pytest.fixture(scope="session")
def vehicle():
    return default_vehicle()


@pytest.fixture(scope="session")
def corridor():
    return default_corridor()


@pytest.fixture(scope="session")
def light():
    """60 s cycle: green 30, yellow 5, red 25, no queue delay."""
    return Intersection(position=100.0, cycle=60.0, red=25.0, green=30.0, yellow=5.0)


@pytest.fixture(scope="session")
def small_delay():
    return DelayDistribution((0.0, 1.0, 2.0), (0.5, 0.3, 0.2))


def _packaged(name):
    from importlib import resources

    return resources.files("ecoacc") / "data" / name


@pytest.fixture(scope="session")
def make_scenario():
    """Factory for scenarios built from the packaged configuration files."""
    import json
    from dataclasses import replace

    from ecoacc.mpc import MpcConfig
    from ecoacc.planner import PlannerConfig
    from ecoacc.signals import load_corridor
    from ecoacc.sim import Scenario, TrafficConfig
    from ecoacc.vehicle import load_vehicle

    corridor = load_corridor(str(_packaged("corridor.json")))
    veh = load_vehicle(str(_packaged("vehicle.json")))
    pd = json.loads(_packaged("planner.json").read_text())
    pd["N"] = int(round(corridor.length / pd["ds"]))
    planner = PlannerConfig.from_dict(pd)
    mpc = MpcConfig.from_dict(json.loads(_packaged("mpc.json").read_text()))
    traffic = TrafficConfig.from_dict(json.loads(_packaged("traffic.json").read_text()))

    def build(traffic_on=False, seed=0, controller="eco-acc", **kw):
        scn = Scenario(corridor, veh, planner, mpc, traffic if traffic_on else None,
                       seed=seed, controller=controller)
        return replace(scn, **kw) if kw else scn

    return build
