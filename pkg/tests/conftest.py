import json

import numpy as np
import pytest

from gridplan.netmodel import ExpansionPlan, bundled_case, network_from_dict


@pytest.fixture(scope="session")
def garver():
    return bundled_case("garver6")


@pytest.fixture(scope="session")
def garver_existing():
    return bundled_case("garver6_existing")


@pytest.fixture(scope="session")
def ieee24():
    return bundled_case("ieee24")


@pytest.fixture(scope="session")
def ieee118():
    return bundled_case("ieee118")


@pytest.fixture(scope="session")
def table2_plan(garver):
    """Base-case benchmark plan: 8 lines in year 1, 2 more in year 3."""
    return ExpansionPlan.from_additions(garver, {
        "1-5": [1, 0, 0], "2-3": [1, 0, 0], "2-6": [2, 0, 1],
        "3-5": [2, 0, 1], "4-6": [2, 0, 0]})


@pytest.fixture(scope="session")
def table3_plan(garver):
    """Security benchmark plan: 11 + 4 + 1 lines."""
    return ExpansionPlan.from_additions(garver, {
        "1-2": [1, 0, 1], "2-6": [3, 0, 0], "3-4": [1, 0, 0],
        "3-5": [4, 0, 0], "4-6": [2, 1, 0], "2-3": [0, 3, 0]})


def two_bus_net(x=0.1, r=0.0, b=0.0, bus2="pq", load=(100.0, 0.0),
                rating=200.0, existing=1, max_new=2):
    gens = [{"bus": 1, "p_min": -500, "p_max": 500, "q_min": -500, "q_max": 500}]
    buses = [{"id": 1, "type": "slack"}, {"id": 2, "type": bus2}]
    if bus2 == "pv":
        gens.append({"bus": 2, "p_min": -500, "p_max": 500,
                     "q_min": -500, "q_max": 500})
    return network_from_dict({
        "meta": {"name": "two-bus", "base_mva": 100.0, "horizon": 1,
                 "growth_factors": [1.0], "discount_factors": [1.0]},
        "buses": buses,
        "generators": gens,
        "loads": [{"bus": 2, "p": load[0], "q": load[1]}],
        "corridors": [{"from": 1, "to": 2, "r": r, "x": x, "b": b,
                       "rating": rating, "cost": 10.0,
                       "max_new": max_new, "existing": existing}],
    })


@pytest.fixture
def two_bus():
    return two_bus_net
