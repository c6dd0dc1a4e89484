import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridplan.netmodel import (CaseError, ContingencyState, ExpansionPlan,
                               PlanError, bundled_case, demand_for_year,
                               network_from_dict, realize_topology)


def test_garver_case_loads(garver):
    assert garver.n_bus == 6
    assert len(garver.corridors) == 15
    assert garver.p_load.sum() == pytest.approx(760.0)
    assert garver.q_load.sum() == pytest.approx(152.0)
    # green-field: no existing circuits
    assert all(c.existing == 0 for c in garver.corridors)


def test_ieee24_case_loads(ieee24):
    assert len(ieee24.corridors) == 41
    assert all(c.max_new == 3 for c in ieee24.corridors)
    assert ieee24.p_load.sum() == pytest.approx(8550.0)
    assert ieee24.q_load.sum() == pytest.approx(1740.0)
    # catalog numbering used in reports: 13 = 6-10, 14 = 7-8, 21 = 11-13
    assert ieee24.corridors[12].key == "6-10"
    assert ieee24.corridors[13].key == "7-8"
    assert ieee24.corridors[20].key == "11-13"


def test_ieee118_case_loads(ieee118):
    assert len(ieee118.corridors) == 186
    assert ieee118.p_load.sum() == pytest.approx(3733.07, abs=0.01)
    assert ieee118.q_load.sum() == pytest.approx(1442.98, abs=0.01)
    pairs = {(min(c.from_bus, c.to_bus), max(c.from_bus, c.to_bus))
             for c in ieee118.corridors}
    assert len(pairs) == 179
    assert sum(1 for c in ieee118.corridors if c.cls == "b") == 7


def test_case_validation_errors(garver):
    raw = {
        "meta": {"name": "bad", "horizon": 1, "growth_factors": [1.0],
                 "discount_factors": [1.0]},
        "buses": [{"id": 1, "type": "slack"}, {"id": 2, "type": "pq"}],
        "generators": [{"bus": 1, "p_min": 0, "p_max": 10, "q_min": -5, "q_max": 5}],
        "loads": [{"bus": 2, "p": 1, "q": 0}],
        "corridors": [{"from": 1, "to": 3, "x": 0.1, "rating": 10, "cost": 1}],
    }
    with pytest.raises(CaseError, match="endpoint"):
        network_from_dict(raw)
    raw["corridors"] = [{"from": 1, "to": 2, "x": 0.1, "rating": -10, "cost": 1}]
    with pytest.raises(CaseError, match="rating"):
        network_from_dict(raw)
    raw["corridors"] = [{"from": 1, "to": 2, "x": 0.1, "rating": 10, "cost": 1}]
    raw["loads"] = [{"bus": 9, "p": 1, "q": 0}]
    with pytest.raises(CaseError, match="unknown bus"):
        network_from_dict(raw)


def test_unknown_bundled_case():
    with pytest.raises(CaseError):
        bundled_case("nope")


def test_demand_for_year_garver(garver):
    p, q = demand_for_year(garver, 1)
    assert p.sum() == pytest.approx(760.0)
    assert q.sum() == pytest.approx(152.0)
    with pytest.raises(ValueError):
        demand_for_year(garver, 4)


def test_demand_identity_growth(two_bus):
    net = two_bus()
    raw_growth = net.horizon.growth
    assert raw_growth == (1.0,)
    p1, _ = demand_for_year(net, 1)
    assert p1.sum() == pytest.approx(100.0)


def test_demand_compounding(garver):
    # 10%/yr compounding variant: year-2 totals are 836 / 167.2
    raw = json.loads(json.dumps({
        "meta": {"name": "g", "horizon": 3,
                 "growth_factors": [1.0, 1.1, 1.21],
                 "discount_factors": [1.0, 1.0, 1.0]},
    }))
    import dataclasses
    from gridplan.netmodel import Horizon
    net = dataclasses.replace(garver, horizon=Horizon(3, (1.0, 1.1, 1.21),
                                                      (1.0, 1.0, 1.0)))
    p, q = demand_for_year(net, 2)
    assert p.sum() == pytest.approx(836.0)
    assert q.sum() == pytest.approx(167.2)


def test_realize_topology_zero_plan(garver_existing):
    plan = ExpansionPlan.empty(15, 3)
    topo = realize_topology(garver_existing, plan, 1)
    assert topo.counts.sum() == 6  # the six classic in-service circuits
    assert len(topo.in_service()) == 6


def test_realize_topology_green_field_addition(garver):
    plan = ExpansionPlan.from_additions(garver, {"2-6": [2, 0, 0]})
    topo = realize_topology(garver, plan, 1)
    c26 = next(c for c in garver.corridors if c.key == "2-6")
    assert c26.existing == 0
    assert topo.counts[c26.id] == 2


def test_realize_topology_outage(two_bus):
    net = two_bus(existing=1, max_new=2)
    plan = ExpansionPlan.from_additions(net, {"1-2": [1]})
    st_ = ContingencyState(1, 0)
    topo = realize_topology(net, plan, 1, st_)
    assert topo.counts[0] == 1  # n0 + n - 1
    # outage on an empty corridor is rejected
    empty = ExpansionPlan.empty(1, 1)
    net2 = two_bus(existing=0)
    with pytest.raises(ValueError, match="no circuits"):
        realize_topology(net2, empty, 1, ContingencyState(1, 0))


def test_topology_is_pure(garver, table2_plan):
    before = [c.existing for c in garver.corridors]
    t1 = realize_topology(garver, table2_plan, 1)
    t2 = realize_topology(garver, table2_plan, 1)
    assert np.array_equal(t1.counts, t2.counts)
    assert [c.existing for c in garver.corridors] == before
    outage = realize_topology(garver, table2_plan, 1, ContingencyState(1, 8))
    diff = t1.counts - outage.counts
    assert diff.sum() == 1 and diff.max() == 1


def test_plan_validation(garver):
    n = np.zeros((15, 3), dtype=int)
    n[0] = [2, 1, 1]  # removed a line between years
    with pytest.raises(PlanError, match="removed"):
        ExpansionPlan(n).validate(garver)
    n = np.zeros((15, 3), dtype=int)
    n[0] = [0, 0, 9]  # beyond the cap
    with pytest.raises(PlanError, match="cap"):
        ExpansionPlan(n).validate(garver)
    with pytest.raises(PlanError, match="shape"):
        ExpansionPlan.empty(15, 2).validate(garver)


def test_plan_increments_roundtrip(garver, table2_plan):
    inc = table2_plan.increments()
    again = ExpansionPlan(np.cumsum(inc, axis=1))
    assert np.array_equal(again.n, table2_plan.n)
    assert inc.sum() == 10  # 8 + 0 + 2 lines


@given(st.lists(st.lists(st.integers(min_value=-3, max_value=8),
                         min_size=3, max_size=3), min_size=15, max_size=15))
@settings(max_examples=50, deadline=None)
def test_plan_monotonicity_and_caps_via_repair(rows):
    # repair output always satisfies the plan invariants
    from gridplan import mabc
    net = bundled_case("garver6")
    space = mabc.SearchSpace(
        n_corridors=15, years=3, corridor_ids=tuple(range(15)),
        caps=np.array([c.max_new for c in net.corridors]))
    plan = mabc.repair(np.array(rows), space)
    plan.validate(net)  # raises on violation
    assert np.all(np.diff(plan.n, axis=1) >= 0)
    assert np.all(plan.n[:, -1] <= space.caps)


def test_with_horizon_scales_generators(garver):
    sub = garver.with_horizon(3)
    assert sub.horizon.years == 1
    assert sub.p_load.sum() == pytest.approx(760 * 1.1)
    g6 = sub.generator_at(6)
    assert g6.p_max == pytest.approx(600 * 1.1)


def test_with_added_circuits(garver):
    added = np.zeros(15, dtype=int)
    c26 = next(c for c in garver.corridors if c.key == "2-6")
    added[c26.id] = 2
    net2 = garver.with_added_circuits(added)
    assert net2.corridors[c26.id].existing == 2
    assert net2.corridors[c26.id].max_new == c26.max_new - 2
