import numpy as np
import pytest

from gridplan import planner as pl
from gridplan.contingency import enumerate_contingencies, n1_verify, security_screen
from gridplan.netmodel import (ContingencyState, ExpansionPlan,
                               realize_topology)


def test_enumerate_garver_existing(garver_existing):
    topo = realize_topology(garver_existing, ExpansionPlan.empty(15, 3), 1)
    states = enumerate_contingencies(topo)
    assert len(states) == 6  # six in-service corridors in the classic case
    assert all(s.k >= 1 for s in states)


def test_enumerate_empty_topology(garver):
    topo = realize_topology(garver, ExpansionPlan.empty(15, 3), 1)
    assert enumerate_contingencies(topo) == []


def test_enumerate_sub_corridors_distinct(ieee118):
    plan = ExpansionPlan.empty(len(ieee118.corridors), 3)
    topo = realize_topology(ieee118, plan, 1)
    states = enumerate_contingencies(topo)
    assert len(states) == 186  # one per corridor incl. both classes
    pair_ids = [s.corridor_id for s in states
                if ieee118.corridors[s.corridor_id].key.startswith("49-54")]
    assert len(pair_ids) == 2  # the two line classes outage separately


def test_n1_verify_table3(garver, table3_plan):
    rows = pl.plan_year_values(garver, table3_plan, security=True, q_rc={})
    q_rc = {r["year"]: r["q_rc"] for r in rows if r["q_rc"]}
    ok, report = n1_verify(garver, table3_plan, q_rc)
    assert ok
    # one verdict per state plus the base case, every year
    for y in (1, 2, 3):
        states = report.n_states[y]
        assert sum(1 for (yy, _k) in report.verdicts if yy == y) == states + 1


def test_n1_verify_rejects_base_only_plan(garver, table2_plan):
    # the base-case optimum was never meant to survive outages
    ok, report = n1_verify(garver, table2_plan, {})
    assert not ok


def test_n1_verify_rejects_empty_plan(garver):
    ok, _ = n1_verify(garver, ExpansionPlan.empty(15, 3), {})
    assert not ok


def test_screen_determinism(garver, table2_plan):
    r1 = security_screen(garver, table2_plan, years=[1])
    r2 = security_screen(garver, table2_plan, years=[1])
    assert r1.verdicts == r2.verdicts
    assert r1.pc_viol == r2.pc_viol


def test_screen_pc_viol_subset(garver, table2_plan):
    report = security_screen(garver, table2_plan)
    all_ids = {c.id for c in garver.corridors}
    assert report.pc_viol <= all_ids


def test_screen_island_verdict_not_exception(two_bus):
    # a plan whose only contingency islands the load: verdict False, no raise
    net = two_bus(existing=1, load=(50.0, 10.0))
    plan = ExpansionPlan.empty(1, 1)
    report = security_screen(net, plan)
    assert report.verdicts[(1, 1)] is False


def test_reinforcement_monotonicity_spotcheck(garver, table3_plan):
    # adding a circuit never flips a feasible contingency verdict to
    # infeasible on this instance
    rows = pl.plan_year_values(garver, table3_plan, security=True, q_rc={})
    q_rc = {r["year"]: r["q_rc"] for r in rows if r["q_rc"]}
    base_report = security_screen(garver, table3_plan, q_rc=q_rc, years=[1])
    n = table3_plan.n.copy()
    c15 = next(c for c in garver.corridors if c.key == "1-5")
    n[c15.id] += 1
    stronger = ExpansionPlan(n)
    rep2 = security_screen(garver, stronger, q_rc=q_rc, years=[1])
    for key, verdict in base_report.verdicts.items():
        if verdict and key in rep2.verdicts:
            assert rep2.verdicts[key], key
