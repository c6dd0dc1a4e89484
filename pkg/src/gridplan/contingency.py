"""N-1 enumeration, security screening, and full-plan verification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dispatch as dp
from .netmodel import ContingencyState, ExpansionPlan, Network, Topology, realize_topology


def enumerate_contingencies(topology: Topology):
    """One outage state per corridor (sub-corridors counted separately)
    carrying at least one circuit; the intact state k=0 is not included."""
    states = []
    k = 1
    for c in topology.net.corridors:
        if topology.counts[c.id] > 0:
            states.append(ContingencyState(k, c.id))
            k += 1
    return states


@dataclass
class SecurityReport:
    """Outcome of screening one plan over the horizon."""

    verdicts: dict  # (year, k) -> bool, k = 0 is the base case
    pc_viol: frozenset  # corridor ids with any pre-redispatch flow violation
    n_states: dict  # year -> contingency count (excluding base)
    base_results: dict  # year -> DispatchResult
    violated_by: dict = field(default_factory=dict)  # corridor id -> [(year, k)]

    def all_feasible(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        return {
            "feasible": self.all_feasible(),
            "pc_viol": sorted(self.pc_viol),
            "states_per_year": {str(y): n for y, n in sorted(self.n_states.items())},
            "verdicts": {f"y{y}k{k}": bool(v)
                         for (y, k), v in sorted(self.verdicts.items())},
        }


def _q_net(net: Network, q_load, q_rc_by_bus):
    q = q_load.copy()
    for bus, mvar in (q_rc_by_bus or {}).items():
        q[net.bus_index[bus]] -= mvar
    return q


def security_screen(net: Network, plan: ExpansionPlan, q_rc=None,
                    years=None, early_abort=False, counters=None) -> SecurityReport:
    """Screen a plan: base OPF per year, then every N-1 state.

    PC_viol collects corridors whose flow limit is violated at the
    pre-redispatch (zero-redispatch) linearized point of any contingency,
    before the contingency OPF is allowed to shift anything; this keeps the
    set independent of the redispatch optimizer. Verdicts record contingency
    OPF feasibility. With ``early_abort`` the sweep stops at the first
    infeasible state of a year (the screening used for set construction
    leaves it off to see every state).
    """
    years = years or range(1, net.horizon.years + 1)
    verdicts = {}
    pc_viol = set()
    n_states = {}
    base_results = {}
    violated_by: dict = {}
    corr_by_key = {c.key: c.id for c in net.corridors}
    for y in years:
        p_load = net.p_load * net.horizon.growth[y - 1]
        q_load = net.q_load * net.horizon.growth[y - 1]
        q_net = _q_net(net, q_load, (q_rc or {}).get(y) if isinstance(q_rc, dict) else None)
        topo = realize_topology(net, plan, y)
        base = dp.base_opf(topo, p_load, q_net)
        if counters is not None:
            counters.base_calls += 1
        base_results[y] = base
        verdicts[(y, 0)] = base.feasible
        states = enumerate_contingencies(topo)
        n_states[y] = len(states)
        if not base.feasible and early_abort:
            continue
        warm = base.controls
        anchor = dp.base_anchor_for(topo, base, p_load, q_net)
        for st in states:
            k_topo = realize_topology(net, plan, y, st)
            pre = dp.pre_redispatch_violations(k_topo, warm, p_load, q_net, anchor)
            for v in pre:
                if v.kind == "flow" and v.where in corr_by_key:
                    cid = corr_by_key[v.where]
                    pc_viol.add(cid)
                    violated_by.setdefault(cid, []).append((y, st.k))
            res = dp.contingency_opf(k_topo, warm, p_load, q_net, anchor)
            if counters is not None:
                counters.contingency_calls += 1
            verdicts[(y, st.k)] = res.feasible
            if early_abort and not res.feasible:
                break
    return SecurityReport(verdicts, frozenset(pc_viol), n_states, base_results,
                          violated_by)


def n1_verify(net: Network, plan: ExpansionPlan, q_rc=None):
    """Independent acceptance oracle: base and every contingency of every
    year must be dispatchable. Returns (ok, SecurityReport)."""
    report = security_screen(net, plan, q_rc=q_rc, early_abort=False)
    return report.all_feasible(), report
