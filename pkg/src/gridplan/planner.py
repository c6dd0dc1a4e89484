"""Planning objective, staged fitness functions, and the four-stage pipeline.

Stage 1 solves the base-case DC problem, stage 2 the base-case AC problem,
stage 3 the security-constrained DC problem; their results parameterize the
search-space reductions and evaluation gates used by stage 4, the
security-constrained AC problem. A rigorous mode runs stage 4 with every
reduction disabled, for burden comparisons on identical seeds.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import dispatch as dp
from . import mabc
from .contingency import enumerate_contingencies, security_screen, n1_verify
from .netmodel import (ExpansionPlan, Network, ReactivePlan, demand_for_year,
                       realize_topology)

DC_PARAMS = mabc.MabcParams(colony=5, neighbors=2, limit=6, iterations=15,
                            guidance=1.5)
AC_PARAMS = mabc.MabcParams(colony=20, neighbors=2, limit=6, iterations=30,
                            guidance=1.5)

GATE_PENALTY_FACTOR = 10.0  # times the initial cost cap, added on gate rejection


@dataclass
class Counters:
    evals: int = 0
    base_calls: int = 0
    contingency_calls: int = 0
    dc_solves: int = 0
    cache_hits: int = 0
    gate_corridor: int = 0
    gate_cost: int = 0

    @property
    def opf_calls(self) -> int:
        return self.base_calls + self.contingency_calls

    def to_dict(self):
        return {
            "evaluations": self.evals,
            "base_opf_calls": self.base_calls,
            "contingency_opf_calls": self.contingency_calls,
            "opf_calls": self.opf_calls,
            "dc_solves": self.dc_solves,
            "cache_hits": self.cache_hits,
            "gate_rejections_corridor_count": self.gate_corridor,
            "gate_rejections_cost_cap": self.gate_cost,
        }


@dataclass
class StageContext:
    """Search-reduction data distilled from earlier stages."""

    dc_cont: frozenset = frozenset()
    pc_viol: frozenset = frozenset()
    pc_fix: frozenset = frozenset()
    corridor_bounds: tuple | None = None  # (lo, hi) on corridors with new lines
    u_lim: float | None = None
    u_lim_initial: float | None = None
    q_rc: dict = field(default_factory=dict)  # year -> {bus: MVAr}
    u_lim_trace: list = field(default_factory=list)
    eval_log: list = field(default_factory=list)  # (cost, u_lim when OPF ran)

    def admit_cost(self, cost: float) -> bool:
        return self.u_lim is None or cost < self.u_lim

    def update_u_lim(self, cost: float) -> None:
        if self.u_lim is not None and cost < self.u_lim:
            self.u_lim = cost
            self.u_lim_trace.append(cost)


def corridor_count_bounds(plan: ExpansionPlan) -> tuple:
    """90-130% band around the number of corridors the plan builds in."""
    n_dc = int(np.count_nonzero(plan.n[:, -1]))
    return int(np.floor(0.9 * n_dc)), int(np.ceil(1.3 * n_dc))


def discounted_cost(plan: ExpansionPlan, net: Network) -> float:
    """Each circuit is paid once, in its build year, at that year's discount."""
    inc = plan.increments()
    costs = np.array([c.cost for c in net.corridors])
    disc = np.array(net.horizon.discount)
    return float(disc @ (inc.T @ costs))


def infeasibility_offset(net: Network) -> float:
    """Constant added to any infeasible candidate's fitness so that feasible
    plans always outrank infeasible ones: the cost of one circuit in every
    corridor, a scale no sensible plan difference exceeds."""
    return float(sum(c.cost for c in net.corridors))


def q_rc_vector(net: Network, q_rc_year: dict | None) -> np.ndarray:
    out = np.zeros(net.n_bus)
    for bus, mvar in (q_rc_year or {}).items():
        out[net.bus_index[bus]] = mvar
    return out


def reactive_plan_from(net: Network, q_rc: dict) -> ReactivePlan:
    arr = np.zeros((len(net.load_buses), net.horizon.years))
    pos = {b: i for i, b in enumerate(net.load_buses)}
    for y, per_bus in (q_rc or {}).items():
        for bus, mvar in per_bus.items():
            if bus in pos:
                arr[pos[bus], y - 1] = mvar
    return ReactivePlan(arr)


# ---------------------------------------------------------------------------
# DC evaluation: one LP per (topology, demand) with shed + overload elastics
# ---------------------------------------------------------------------------

def dc_dispatch_violations(topology, p_load_mw, counters=None,
                           want_theta=False):
    """Minimum-violation DC dispatch; returns violation records (possibly
    none), or (violations, theta) when ``want_theta``.

    Linear program over generator outputs and bus angles with load-shedding
    and per-line overload slack. Load buses outside the slack component are
    violations outright (a self-balancing island is no use to the AC stages
    this result seeds), so their demand is excluded from the shedding LP.
    """
    net = topology.net
    if counters is not None:
        counters.dc_solves += 1
    from . import powerflow as _pf
    comp = _pf.connected_component(topology, net.slack_bus)
    island_viols = []
    p_load_mw = np.asarray(p_load_mw, dtype=float).copy()
    for i, b in enumerate(net.buses):
        if b.id not in comp and p_load_mw[i] > 1e-9:
            island_viols.append(dp.Violation("island", f"bus {b.id}",
                                             p_load_mw[i] / net.base_mva))
            p_load_mw[i] = 0.0
    gens = [(net.bus_index[g.bus], g) for g in net.generators]
    n = net.n_bus
    corridors = topology.in_service()
    ng, m = len(gens), len(corridors)
    # vars: pg (ng) | theta (n) | shed (n) | overload (m)
    nv = ng + n + n + m
    a_eq = np.zeros((n, nv))
    b_eq = np.asarray(p_load_mw, dtype=float) / net.base_mva
    for k, (pos, _g) in enumerate(gens):
        a_eq[pos, k] = 1.0
    for idx, c in enumerate(corridors):
        i, j = net.bus_index[c.from_bus], net.bus_index[c.to_bus]
        b_l = topology.counts[c.id] / c.x
        a_eq[i, ng + i] -= b_l
        a_eq[i, ng + j] += b_l
        a_eq[j, ng + j] -= b_l
        a_eq[j, ng + i] += b_l
    for i in range(n):
        a_eq[i, ng + n + i] = 1.0  # shed reduces the demand to serve
    a_ub = np.zeros((2 * m, nv))
    b_ub = np.zeros(2 * m)
    for idx, c in enumerate(corridors):
        i, j = net.bus_index[c.from_bus], net.bus_index[c.to_bus]
        cap = c.rating / net.base_mva
        a_ub[2 * idx, ng + i] = 1.0 / c.x
        a_ub[2 * idx, ng + j] = -1.0 / c.x
        a_ub[2 * idx, ng + n + n + idx] = -1.0
        b_ub[2 * idx] = cap
        a_ub[2 * idx + 1, ng + i] = -1.0 / c.x
        a_ub[2 * idx + 1, ng + j] = 1.0 / c.x
        a_ub[2 * idx + 1, ng + n + n + idx] = -1.0
        b_ub[2 * idx + 1] = cap
    bounds = []
    for pos, g in gens:
        s = g.scale_for_year(net, topology.year)
        bounds.append((g.p_min * s / net.base_mva, g.p_max * s / net.base_mva))
    bounds += [(None, None)] * n
    bounds += [(0.0, b) for b in b_eq]  # shed at most the local demand
    bounds += [(0.0, None)] * m
    c_vec = np.zeros(nv)
    c_vec[ng + n:ng + n + n] = 10.0
    c_vec[ng + n + n:] = 1.0
    res = linprog(c_vec, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    viols = island_viols
    if not res.success:
        viols.append(dp.Violation("divergence", "dc dispatch", dp.DIVERGENCE_SLACK))
        return (viols, None) if want_theta else viols
    shed = res.x[ng + n:ng + n + n]
    over = res.x[ng + n + n:]
    for i in np.flatnonzero(shed > dp.TOL_ELEC):
        viols.append(dp.Violation("island", f"bus {net.buses[i].id}", float(shed[i])))
    for idx in np.flatnonzero(over > dp.TOL_ELEC):
        viols.append(dp.Violation("flow", corridors[idx].key, float(over[idx])))
    if want_theta:
        return viols, res.x[ng:ng + n]
    return viols


def _screen_states_lodf(net, topology, theta, states):
    """Post-outage per-line corridor flows at a fixed dispatch, by
    Sherman-Morrison redistribution of the base angles. Returns the subset of
    states that violate some cap at the base dispatch (exact in DC), plus any
    state whose outage splits the network (screened pessimistically)."""
    from . import powerflow as _pf
    comp = _pf.connected_component(topology, net.slack_bus)
    bus_ids = [b.id for b in net.buses if b.id in comp]
    pos = {bid: i for i, bid in enumerate(bus_ids)}
    n = len(bus_ids)
    corridors = [c for c in topology.in_service() if c.from_bus in comp]
    b_mat = np.zeros((n, n))
    for c in corridors:
        i, j = pos[c.from_bus], pos[c.to_bus]
        b_l = topology.counts[c.id] / c.x
        b_mat[i, i] += b_l
        b_mat[j, j] += b_l
        b_mat[i, j] -= b_l
        b_mat[j, i] -= b_l
    slack = pos[net.slack_bus]
    keep = np.array([i for i in range(n) if i != slack])
    th = np.array([theta[net.bus_index[bid]] for bid in bus_ids])
    try:
        b_inv = np.linalg.inv(b_mat[np.ix_(keep, keep)])
    except np.linalg.LinAlgError:
        return states  # cannot screen; evaluate everything
    red_index = {int(k): r for r, k in enumerate(keep)}

    def evec(i, j):
        e = np.zeros(len(keep))
        if i != slack:
            e[red_index[i]] += 1.0
        if j != slack:
            e[red_index[j]] -= 1.0
        return e

    suspect = []
    for st in states:
        c_out = net.corridors[st.corridor_id]
        if c_out.from_bus not in pos or c_out.to_bus not in pos:
            continue  # de-energized corridor; outage changes nothing
        i, j = pos[c_out.from_bus], pos[c_out.to_bus]
        b0 = 1.0 / c_out.x
        e = evec(i, j)
        binv_e = b_inv @ e
        denom = 1.0 - b0 * float(e @ binv_e)
        if abs(denom) < 1e-9:
            suspect.append(st)  # outage islands the system; let the LP judge
            continue
        dth_red = binv_e * (b0 * (th[i] - th[j]) / denom)
        dth = np.zeros(n)
        dth[keep] = dth_red
        bad = False
        for c in corridors:
            a, b = pos[c.from_bus], pos[c.to_bus]
            count = topology.counts[c.id] - (1 if c.id == st.corridor_id else 0)
            if count < 1:
                continue
            flow = (th[a] + dth[a] - th[b] - dth[b]) / c.x * net.base_mva
            if abs(flow) > c.rating + 1e-6:
                bad = True
                break
        if bad:
            suspect.append(st)
    return suspect


def make_dc_fitness(net: Network, security: bool, counters: Counters):
    """Discounted cost plus DC violation penalties (all years, all states).

    Security states are screened at the base dispatch by exact DC
    redistribution; only states that violate there run the redispatch
    program, which leaves every verdict unchanged but skips most solves.
    """
    cache: dict = {}

    def year_penalty(plan: ExpansionPlan, y: int) -> float:
        key = (y, tuple(plan.n[:, y - 1]))
        if key in cache:
            counters.cache_hits += 1
            return cache[key]
        p_load = net.p_load * net.horizon.growth[y - 1]
        topo = realize_topology(net, plan, y)
        viols, theta = dc_dispatch_violations(topo, p_load, counters,
                                              want_theta=True)
        pen = dp.penalty(viols)
        if security and pen == 0.0:
            states = enumerate_contingencies(topo)
            if theta is not None:
                states = _screen_states_lodf(net, topo, theta, states)
            for st in states:
                k_topo = realize_topology(net, plan, y, st)
                pen += dp.penalty(dc_dispatch_violations(k_topo, p_load, counters))
        cache[key] = pen
        return pen

    offset = infeasibility_offset(net)

    def fitness(plan: ExpansionPlan) -> float:
        counters.evals += 1
        cost = discounted_cost(plan, net)
        pen = 0.0
        for y in range(1, net.horizon.years + 1):
            pen += year_penalty(plan, y)
        return cost + pen + (offset if pen > 0 else 0.0)

    return fitness


# ---------------------------------------------------------------------------
# AC evaluation with the stage gates
# ---------------------------------------------------------------------------

@dataclass
class YearOutcome:
    feasible: bool
    penalty: float
    l_value: float | None
    complete: bool  # False when the contingency sweep was aborted early
    q_rc_used: dict = field(default_factory=dict)  # bus -> MVAr sized in


def _sized_base(net, topo, p_load, q_load, q_rc_year, counters, auto_rpp,
                rounds=4):
    """Base OPF, sizing reactive support on demand (the simplistic RPP).

    With a supplied q_rc the support is fixed and no sizing runs. Returns
    (result, support actually applied).
    """
    support = dict(q_rc_year or {})
    q_net = q_load - q_rc_vector(net, support)
    counters.base_calls += 1
    base = dp.base_opf(topo, p_load, q_net)
    if base.feasible or not auto_rpp:
        return base, support
    for _ in range(rounds):
        if base.pf_solution is None:
            return base, support
        frame = dp.make_frame(topo, p_load, q_net, net.limits.v_base_pct)
        if frame is None:
            return base, support
        model = dp.LinModel(frame)
        corr = dp.correction_at(model, frame, base.controls, base.pf_solution)
        extra = dp.size_reactive_support(topo, p_load, q_net, corr, base.controls)
        if not extra:
            sag = [(v.where, v.slack) for v in base.violations if v.kind == "v"]
            load_buses = set(net.load_buses)
            extra = {}
            for where, slack in sag:
                bus = int(where.split()[-1])
                if bus in load_buses:
                    extra[bus] = max(2.0, slack * net.base_mva / 0.15)
            if not extra:
                return base, support
        for bus, mvar in extra.items():
            support[bus] = round(support.get(bus, 0.0) + mvar, 1)
        q_net = q_load - q_rc_vector(net, support)
        counters.base_calls += 1
        base = dp.base_opf(topo, p_load, q_net)
        if base.feasible:
            return base, support
    return base, support


def evaluate_year_ac(net: Network, plan: ExpansionPlan, y: int, security: bool,
                     q_rc_year, counters: Counters, early_abort: bool,
                     auto_rpp: bool = True) -> YearOutcome:
    p_load, q_load = demand_for_year(net, y)
    topo = realize_topology(net, plan, y)
    base, support = _sized_base(net, topo, p_load, q_load, q_rc_year, counters,
                                auto_rpp)
    pen = base.penalty
    if not base.feasible:
        return YearOutcome(False, pen, base.l_value, True, support)
    if not security:
        return YearOutcome(True, 0.0, base.l_value, True, support)
    q_net = q_load - q_rc_vector(net, support)
    anchor = dp.base_anchor_for(topo, base, p_load, q_net)
    for st in enumerate_contingencies(topo):
        k_topo = realize_topology(net, plan, y, st)
        counters.contingency_calls += 1
        res = dp.contingency_opf(k_topo, base.controls, p_load, q_net, anchor)
        pen += res.penalty
        if not res.feasible:
            if early_abort:
                return YearOutcome(False, pen, base.l_value, False, support)
    return YearOutcome(pen == 0.0, pen, base.l_value, True, support)


def make_ac_fitness(net: Network, security: bool, ctx: StageContext,
                    counters: Counters, *, gates=True, cache=True,
                    early_abort=True):
    """AC fitness with the corridor-count and cost-cap gates, per-year result
    caching, and early contingency abort. Every gate can be switched off; the
    rigorous mode switches off all of them.

    When the context carries no fixed reactive support for a year, support is
    sized per candidate on demand; supplying it up front skips the sizing.
    """
    year_cache: dict = {}
    offset = infeasibility_offset(net)

    def fitness(plan: ExpansionPlan) -> float:
        counters.evals += 1
        cost = discounted_cost(plan, net)
        if gates:
            scale = ctx.u_lim_initial or max(cost, 1.0)
            if ctx.corridor_bounds is not None:
                lo, hi = ctx.corridor_bounds
                built = int(np.count_nonzero(plan.n[:, -1]))
                if not lo <= built <= hi:
                    counters.gate_corridor += 1
                    # distance term keeps a gradient back toward the window;
                    # without it the cheapest rejected plan is the empty one
                    dist = max(lo - built, built - hi)
                    return GATE_PENALTY_FACTOR * scale * (1 + dist) + cost
            if not ctx.admit_cost(cost):
                counters.gate_cost += 1
                return GATE_PENALTY_FACTOR * scale + cost
            ctx.eval_log.append((cost, ctx.u_lim))
        total_pen = 0.0
        all_ok = True
        for y in range(1, net.horizon.years + 1):
            key = (y, tuple(plan.n[:, y - 1]))
            if cache and key in year_cache:
                counters.cache_hits += 1
                out = year_cache[key]
            else:
                fixed = ctx.q_rc.get(y)
                out = evaluate_year_ac(net, plan, y, security, fixed, counters,
                                       early_abort, auto_rpp=fixed is None)
                if cache:
                    year_cache[key] = out
            total_pen += out.penalty
            if not out.feasible:
                all_ok = False
                if early_abort:
                    break
        if all_ok and gates:
            ctx.update_u_lim(cost)
        return cost + total_pen + (0.0 if all_ok else offset)

    return fitness


def plan_year_values(net: Network, plan: ExpansionPlan, security: bool,
                     q_rc: dict):
    """Per-year feasibility, L-index and applied support of a finished plan."""
    counters = Counters()
    rows = []
    for y in range(1, net.horizon.years + 1):
        fixed = (q_rc or {}).get(y)
        out = evaluate_year_ac(net, plan, y, security, fixed, counters,
                               early_abort=False, auto_rpp=fixed is None)
        rows.append({"year": y, "feasible": out.feasible,
                     "l_index": out.l_value, "penalty": out.penalty,
                     "q_rc": out.q_rc_used})
    return rows


# ---------------------------------------------------------------------------
# Reactive-support sizing loop (the simplistic RPP)
# ---------------------------------------------------------------------------

def size_reactive_plan(net: Network, plan: ExpansionPlan, *, rounds=8):
    """Per-year shunt MVAr at load buses making the plan's base cases
    dispatchable; escalates directly on residual voltage sag. Years that
    cannot be fixed keep their best-effort sizing."""
    q_rc: dict = {}
    for y in range(1, net.horizon.years + 1):
        p_load, q_load = demand_for_year(net, y)
        topo = realize_topology(net, plan, y)
        per_bus: dict = {}
        for _ in range(rounds):
            q_net = q_load - q_rc_vector(net, per_bus)
            res = dp.base_opf(topo, p_load, q_net)
            if res.feasible or res.pf_solution is None:
                break
            frame = dp.make_frame(topo, p_load, q_net, net.limits.v_base_pct)
            if frame is None:
                break
            model = dp.LinModel(frame)
            corr = dp.correction_at(model, frame, res.controls, res.pf_solution)
            extra = dp.size_reactive_support(topo, p_load, q_net, corr, res.controls)
            if extra:
                for bus, mvar in extra.items():
                    per_bus[bus] = per_bus.get(bus, 0.0) + mvar
                continue
            sag = {v.where: v.slack for v in res.violations if v.kind == "v"}
            if not sag:
                break
            load_buses = set(net.load_buses)
            moved = False
            for where, slack in sag.items():
                bus = int(where.split()[-1])
                if bus in load_buses:
                    per_bus[bus] = per_bus.get(bus, 0.0) + max(
                        2.0, slack * net.base_mva / 0.15)
                    moved = True
            if not moved:
                break
        if per_bus:
            q_rc[y] = {b: round(v, 1) for b, v in per_bus.items()}
    return q_rc


# ---------------------------------------------------------------------------
# Stage orchestration
# ---------------------------------------------------------------------------

def full_space(net: Network, warm=None) -> mabc.SearchSpace:
    return mabc.SearchSpace(
        n_corridors=len(net.corridors),
        years=net.horizon.years,
        corridor_ids=tuple(c.id for c in net.corridors),
        caps=np.array([c.max_new for c in net.corridors]),
        warm=warm,
    )


def greedy_seed(fitness, space: mabc.SearchSpace,
                start: ExpansionPlan | None = None,
                max_rounds: int = 60) -> ExpansionPlan:
    """Constructive warm start: buy circuits one at a time, taking the first
    improving addition in catalog order each round. Deterministic."""
    plan = (mabc.repair(start.n.copy(), space) if start is not None
            else mabc.repair(np.zeros((space.n_corridors, space.years), int), space))
    f = float(fitness(plan))
    for _ in range(max_rounds):
        improved = False
        for cid in space.corridor_ids:
            for y in range(space.years):
                n = plan.n.copy()
                if n[cid, -1] >= space.caps[cid]:
                    continue
                n[cid, y:] += 1
                if n[cid, y:].max() > space.caps[cid]:
                    continue
                cand = ExpansionPlan(n)
                cf = float(fitness(cand))
                if cf < f - 1e-9:
                    plan, f = cand, cf
                    improved = True
                    break
            if improved:
                break
        if not improved:
            return plan
    return plan


def _tail_removals(n_row, y_prev_ok=True):
    """Start years from which one circuit can come off the tail of a row."""
    out = []
    for y0 in range(len(n_row)):
        if n_row[y0:].min() < 1:
            continue
        if y0 > 0 and n_row[y0] - 1 < n_row[y0 - 1]:
            continue
        out.append(y0)
    return out


def polish(plan: ExpansionPlan, fitness, space: mabc.SearchSpace, *,
           cross_year_swaps=False) -> tuple:
    """Deterministic first-improvement hill climb around a finished search.

    Moves, cheapest class first: remove one circuit over a year window
    (windows ending at the horizon retire it, shorter ones defer the build),
    add one circuit from some year onward, and swap a circuit's corridor
    (same build year, or any year pair when ``cross_year_swaps``). Every
    candidate passes through the same fitness, so evaluation gates and call
    counting stay in force.
    """
    best = mabc.repair(plan.n.copy(), space)
    best_f = float(fitness(best))
    required = set(space.required)

    def try_cand(n):
        nonlocal best, best_f
        cand = ExpansionPlan(n)
        f = float(fitness(cand))
        if f < best_f - 1e-9:
            best, best_f = cand, f
            return True
        return False

    improved = True
    guard = 0
    while improved and guard < 200:
        improved = False
        guard += 1
        for cid in space.corridor_ids:
            for y0 in range(space.years):
                for y1 in range(y0, space.years):
                    n = best.n.copy()
                    window = n[cid, y0:y1 + 1]
                    if window.min() < 1:
                        continue
                    n[cid, y0:y1 + 1] = window - 1
                    if y0 > 0 and n[cid, y0] < n[cid, y0 - 1]:
                        continue
                    if np.any(np.diff(n[cid]) < 0):
                        continue
                    if cid in required and n[cid, -1] < 1:
                        continue
                    improved |= try_cand(n)
        if not improved:
            for cid in space.corridor_ids:
                for y in range(space.years):
                    n = best.n.copy()
                    if n[cid, -1] >= space.caps[cid]:
                        continue
                    n[cid, y:] += 1
                    if n[cid, y:].max() > space.caps[cid]:
                        continue
                    improved |= try_cand(n)
        if not improved:
            for cid in space.corridor_ids:
                for y0 in _tail_removals(best.n[cid]):
                    if cid in required and best.n[cid, -1] <= 1:
                        continue
                    for other in space.corridor_ids:
                        if other == cid:
                            continue
                        adds = range(space.years) if cross_year_swaps else (y0,)
                        for y1 in adds:
                            n = best.n.copy()
                            n[cid, y0:] -= 1
                            n[other, y1:] += 1
                            if n[other, y1:].max() > space.caps[other]:
                                continue
                            if try_cand(n):
                                improved = True
                                break
                        if improved:
                            break
                    if improved:
                        break
                if improved:
                    break
    return best, best_f


def build_stage_context(net: Network, dc_sec_plan: ExpansionPlan,
                        screen_report, dc_sec_cost: float,
                        q_rc: dict) -> StageContext:
    """Distill stages 1-3 into the stage-4 gates and sets."""
    dc_cont = frozenset(int(i) for i in np.flatnonzero(dc_sec_plan.n[:, -1]))
    if not dc_cont:
        raise ValueError("the security DC stage produced an empty plan")
    pc_viol = frozenset(screen_report.pc_viol)
    pc_fix = pc_viol & dc_cont
    return StageContext(
        dc_cont=dc_cont,
        pc_viol=pc_viol,
        pc_fix=pc_fix,
        corridor_bounds=corridor_count_bounds(dc_sec_plan),
        u_lim=2.0 * dc_sec_cost,
        u_lim_initial=2.0 * dc_sec_cost,
        q_rc=q_rc,
    )


@dataclass
class StageResult:
    name: str
    plan: ExpansionPlan
    fitness: float
    cost: float
    history: list
    counters: Counters
    wall_s: float
    extras: dict = field(default_factory=dict)


@dataclass
class PipelineResult:
    stages: list
    final: StageResult
    q_rc: dict
    n1_ok: bool | None
    context: StageContext | None
    seed: int

    def stage(self, name: str) -> StageResult:
        return next(s for s in self.stages if s.name == name)


def _params_with_seed(params: mabc.MabcParams, seed: int) -> mabc.MabcParams:
    return mabc.MabcParams(params.colony, params.neighbors, params.limit,
                           params.iterations, params.guidance, seed)


def _run_stage(name, fitness, space, params, counters, restarts=1,
               cross_year_swaps=False, extra_seeds=(), polish_top=2) -> StageResult:
    """Best of several restarts plus optional standalone seed plans; the
    strongest raw results and every seed get the hill-climb refinement."""
    t0 = time.perf_counter()
    raw = []
    for r in range(restarts):
        best, hist = mabc.run(fitness, space,
                              _params_with_seed(params, params.seed + 101 * r))
        raw.append((best.fitness, r, best.plan, hist))
    raw.sort(key=lambda t: (t[0], t[1]))
    plan, fit, history = None, np.inf, []
    for _f, _r, cand_plan, hist in raw[:polish_top]:
        cand, cand_f = polish(cand_plan, fitness, space,
                              cross_year_swaps=cross_year_swaps)
        if cand_f < fit:
            plan, fit, history = cand, cand_f, hist + [cand_f]
    for extra in extra_seeds:
        cand, cand_f = polish(extra, fitness, space,
                              cross_year_swaps=cross_year_swaps)
        if cand_f < fit:
            plan, fit, history = cand, cand_f, history + [cand_f]
    return StageResult(name, plan, fit, 0.0, history, counters,
                       time.perf_counter() - t0)


def run_pipeline(net: Network, mode: str, seed: int = 0, *,
                 dc_params: mabc.MabcParams = DC_PARAMS,
                 ac_params: mabc.MabcParams = AC_PARAMS,
                 q_rc: dict | None = None,
                 strategies: bool = True,
                 verify_final: bool = True) -> PipelineResult:
    """Run the staged solution chain up to ``mode``.

    Modes stage1..stage4 run the chain that far; "four-stage" is stage4 plus
    final verification; "rigorous" solves the security AC problem in one
    unreduced stage. ``q_rc`` overrides the reactive-support values that are
    otherwise sized on the stage-1 plan.
    """
    if mode == "rigorous":
        strategies = False
    fixed_q_rc = dict(q_rc) if q_rc else {}
    stages: list = []
    ctx4 = None

    def final_q_rc(plan, security):
        """Reactive support of the finished plan: fixed values when supplied,
        otherwise whatever the per-year sizing settled on."""
        if fixed_q_rc:
            return fixed_q_rc
        rows = plan_year_values(net, plan, security, {})
        return {r["year"]: r["q_rc"] for r in rows if r["q_rc"]}

    # Stage 1: base-case DC
    c1 = Counters()
    fit1 = make_dc_fitness(net, security=False, counters=c1)
    s1 = _run_stage("dc_base", fit1, full_space(net),
                    _params_with_seed(dc_params, seed), c1,
                    restarts=4, cross_year_swaps=True,
                    extra_seeds=(greedy_seed(fit1, full_space(net)),))
    s1.cost = discounted_cost(s1.plan, net)
    stages.append(s1)
    if mode == "stage1":
        return PipelineResult(stages, s1, {}, None, None, seed)

    if mode == "rigorous":
        ctx = StageContext(q_rc=fixed_q_rc)
        c4 = Counters()
        fit = make_ac_fitness(net, security=True, ctx=ctx, counters=c4,
                              gates=False, cache=False, early_abort=False)
        s4 = _run_stage("ac_sec_rigorous", fit, full_space(net),
                        _params_with_seed(ac_params, seed), c4)
        s4.cost = discounted_cost(s4.plan, net)
        stages.append(s4)
        out_q = final_q_rc(s4.plan, True)
        ok = None
        if verify_final:
            ok, _ = n1_verify(net, s4.plan, out_q)
        return PipelineResult(stages, s4, out_q, ok, ctx, seed)

    # Stage 2: base-case AC, gated by stage-1 results
    ctx2 = StageContext(
        corridor_bounds=corridor_count_bounds(s1.plan) if strategies else None,
        u_lim=2.0 * s1.cost if strategies else None,
        u_lim_initial=2.0 * s1.cost if strategies else None,
        q_rc=fixed_q_rc,
    )
    c2 = Counters()
    fit2 = make_ac_fitness(net, security=False, ctx=ctx2, counters=c2,
                           gates=strategies, cache=strategies,
                           early_abort=strategies)
    s2 = _run_stage("ac_base", fit2, full_space(net, warm=s1.plan),
                    _params_with_seed(ac_params, seed + 1), c2)
    s2.cost = discounted_cost(s2.plan, net)
    if strategies and s2.fitness > s2.cost + 1e-6 and c2.gate_cost > 0:
        # every admissible candidate was priced out: the cost cap inherited
        # from the DC stage was too tight for the AC problem; relax and retry
        ctx2.u_lim = 4.0 * ctx2.u_lim_initial
        ctx2.u_lim_initial = ctx2.u_lim
        s2 = _run_stage("ac_base", fit2, full_space(net, warm=s1.plan),
                        _params_with_seed(ac_params, seed + 1), c2)
        s2.cost = discounted_cost(s2.plan, net)
        s2.extras["u_lim_relaxed"] = True
    s2.extras["u_lim_trace"] = list(ctx2.u_lim_trace)
    stages.append(s2)
    if mode == "stage2":
        return PipelineResult(stages, s2, final_q_rc(s2.plan, False), None, None, seed)

    # Stage 3: security-constrained DC
    c3 = Counters()
    fit3 = make_dc_fitness(net, security=True, counters=c3)
    s3 = _run_stage("dc_sec", fit3, full_space(net, warm=s2.plan),
                    _params_with_seed(dc_params, seed + 2), c3, restarts=4,
                    cross_year_swaps=True,
                    extra_seeds=(greedy_seed(fit3, full_space(net), start=s2.plan),))
    s3.cost = discounted_cost(s3.plan, net)
    stages.append(s3)
    if mode == "stage3":
        return PipelineResult(stages, s3, fixed_q_rc, None, None, seed)

    # Security screen of the base AC plan -> PC_viol; the screen needs the
    # support that made stage 2's plan dispatchable
    screen_q_rc = fixed_q_rc or final_q_rc(s2.plan, False)
    c_screen = Counters()
    screen = security_screen(net, s2.plan, q_rc=screen_q_rc, counters=c_screen)
    ctx4 = build_stage_context(net, s3.plan, screen, s3.cost, fixed_q_rc)
    if not strategies:
        ctx4 = StageContext(q_rc=fixed_q_rc)

    # Stage 4: security-constrained AC
    c4 = Counters()
    fit4 = make_ac_fitness(net, security=True, ctx=ctx4, counters=c4,
                           gates=strategies, cache=strategies,
                           early_abort=strategies)
    if strategies:
        allowed = tuple(sorted(ctx4.pc_viol | ctx4.dc_cont))
        space4 = mabc.SearchSpace(
            n_corridors=len(net.corridors),
            years=net.horizon.years,
            corridor_ids=allowed,
            caps=np.array([c.max_new for c in net.corridors]),
            required=tuple(sorted(ctx4.pc_fix)),
            warm=s3.plan,
        )
    else:
        space4 = full_space(net, warm=s3.plan)
    s4 = _run_stage("ac_sec", fit4, space4, _params_with_seed(ac_params, seed + 3), c4)
    s4.cost = discounted_cost(s4.plan, net)
    if strategies and s4.fitness > s4.cost + 1e-6 and c4.gate_cost > 0:
        ctx4.u_lim = 4.0 * ctx4.u_lim_initial
        ctx4.u_lim_initial = ctx4.u_lim
        s4 = _run_stage("ac_sec", fit4, space4,
                        _params_with_seed(ac_params, seed + 3), c4)
        s4.cost = discounted_cost(s4.plan, net)
        s4.extras["u_lim_relaxed"] = True
    s4.extras["u_lim_trace"] = list(ctx4.u_lim_trace)
    s4.extras["screen"] = screen.to_dict()
    stages.append(s4)
    out_q = final_q_rc(s4.plan, True)
    ok = None
    if verify_final and mode in ("stage4", "four-stage"):
        ok, _ = n1_verify(net, s4.plan, out_q)
    return PipelineResult(stages, s4, out_q, ok, ctx4, seed)


# ---------------------------------------------------------------------------
# Sequential (year-by-year) planning
# ---------------------------------------------------------------------------

@dataclass
class SequentialResult:
    plan: ExpansionPlan  # cumulative over the original horizon
    q_rc: dict
    cost: float
    per_year: list  # per-year pipeline results


def sequential_plan(net: Network, seed: int = 0, *,
                    dc_params=DC_PARAMS, ac_params=AC_PARAMS,
                    mode: str = "four-stage") -> SequentialResult:
    """Chain static single-year plans; each year's additions become existing
    circuits for the next. Emits the per-year reactive support consumed by
    the dynamic run and the sequential cost benchmark."""
    years = net.horizon.years
    inc = np.zeros((len(net.corridors), years), dtype=int)
    q_rc: dict = {}
    per_year = []
    carried = np.zeros(len(net.corridors), dtype=int)
    for y in range(1, years + 1):
        sub = net.with_horizon(y).with_added_circuits(carried)
        rep = None
        for attempt in range(3):
            cand = run_pipeline(sub, mode, seed + 17 * y + 311 * attempt,
                                dc_params=dc_params, ac_params=ac_params,
                                verify_final=False)
            ok = cand.final.fitness <= (
                discounted_cost(cand.final.plan, sub) + 1e-6)
            if rep is None or cand.final.fitness < rep.final.fitness:
                rep = cand
            if ok:
                break
        adds = rep.final.plan.n[:, 0]
        if rep.final.fitness > discounted_cost(rep.final.plan, sub) + 1e-6:
            raise RuntimeError(
                f"sequential planning: year {y} found no feasible plan at the "
                f"corridor caps (best penalty "
                f"{rep.final.fitness - discounted_cost(rep.final.plan, sub):.3g})")
        inc[:, y - 1] = adds
        carried = carried + adds
        if rep.q_rc.get(1):
            q_rc[y] = rep.q_rc[1]
        per_year.append(rep)
    plan = ExpansionPlan(np.cumsum(inc, axis=1))
    costs = np.array([c.cost for c in net.corridors])
    disc = np.array(net.horizon.discount)
    cost = float(disc @ (inc.T @ costs))
    return SequentialResult(plan, q_rc, cost, per_year)


# ---------------------------------------------------------------------------
# Parameter tuning harness (population-variance criterion)
# ---------------------------------------------------------------------------

def tune_harness(net: Network, param: str, values, trials: int = 5, *,
                 seed: int = 0, params: mabc.MabcParams = AC_PARAMS,
                 problem: str = "ac-sec", strategies: bool = False):
    """Grid over one control parameter; per trial, record the final colony
    variance and the best cost. Mirrors the variance-based tuning tables.

    ``param`` is one of the MabcParams field names ("neighbors", "limit",
    "colony", "iterations", "guidance") or "corridor_bounds" with
    (lo_frac, hi_frac) values, which requires the staged context.
    """
    rows = []
    for value in values:
        variances = []
        best_costs = []
        for t in range(trials):
            trial_seed = seed + 1000 * t + 7
            counters = Counters()
            ctx = StageContext()
            if param == "corridor_bounds" or strategies:
                pre = run_pipeline(net, "stage3", trial_seed, verify_final=False)
                screen = security_screen(net, pre.stage("ac_base").plan,
                                         q_rc=pre.q_rc)
                ctx = build_stage_context(net, pre.stage("dc_sec").plan, screen,
                                          pre.stage("dc_sec").cost, pre.q_rc)
                if param == "corridor_bounds":
                    n_dc = int(np.count_nonzero(pre.stage("dc_sec").plan.n[:, -1]))
                    lo_f, hi_f = value
                    ctx.corridor_bounds = (int(np.floor(lo_f * n_dc)),
                                           int(np.ceil(hi_f * n_dc)))
            run_params = params
            if param != "corridor_bounds":
                run_params = mabc.MabcParams(**{
                    **{f: getattr(params, f) for f in
                       ("colony", "neighbors", "limit", "iterations", "guidance")},
                    param: value})
            run_params = _params_with_seed(run_params, trial_seed)
            gates = param == "corridor_bounds" or strategies
            if problem == "dc-sec":
                fitness = make_dc_fitness(net, security=True, counters=counters)
            else:
                fitness = make_ac_fitness(net, security=True, ctx=ctx,
                                          counters=counters, gates=gates,
                                          cache=gates, early_abort=gates)
            final_var = {}

            def capture(it, best, colony, store=final_var):
                store["v"] = mabc.variance(colony)

            best, _hist = mabc.run(fitness, full_space(net), run_params,
                                   on_iteration=capture)
            variances.append(final_var.get("v", 0.0))
            best_costs.append(best.fitness)
        rows.append({
            "setting": value,
            "variance_per_trial": variances,
            "min_cost": float(np.min(best_costs)),
            "max_cost": float(np.max(best_costs)),
            "mean_cost": float(np.mean(best_costs)),
            "std_cost": float(np.std(best_costs)),
        })
    return rows
