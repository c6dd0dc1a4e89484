"""AC/DC power flow, linearized branch flows, and the voltage-stability L-index.

Everything here works in per unit on the network MVA base and in a *grid
frame*: the subset of buses connected to the slack through in-service
circuits, indexed 0..n-1. ``make_grid`` builds that frame from a realized
topology; callers decide what to do about excluded buses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import BUS_PQ, BUS_PV, BUS_SLACK, Network, Topology


class IsolatedBusError(ValueError):
    """A bus in the admittance assembly has no in-service circuit."""


class IslandError(ValueError):
    """The topology splits into islands that carry injections."""


# ---------------------------------------------------------------------------
# Grid frame
# ---------------------------------------------------------------------------

@dataclass
class Grid:
    """Slack-connected component of a topology, with its admittance matrix."""

    topology: Topology
    bus_ids: list  # included bus ids in net.buses order
    pos: dict  # bus id -> frame position
    ybus: np.ndarray
    slack: int  # frame position
    pv: np.ndarray  # frame positions (pv-typed buses)
    pq: np.ndarray
    excluded: list  # bus ids outside the slack component
    corridors: list  # in-service corridors (both ends always inside)

    @property
    def n(self) -> int:
        return len(self.bus_ids)


def connected_component(topology: Topology, start: int) -> set:
    adj = {}
    for c in topology.in_service():
        adj.setdefault(c.from_bus, set()).add(c.to_bus)
        adj.setdefault(c.to_bus, set()).add(c.from_bus)
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def make_grid(topology: Topology, root: int | None = None) -> Grid:
    """Grid frame over the component containing ``root`` (default: the slack).

    When the root is not the network slack, the root bus acts as the frame's
    angle reference regardless of its declared type.
    """
    net = topology.net
    root = net.slack_bus if root is None else root
    comp = connected_component(topology, root)
    bus_ids = [b.id for b in net.buses if b.id in comp]
    excluded = [b.id for b in net.buses if b.id not in comp]
    pos = {bid: i for i, bid in enumerate(bus_ids)}
    corridors = [c for c in topology.in_service()
                 if c.from_bus in comp and c.to_bus in comp]
    ybus = build_admittance(topology, bus_ids)
    types = {b.id: b.type for b in net.buses}
    pv = np.array([pos[b] for b in bus_ids
                   if types[b] == BUS_PV and b != root], dtype=int)
    pq = np.array([pos[b] for b in bus_ids
                   if types[b] == BUS_PQ and b != root], dtype=int)
    return Grid(topology, bus_ids, pos, ybus, pos[root], pv, pq,
                excluded, corridors)


def build_admittance(topology: Topology, bus_ids=None) -> np.ndarray:
    """Complex nodal admittance matrix; parallel circuits sum additively."""
    net = topology.net
    if bus_ids is None:
        bus_ids = [b.id for b in net.buses]
    pos = {bid: i for i, bid in enumerate(bus_ids)}
    n = len(bus_ids)
    y = np.zeros((n, n), dtype=complex)
    touched = np.zeros(n, dtype=bool)
    for c in topology.in_service():
        if c.from_bus not in pos or c.to_bus not in pos:
            continue
        i, j = pos[c.from_bus], pos[c.to_bus]
        count = int(topology.counts[c.id])
        ys = count / complex(c.r, c.x)
        ysh = count * 1j * c.b
        y[i, i] += ys + ysh
        y[j, j] += ys + ysh
        y[i, j] -= ys
        y[j, i] -= ys
        touched[i] = touched[j] = True
    if not np.all(touched):
        bad = [bus_ids[i] for i in np.flatnonzero(~touched)]
        raise IsolatedBusError(f"isolated bus(es) with no in-service circuit: {bad}")
    return y


# ---------------------------------------------------------------------------
# Newton-Raphson AC power flow
# ---------------------------------------------------------------------------

@dataclass
class PFSolution:
    """Operating point of one grid frame."""

    v_mag: np.ndarray
    v_ang: np.ndarray  # radians, slack at 0
    converged: bool
    iterations: int
    max_mismatch: float
    failure: str | None = None  # None | "diverged" | "singular"
    switched_pv: tuple = ()  # frame positions moved PV -> PQ at a Q limit
    slack_p: float = 0.0  # pu injection at the slack bus
    slack_q: float = 0.0
    q_injection: np.ndarray | None = None  # attained net Q injection, pu
    s_from: np.ndarray | None = None  # per-line MVA flow per in-service corridor
    s_to: np.ndarray | None = None
    flow_corridor_ids: tuple = ()

    @property
    def v_complex(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


def _jacobian(ybus, v):
    ibus = ybus @ v
    diag_v = np.diag(v)
    diag_i = np.diag(ibus)
    diag_vnorm = np.diag(v / np.abs(v))
    ds_dvm = diag_v @ np.conj(ybus @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    return ds_dva, ds_dvm


def solve_ac_pf(ybus, slack, pv, pq, p_target, q_target, v_setpoint,
                q_gen_min=None, q_gen_max=None, q_demand=None,
                tol=1e-6, max_iter=30):
    """Newton-Raphson solve of the mismatch equations in polar form.

    ``p_target``/``q_target`` are net injections (generation minus demand) in
    pu; the slack entry of ``p_target`` and PV entries of ``q_target`` are
    ignored. When generator Q limits are supplied, PV buses violating them
    are moved to PQ at the binding limit and the solve repeats (at most a few
    rounds), mirroring standard limit enforcement.
    """
    n = ybus.shape[0]
    pv = np.asarray(pv, dtype=int)
    pq = np.asarray(pq, dtype=int)
    enforce_q = q_gen_min is not None
    switched: list = []

    for _round in range(6):
        sol = _nr_core(ybus, slack, pv, pq, p_target, q_target, v_setpoint,
                       tol, max_iter)
        if not sol.converged or not enforce_q or len(pv) == 0:
            break
        v = sol.v_mag * np.exp(1j * sol.v_ang)
        q_inj = (v * np.conj(ybus @ v)).imag
        q_gen = q_inj + (q_demand if q_demand is not None else 0.0)
        hi = [b for b in pv if q_gen[b] > q_gen_max[b] + tol * 10]
        lo = [b for b in pv if q_gen[b] < q_gen_min[b] - tol * 10]
        if not hi and not lo:
            break
        q_target = q_target.copy()
        for b in hi:
            q_target[b] = q_gen_max[b] - (q_demand[b] if q_demand is not None else 0.0)
        for b in lo:
            q_target[b] = q_gen_min[b] - (q_demand[b] if q_demand is not None else 0.0)
        moved = hi + lo
        switched.extend(moved)
        pv = np.array([b for b in pv if b not in moved], dtype=int)
        pq = np.sort(np.concatenate([pq, np.array(moved, dtype=int)]))

    sol.switched_pv = tuple(switched)
    v = sol.v_mag * np.exp(1j * sol.v_ang)
    s = v * np.conj(ybus @ v)
    sol.slack_p = float(s[slack].real)
    sol.slack_q = float(s[slack].imag)
    sol.q_injection = s.imag
    return sol


def _nr_core(ybus, slack, pv, pq, p_target, q_target, v_setpoint, tol, max_iter):
    n = ybus.shape[0]
    vm = np.ones(n)
    fixed = np.concatenate([[slack], pv]).astype(int)
    vm[fixed] = v_setpoint[fixed]
    va = np.zeros(n)
    pvpq = np.sort(np.concatenate([pv, pq])).astype(int)
    npq = len(pq)

    def mismatch(vm, va):
        v = vm * np.exp(1j * va)
        s = v * np.conj(ybus @ v)
        dp = p_target - s.real
        dq = q_target - s.imag
        return np.concatenate([dp[pvpq], dq[pq]]), v

    mis, v = mismatch(vm, va)
    max_mis = float(np.max(np.abs(mis))) if mis.size else 0.0
    if max_mis < tol:
        return PFSolution(vm, va, True, 0, max_mis)

    for it in range(1, max_iter + 1):
        ds_dva, ds_dvm = _jacobian(ybus, v)
        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, mis)
        except np.linalg.LinAlgError:
            return PFSolution(vm, va, False, it, max_mis, failure="singular")
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        mis, v = mismatch(vm, va)
        max_mis = float(np.max(np.abs(mis)))
        if not np.isfinite(max_mis) or max_mis > 1e6 or np.any(vm <= 0):
            return PFSolution(vm, va, False, it, max_mis, failure="diverged")
        if max_mis < tol:
            return PFSolution(vm, va, True, it, max_mis)
    return PFSolution(vm, va, False, max_iter, max_mis, failure="diverged")


def branch_flows(grid: Grid, v_complex: np.ndarray):
    """Per-line complex MVA flows (sending, receiving) per in-service corridor.

    Identical parallel circuits split the corridor flow equally, so one
    per-line figure covers the whole corridor.
    """
    base = grid.topology.net.base_mva
    s_fr = np.zeros(len(grid.corridors), dtype=complex)
    s_to = np.zeros(len(grid.corridors), dtype=complex)
    for idx, c in enumerate(grid.corridors):
        i, j = grid.pos[c.from_bus], grid.pos[c.to_bus]
        ys = 1.0 / complex(c.r, c.x)
        vi, vj = v_complex[i], v_complex[j]
        i_fr = ys * (vi - vj) + 1j * c.b * vi
        i_to = ys * (vj - vi) + 1j * c.b * vj
        s_fr[idx] = vi * np.conj(i_fr) * base
        s_to[idx] = vj * np.conj(i_to) * base
    return s_fr, s_to


def attach_flows(sol: PFSolution, grid: Grid) -> PFSolution:
    s_fr, s_to = branch_flows(grid, sol.v_complex)
    sol.s_from = s_fr
    sol.s_to = s_to
    sol.flow_corridor_ids = tuple(c.id for c in grid.corridors)
    return sol


# ---------------------------------------------------------------------------
# DC power flow
# ---------------------------------------------------------------------------

@dataclass
class DCSolution:
    theta: np.ndarray  # radians per frame bus
    flow_mw: np.ndarray  # total corridor MW flow (all circuits)
    flow_per_line_mw: np.ndarray
    corridor_ids: tuple
    bus_ids: tuple


def solve_dc_pf(topology: Topology, p_injection_mw: np.ndarray) -> DCSolution:
    """B-theta linear power flow. ``p_injection_mw`` is per net.buses order;
    the slack absorbs the imbalance. Errors if an island carries injections.
    """
    net = topology.net
    comp = connected_component(topology, net.slack_bus)
    outside = [b.id for i, b in enumerate(net.buses)
               if b.id not in comp and abs(p_injection_mw[i]) > 1e-9]
    if outside:
        raise IslandError(f"buses {outside} are islanded from the slack but carry power")
    bus_ids = [b.id for b in net.buses if b.id in comp]
    pos = {bid: i for i, bid in enumerate(bus_ids)}
    n = len(bus_ids)
    b_mat = np.zeros((n, n))
    corridors = [c for c in topology.in_service() if c.from_bus in comp]
    for c in corridors:
        i, j = pos[c.from_bus], pos[c.to_bus]
        b_l = topology.counts[c.id] / c.x
        b_mat[i, i] += b_l
        b_mat[j, j] += b_l
        b_mat[i, j] -= b_l
        b_mat[j, i] -= b_l
    p = np.array([p_injection_mw[net.bus_index[bid]] for bid in bus_ids]) / net.base_mva
    slack = pos[net.slack_bus]
    keep = [i for i in range(n) if i != slack]
    theta = np.zeros(n)
    if keep:
        theta[keep] = np.linalg.solve(b_mat[np.ix_(keep, keep)], p[keep])
    flow = np.zeros(len(corridors))
    per_line = np.zeros(len(corridors))
    for idx, c in enumerate(corridors):
        i, j = pos[c.from_bus], pos[c.to_bus]
        per_line[idx] = (theta[i] - theta[j]) / c.x * net.base_mva
        flow[idx] = per_line[idx] * topology.counts[c.id]
    return DCSolution(theta, flow, per_line,
                      tuple(c.id for c in corridors), tuple(bus_ids))


# ---------------------------------------------------------------------------
# Linearized branch flows (small-angle, near-nominal-voltage model)
# ---------------------------------------------------------------------------

def linearized_flows(grid: Grid, v_mag: np.ndarray, v_ang: np.ndarray):
    """First-order branch flows per line: sin->angle, cos->1, V = 1 + dv,
    second-order terms dropped. Exact in the limit of flat voltage and
    vanishing angle spread. Returns (p_fr, q_fr, p_to, q_to) in MVA units.
    """
    base = grid.topology.net.base_mva
    m = len(grid.corridors)
    out = np.zeros((4, m))
    dv = v_mag - 1.0
    for idx, c in enumerate(grid.corridors):
        i, j = grid.pos[c.from_bus], grid.pos[c.to_bus]
        ys = 1.0 / complex(c.r, c.x)
        g, b = ys.real, ys.imag
        th = v_ang[i] - v_ang[j]
        dvi, dvj = dv[i], dv[j]
        out[0, idx] = g * (dvi - dvj) - b * th
        out[1, idx] = -c.b * (1 + 2 * dvi) - b * (dvi - dvj) - g * th
        out[2, idx] = g * (dvj - dvi) + b * th
        out[3, idx] = -c.b * (1 + 2 * dvj) - b * (dvj - dvi) + g * th
    return out[0] * base, out[1] * base, out[2] * base, out[3] * base


# ---------------------------------------------------------------------------
# L-index (hybrid-matrix voltage stability indicator)
# ---------------------------------------------------------------------------

def l_index(v_complex: np.ndarray, ybus: np.ndarray, gen_pos, load_pos):
    """Max over load buses of |1 - sum_g F_jg V_g / V_j|, F = -Y_LL^-1 Y_LG.

    0 marks an unloaded (fully supported) system, 1 the collapse point.
    Returns (value, frame position of the worst load bus); (0.0, None) when
    there is no load bus in the frame.
    """
    gen_pos = np.asarray(gen_pos, dtype=int)
    load_pos = np.asarray(load_pos, dtype=int)
    if load_pos.size == 0:
        return 0.0, None
    y_ll = ybus[np.ix_(load_pos, load_pos)]
    y_lg = ybus[np.ix_(load_pos, gen_pos)]
    try:
        f = -np.linalg.solve(y_ll, y_lg)
    except np.linalg.LinAlgError:
        raise IslandError("load-bus admittance partition is singular")
    vals = np.abs(1.0 - (f @ v_complex[gen_pos]) / v_complex[load_pos])
    worst = int(np.argmax(vals))
    return float(vals[worst]), int(load_pos[worst])
