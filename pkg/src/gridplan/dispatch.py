"""Feasibility-seeking dispatch for a fixed topology.

``base_opf`` drives the full nonlinear power flow to a constraint-satisfying
operating point by successive linear steps; ``contingency_opf`` settles
post-outage states with a single linear program around the pre-outage
dispatch. Both report the same structured violation records, and
``recheck_base`` / ``recheck_contingency`` re-verify any returned controls
from scratch, independently of how the optimizer got there.

Contingency-state MVA limits are enforced in a polyhedral (octagon) norm so
that the linear program, its verdict, and the recheck all agree exactly;
screening measurements use the true Euclidean norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import powerflow as pf
from .netmodel import Topology

TOL_ELEC = 1e-4  # pu tolerance on electrical constraint slacks
TOL_L = 1e-3  # tolerance on the L-index bound
SQRT2 = float(np.sqrt(2.0))

# quadratic penalty weight per violation class (slacks in pu; L unitless)
PENALTY_WEIGHTS = {
    "v": 1e4,
    "q": 1e4,
    "p": 1e4,
    "flow": 1e4,
    "l": 1e4,
    "island": 1e4,
    "divergence": 1e4,
}
DIVERGENCE_SLACK = 1.0  # constant slack charged when no power flow converges


@dataclass(frozen=True)
class Violation:
    kind: str  # v | q | p | flow | l | island | divergence
    where: str  # bus id or corridor key
    slack: float  # positive amount by which the constraint is exceeded


@dataclass(frozen=True)
class Controls:
    """Generator active-power targets (MW) and voltage setpoints (pu).

    ``p_gen_mw`` carries every generator bus including the slack; the slack
    entry is a warm-start reference only, its actual output is a power-flow
    outcome.
    """

    p_gen_mw: dict
    v_set: dict


@dataclass
class DispatchResult:
    controls: Controls
    pf_solution: pf.PFSolution | None
    feasible: bool
    violations: tuple
    penalty: float
    l_value: float | None = None


def penalty(violations) -> float:
    """Sum of weighted squared positive slacks; zero iff all slacks <= 0."""
    total = 0.0
    for v in violations:
        if v.kind == "divergence":
            total += PENALTY_WEIGHTS["divergence"] * DIVERGENCE_SLACK
        elif v.slack > 0:
            total += PENALTY_WEIGHTS[v.kind] * v.slack ** 2
    return total


def _clip_tolerance(viols):
    out = []
    for v in viols:
        tol = TOL_L if v.kind == "l" else TOL_ELEC
        if v.kind == "divergence" or v.slack > tol:
            out.append(v)
    return tuple(out)


# ---------------------------------------------------------------------------
# Frame: the solvable slack component plus per-bus/per-gen limit data
# ---------------------------------------------------------------------------

@dataclass
class Frame:
    grid: pf.Grid
    p_load: np.ndarray  # pu per frame bus
    q_load: np.ndarray  # pu, net of reactive compensation
    gen_pos: np.ndarray  # frame positions hosting a generator
    gen_bus: list  # their bus ids, same order
    p_min: np.ndarray  # pu, year-scaled
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    v_lo: np.ndarray  # per frame bus
    v_hi: np.ndarray
    island_violations: tuple


def components(topology: Topology) -> list:
    """Connected components (sets of bus ids) of the realized topology."""
    seen: set = set()
    comps = []
    for b in topology.net.buses:
        if b.id in seen:
            continue
        comp = pf.connected_component(topology, b.id)
        seen |= comp
        comps.append(comp)
    return comps


def strict_island_violations(topology: Topology, p_load_mw, q_load_net_mw):
    """Base-case rule: every bus with load must sit in the slack component."""
    net = topology.net
    comp = pf.connected_component(topology, net.slack_bus)
    viols = []
    for i, b in enumerate(net.buses):
        if b.id in comp:
            continue
        amount = abs(float(p_load_mw[i])) + abs(float(q_load_net_mw[i]))
        if amount > 1e-9:
            viols.append(Violation("island", f"bus {b.id}", amount / net.base_mva))
    return viols, comp


def make_frame(topology: Topology, p_load_mw, q_load_net_mw, v_band_pct,
               root=None):
    """Solvable frame over the component holding ``root`` (default the slack);
    None when that component is a single bus. Buses elsewhere are simply
    excluded; callers judge them."""
    net = topology.net
    root = net.slack_bus if root is None else root
    comp = pf.connected_component(topology, root)
    if len(comp) < 2:
        return None
    grid = pf.make_grid(topology, root)
    idx = [net.bus_index[bid] for bid in grid.bus_ids]
    p_load = np.asarray(p_load_mw, dtype=float)[idx] / net.base_mva
    q_load = np.asarray(q_load_net_mw, dtype=float)[idx] / net.base_mva
    gen_pos, gen_bus = [], []
    p_min, p_max, q_min, q_max = [], [], [], []
    for g in net.generators:
        if g.bus not in grid.pos:
            continue
        s = g.scale_for_year(net, topology.year)
        gen_pos.append(grid.pos[g.bus])
        gen_bus.append(g.bus)
        p_min.append(g.p_min * s / net.base_mva)
        p_max.append(g.p_max * s / net.base_mva)
        q_min.append(g.q_min * s / net.base_mva)
        q_max.append(g.q_max * s / net.base_mva)
    nominal = np.array([net.buses[net.bus_index[bid]].v_nominal for bid in grid.bus_ids])
    band = v_band_pct / 100.0
    frame = Frame(grid, p_load, q_load, np.array(gen_pos, dtype=int), gen_bus,
                  np.array(p_min), np.array(p_max), np.array(q_min), np.array(q_max),
                  nominal * (1 - band), nominal * (1 + band), ())
    return frame


# ---------------------------------------------------------------------------
# AC operating-point measurement
# ---------------------------------------------------------------------------

def measure_ac(frame: Frame, sol: pf.PFSolution, l_max=None, rating_factor=1.0):
    """Violations of an AC operating point: V bands, gen P/Q, MVA flows, L.

    ``rating_factor`` scales the MVA caps (post-contingency states run at
    short-term emergency ratings)."""
    grid = frame.grid
    net = grid.topology.net
    viols = list(frame.island_violations)
    for i, bid in enumerate(grid.bus_ids):
        if sol.v_mag[i] > frame.v_hi[i]:
            viols.append(Violation("v", f"bus {bid}", sol.v_mag[i] - frame.v_hi[i]))
        elif sol.v_mag[i] < frame.v_lo[i]:
            viols.append(Violation("v", f"bus {bid}", frame.v_lo[i] - sol.v_mag[i]))
    q_gen = sol.q_injection + frame.q_load
    p_slack = sol.slack_p + frame.p_load[grid.slack]
    for k, pos in enumerate(frame.gen_pos):
        if pos == grid.slack:
            if p_slack > frame.p_max[k]:
                viols.append(Violation("p", f"bus {frame.gen_bus[k]}",
                                       p_slack - frame.p_max[k]))
            elif p_slack < frame.p_min[k]:
                viols.append(Violation("p", f"bus {frame.gen_bus[k]}",
                                       frame.p_min[k] - p_slack))
        qg = q_gen[pos]
        if qg > frame.q_max[k]:
            viols.append(Violation("q", f"bus {frame.gen_bus[k]}", qg - frame.q_max[k]))
        elif qg < frame.q_min[k]:
            viols.append(Violation("q", f"bus {frame.gen_bus[k]}", frame.q_min[k] - qg))
    s_fr, s_to = pf.branch_flows(grid, sol.v_complex)
    for idx, c in enumerate(grid.corridors):
        worst = max(abs(s_fr[idx]), abs(s_to[idx]))
        cap = c.rating * rating_factor
        if worst > cap:
            viols.append(Violation("flow", c.key, (worst - cap) / net.base_mva))
    l_val = None
    if l_max is not None:
        switched = set(sol.switched_pv)
        gen_set = [p for p in np.concatenate([[grid.slack], grid.pv]).astype(int)
                   if p not in switched]
        load_set = [p for p in range(grid.n) if p not in set(gen_set)]
        l_val, _ = pf.l_index(sol.v_complex, grid.ybus, gen_set, load_set)
        if l_val > l_max:
            viols.append(Violation("l", "system", l_val - l_max))
    return viols, l_val


# ---------------------------------------------------------------------------
# Linear (small-angle) network model over a frame
# ---------------------------------------------------------------------------

class LinModel:
    """Affine balance and per-line flow expressions over (theta, dv, pg, qg)."""

    def __init__(self, frame: Frame):
        self.frame = frame
        grid = frame.grid
        n = grid.n
        ng = len(frame.gen_pos)
        self.n, self.ng = n, ng
        self.th_of = {}
        k = 0
        for i in range(n):
            if i != grid.slack:
                self.th_of[i] = k
                k += 1
        self.i_dv = n - 1
        self.i_pg = self.i_dv + n
        self.i_qg = self.i_pg + ng
        self.nv = self.i_qg + ng
        self._build()

    def _th(self, row, i, coeff):
        if i in self.th_of:
            row[self.th_of[i]] += coeff

    def _flow_rows(self):
        rows = []
        for c in self.frame.grid.corridors:
            i = self.frame.grid.pos[c.from_bus]
            j = self.frame.grid.pos[c.to_bus]
            ys = 1.0 / complex(c.r, c.x)
            g, b = ys.real, ys.imag
            p_fr = np.zeros(self.nv)
            p_fr[self.i_dv + i] += g
            p_fr[self.i_dv + j] -= g
            self._th(p_fr, i, -b)
            self._th(p_fr, j, b)
            q_fr = np.zeros(self.nv)
            q_fr[self.i_dv + i] += -2 * c.b - b
            q_fr[self.i_dv + j] += b
            self._th(q_fr, i, -g)
            self._th(q_fr, j, g)
            p_to = np.zeros(self.nv)
            p_to[self.i_dv + j] += g
            p_to[self.i_dv + i] -= g
            self._th(p_to, i, b)
            self._th(p_to, j, -b)
            q_to = np.zeros(self.nv)
            q_to[self.i_dv + j] += -2 * c.b - b
            q_to[self.i_dv + i] += b
            self._th(q_to, i, g)
            self._th(q_to, j, -g)
            rows.append(((p_fr, 0.0), (q_fr, -c.b), (p_to, 0.0), (q_to, -c.b)))
        return rows

    def _build(self):
        frame = self.frame
        grid = frame.grid
        n = self.n
        a_eq = np.zeros((2 * n, self.nv))
        const = np.zeros(2 * n)
        self.flows = self._flow_rows()
        for idx, c in enumerate(grid.corridors):
            i = grid.pos[c.from_bus]
            j = grid.pos[c.to_bus]
            cnt = int(grid.topology.counts[c.id])
            (pf_r, pf_c), (qf_r, qf_c), (pt_r, pt_c), (qt_r, qt_c) = self.flows[idx]
            a_eq[i] += cnt * pf_r
            const[i] += cnt * pf_c
            a_eq[n + i] += cnt * qf_r
            const[n + i] += cnt * qf_c
            a_eq[j] += cnt * pt_r
            const[j] += cnt * pt_c
            a_eq[n + j] += cnt * qt_r
            const[n + j] += cnt * qt_c
        for k, pos in enumerate(frame.gen_pos):
            a_eq[pos, self.i_pg + k] -= 1.0
            a_eq[n + pos, self.i_qg + k] -= 1.0
        self.a_eq = a_eq
        self.const = const

    def b_eq(self, loss_frac=0.0):
        p = -self.frame.p_load * (1.0 + loss_frac) - self.const[:self.n]
        q = -self.frame.q_load - self.const[self.n:]
        return np.concatenate([p, q])

    def octagon_rows(self, flow_corr=None, rating_factor=1.0):
        """(A_ub, b_ub, corridor tag per row): per-line octagonal MVA caps.

        ``flow_corr`` optionally shifts each (corridor, side, component)
        constant so the rows are exact at a measured operating point.
        """
        rows, rhs, tags = [], [], []
        for idx, c in enumerate(self.frame.grid.corridors):
            cap = c.rating * rating_factor / self.frame.grid.topology.net.base_mva
            (pf_r, c1), (qf_r, c2), (pt_r, c3), (qt_r, c4) = self.flows[idx]
            if flow_corr is not None:
                c1 = c1 + flow_corr[idx][0]
                c2 = c2 + flow_corr[idx][1]
                c3 = c3 + flow_corr[idx][2]
                c4 = c4 + flow_corr[idx][3]
            for (p_row, p_c), (q_row, q_c) in (((pf_r, c1), (qf_r, c2)),
                                               ((pt_r, c3), (qt_r, c4))):
                for sign in (1, -1):
                    rows.append(sign * p_row)
                    rhs.append(cap - sign * p_c)
                    rows.append(sign * q_row)
                    rhs.append(cap - sign * q_c)
                    rows.append(sign * (p_row + q_row) / SQRT2)
                    rhs.append(cap - sign * (p_c + q_c) / SQRT2)
                    rows.append(sign * (p_row - q_row) / SQRT2)
                    rhs.append(cap - sign * (p_c - q_c) / SQRT2)
                    tags.extend([idx] * 4)
        return np.array(rows), np.array(rhs), tags

    def core_bounds(self, wide_v=False):
        frame = self.frame
        bounds = [(None, None)] * (self.n - 1)
        if wide_v:
            bounds += [(-0.3, 0.3)] * self.n
        else:
            bounds += [(frame.v_lo[i] - 1.0, frame.v_hi[i] - 1.0)
                       for i in range(self.n)]
        bounds += list(zip(frame.p_min, frame.p_max))
        bounds += list(zip(frame.q_min, frame.q_max))
        return bounds

    def controls_from(self, x) -> Controls:
        base = self.frame.grid.topology.net.base_mva
        p_gen, v_set = {}, {}
        for k, bus in enumerate(self.frame.gen_bus):
            p_gen[bus] = float(x[self.i_pg + k]) * base
            v_set[bus] = float(1.0 + x[self.i_dv + self.frame.gen_pos[k]])
        return Controls(p_gen, v_set)

    def solve_at_controls(self, controls: Controls) -> np.ndarray:
        """Unique linear state with non-slack pg and all gen dv held fixed."""
        frame = self.frame
        grid = frame.grid
        base = grid.topology.net.base_mva
        fixed = {}
        for k, bus in enumerate(frame.gen_bus):
            if frame.gen_pos[k] != grid.slack:
                fixed[self.i_pg + k] = controls.p_gen_mw.get(bus, 0.0) / base
            fixed[self.i_dv + frame.gen_pos[k]] = controls.v_set.get(bus, 1.0) - 1.0
        free = [j for j in range(self.nv) if j not in fixed]
        a = self.a_eq[:, free]
        rhs = self.b_eq() - self.a_eq[:, list(fixed)] @ np.array(list(fixed.values()))
        sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        x = np.zeros(self.nv)
        x[free] = sol
        for j, val in fixed.items():
            x[j] = val
        return x

    def flow_magnitudes(self, x, norm="true", flow_corr=None):
        """Per-corridor worst per-line loading, pu, in the given norm."""
        out = np.zeros(len(self.flows))
        for idx, ((pf_r, c1), (qf_r, c2), (pt_r, c3), (qt_r, c4)) in enumerate(self.flows):
            if flow_corr is not None:
                c1 = c1 + flow_corr[idx][0]
                c2 = c2 + flow_corr[idx][1]
                c3 = c3 + flow_corr[idx][2]
                c4 = c4 + flow_corr[idx][3]
            p1, q1 = pf_r @ x + c1, qf_r @ x + c2
            p2, q2 = pt_r @ x + c3, qt_r @ x + c4
            if norm == "true":
                out[idx] = max(np.hypot(p1, q1), np.hypot(p2, q2))
            else:  # octagon norm matching octagon_rows
                out[idx] = max(
                    abs(p1), abs(q1), abs(p1 + q1) / SQRT2, abs(p1 - q1) / SQRT2,
                    abs(p2), abs(q2), abs(p2 + q2) / SQRT2, abs(p2 - q2) / SQRT2,
                )
        return out

    def measure_linear(self, x, flow_norm="octagon", anchor=None,
                       rating_factor=1.0):
        """Violations of a linear-model state, optionally anchored at the
        intact-system operating point."""
        frame = self.frame
        grid = frame.grid
        aflows, av, aqg, ap_slack = _anchor_arrays(self, anchor)
        viols = list(frame.island_violations)
        dv = x[self.i_dv:self.i_dv + self.n]
        for i, bid in enumerate(grid.bus_ids):
            vm = 1.0 + dv[i] + av[i]
            if vm > frame.v_hi[i]:
                viols.append(Violation("v", f"bus {bid}", vm - frame.v_hi[i]))
            elif vm < frame.v_lo[i]:
                viols.append(Violation("v", f"bus {bid}", frame.v_lo[i] - vm))
        for k, bus in enumerate(frame.gen_bus):
            pg = x[self.i_pg + k]
            if frame.gen_pos[k] == grid.slack:
                pg += ap_slack
            qg = x[self.i_qg + k] + aqg[k]
            if pg > frame.p_max[k]:
                viols.append(Violation("p", f"bus {bus}", pg - frame.p_max[k]))
            elif pg < frame.p_min[k]:
                viols.append(Violation("p", f"bus {bus}", frame.p_min[k] - pg))
            if qg > frame.q_max[k]:
                viols.append(Violation("q", f"bus {bus}", qg - frame.q_max[k]))
            elif qg < frame.q_min[k]:
                viols.append(Violation("q", f"bus {bus}", frame.q_min[k] - qg))
        mags = self.flow_magnitudes(x, flow_norm, aflows)
        for idx, c in enumerate(grid.corridors):
            cap = c.rating * rating_factor / grid.topology.net.base_mva
            if mags[idx] > cap:
                viols.append(Violation("flow", c.key, mags[idx] - cap))
        return viols


@dataclass
class ModelCorrection:
    """Measured-minus-linear offsets making LP inequalities exact at a point."""

    v: np.ndarray  # per frame bus
    flows: np.ndarray  # (corridors, 4): p_fr, q_fr, p_to, q_to in pu
    qg: np.ndarray  # per generator
    p_slack: float


def correction_at(model: LinModel, frame: Frame, controls: Controls,
                  sol: pf.PFSolution) -> ModelCorrection:
    x_lin = model.solve_at_controls(controls)
    dv_lin = x_lin[model.i_dv:model.i_dv + model.n]
    v_corr = sol.v_mag - (1.0 + dv_lin)
    base = frame.grid.topology.net.base_mva
    s_fr, s_to = pf.branch_flows(frame.grid, sol.v_complex)
    flows = np.zeros((len(model.flows), 4))
    for idx, ((pf_r, c1), (qf_r, c2), (pt_r, c3), (qt_r, c4)) in enumerate(model.flows):
        flows[idx, 0] = s_fr[idx].real / base - (pf_r @ x_lin + c1)
        flows[idx, 1] = s_fr[idx].imag / base - (qf_r @ x_lin + c2)
        flows[idx, 2] = s_to[idx].real / base - (pt_r @ x_lin + c3)
        flows[idx, 3] = s_to[idx].imag / base - (qt_r @ x_lin + c4)
    q_gen_ac = sol.q_injection[frame.gen_pos] + frame.q_load[frame.gen_pos]
    qg_corr = q_gen_ac - x_lin[model.i_qg:model.i_qg + model.ng]
    slack_k = int(np.flatnonzero(frame.gen_pos == frame.grid.slack)[0])
    p_slack_ac = sol.slack_p + frame.p_load[frame.grid.slack]
    p_corr = float(p_slack_ac - x_lin[model.i_pg + slack_k])
    return ModelCorrection(v_corr, flows, qg_corr, p_corr)


def _deviation_block(model: LinModel, ref_controls: Controls, n_prefix_rows,
                     a_ub, b_ub, t_offset):
    """Rows |x_ctrl - ref| <= t appended after ``n_prefix_rows``; returns next row."""
    frame = model.frame
    base = frame.grid.topology.net.base_mva
    row = n_prefix_rows
    for k, bus in enumerate(frame.gen_bus):
        ref = ref_controls.p_gen_mw.get(bus, 0.0) / base
        col = model.i_pg + k
        a_ub[row, col] = 1.0
        a_ub[row, t_offset + k] = -1.0
        b_ub[row] = ref
        a_ub[row + 1, col] = -1.0
        a_ub[row + 1, t_offset + k] = -1.0
        b_ub[row + 1] = -ref
        row += 2
    for k, bus in enumerate(frame.gen_bus):
        ref = ref_controls.v_set.get(bus, 1.0) - 1.0
        col = model.i_dv + frame.gen_pos[k]
        a_ub[row, col] = 1.0
        a_ub[row, t_offset + model.ng + k] = -1.0
        b_ub[row] = ref
        a_ub[row + 1, col] = -1.0
        a_ub[row + 1, t_offset + model.ng + k] = -1.0
        b_ub[row + 1] = -ref
        row += 2
    return row


# ---------------------------------------------------------------------------
# Base-case OPF
# ---------------------------------------------------------------------------

def _initial_controls(frame: Frame, v_start=1.03) -> Controls:
    total = float(frame.p_load.sum()) * 1.02
    cap = float(frame.p_max.sum())
    ratio = min(1.0, total / cap) if cap > 0 else 0.0
    base = frame.grid.topology.net.base_mva
    p_gen, v_set = {}, {}
    for k, bus in enumerate(frame.gen_bus):
        p_gen[bus] = float(np.clip(ratio * frame.p_max[k], frame.p_min[k],
                                   frame.p_max[k])) * base
        v_set[bus] = float(min(v_start, frame.v_hi[frame.gen_pos[k]]))
    return Controls(p_gen, v_set)


def _run_pf(frame: Frame, controls: Controls, tol=1e-6, max_iter=30):
    grid = frame.grid
    base = grid.topology.net.base_mva
    p_t = -frame.p_load.copy()
    q_t = -frame.q_load.copy()
    vset = np.ones(grid.n)
    for k, bus in enumerate(frame.gen_bus):
        pos = frame.gen_pos[k]
        if pos != grid.slack:
            p_t[pos] += controls.p_gen_mw.get(bus, 0.0) / base
        vset[pos] = controls.v_set.get(bus, 1.0)
    q_gmin = np.full(grid.n, -np.inf)
    q_gmax = np.full(grid.n, np.inf)
    q_gmin[frame.gen_pos] = frame.q_min
    q_gmax[frame.gen_pos] = frame.q_max
    return pf.solve_ac_pf(grid.ybus, grid.slack, grid.pv, grid.pq, p_t, q_t,
                          vset, q_gmin, q_gmax, frame.q_load, tol, max_iter)


def _lp_step(model: LinModel, controls: Controls, loss_frac, v_step,
             corr: ModelCorrection | None = None,
             flow_margin=None, v_margin=None, rating_factor=1.0):
    """Elastic linear step: soft flow/voltage bands, hard equipment limits.

    With a correction the inequality constants are exact at the current
    operating point, making this a trust-region successive-linearization
    step; the margins tighten constraints that keep re-violating so the
    iteration does not limit-cycle on the nonlinearity.
    """
    frame = model.frame
    oct_rows, oct_rhs, tags = model.octagon_rows(corr.flows if corr else None,
                                                 rating_factor)
    n_oct = len(oct_rhs)
    n_corr = len(frame.grid.corridors)
    nv = model.nv
    n_band = 2 * model.n  # elastic voltage band rows
    n_dev = 4 * model.ng
    total = nv + n_corr + model.n + 2 * model.ng  # + flow slacks + v slacks + t vars
    i_sflow = nv
    i_sv = nv + n_corr
    i_t = i_sv + model.n

    a_ub = np.zeros((n_oct + n_band + n_dev, total))
    b_ub = np.zeros(n_oct + n_band + n_dev)
    a_ub[:n_oct, :nv] = oct_rows
    b_ub[:n_oct] = oct_rhs
    for r, tag in enumerate(tags):
        a_ub[r, i_sflow + tag] = -1.0
        if flow_margin is not None and tag in flow_margin:
            b_ub[r] -= flow_margin[tag]
    row = n_oct
    v_off = corr.v if corr is not None else np.zeros(model.n)
    vm = v_margin or {}
    for i in range(model.n):  # (dv_i + corr) - s_v <= hi ; -(dv_i + corr) - s_v <= -lo
        a_ub[row, model.i_dv + i] = 1.0
        a_ub[row, i_sv + i] = -1.0
        b_ub[row] = frame.v_hi[i] - 1.0 - v_off[i] - vm.get(i, 0.0)
        a_ub[row + 1, model.i_dv + i] = -1.0
        a_ub[row + 1, i_sv + i] = -1.0
        b_ub[row + 1] = 1.0 - frame.v_lo[i] + v_off[i] - vm.get(i, 0.0)
        row += 2
    row = _deviation_block(model, controls, row, a_ub, b_ub, i_t)

    a_eq = np.hstack([model.a_eq, np.zeros((2 * model.n, total - nv))])
    b_eq = model.b_eq(loss_frac)

    bounds = model.core_bounds(wide_v=True)
    # gen-bus voltage setpoints stay inside the hard control band
    for k, pos in enumerate(frame.gen_pos):
        bounds[model.i_dv + pos] = (frame.v_lo[pos] - 1.0, frame.v_hi[pos] - 1.0)
    if corr is not None:
        slack_k = int(np.flatnonzero(frame.gen_pos == frame.grid.slack)[0])
        for k in range(model.ng):
            lo = frame.q_min[k] - corr.qg[k]
            hi = frame.q_max[k] - corr.qg[k]
            bounds[model.i_qg + k] = (min(lo, hi), max(lo, hi))
        lo = frame.p_min[slack_k] - corr.p_slack
        hi = frame.p_max[slack_k] - corr.p_slack
        bounds[model.i_pg + slack_k] = (min(lo, hi), max(lo, hi))
    bounds += [(0.0, None)] * n_corr
    bounds += [(0.0, None)] * model.n
    bounds += [(0.0, None)] * model.ng
    bounds += [(0.0, v_step)] * model.ng

    c = np.zeros(total)
    c[i_sflow:i_sflow + n_corr] = 1e3
    c[i_sv:i_sv + model.n] = 1e3
    c[i_t:] = 1.0

    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    if not res.success:
        return None
    return model.controls_from(res.x)


def _same_controls(a: Controls, b: Controls) -> bool:
    for k in a.p_gen_mw:
        if abs(a.p_gen_mw[k] - b.p_gen_mw.get(k, 0.0)) > 1e-4:
            return False
    for k in a.v_set:
        if abs(a.v_set[k] - b.v_set.get(k, 1.0)) > 1e-6:
            return False
    return True


def _raise_voltage(frame: Frame, controls: Controls, step):
    v_new = {}
    moved = False
    for k, bus in enumerate(frame.gen_bus):
        hi = frame.v_hi[frame.gen_pos[k]]
        cur = controls.v_set.get(bus, 1.0)
        nxt = min(hi, cur + step)
        if nxt > cur + 1e-9:
            moved = True
        v_new[bus] = nxt
    return Controls(dict(controls.p_gen_mw), v_new) if moved else None


def _slp_search(frame: Frame, initial: Controls, *, l_max=None,
                rating_factor=1.0, outer_iters=15, v_step=0.02) -> DispatchResult:
    """Successive-linearization dispatch search on one frame.

    Alternates full NR solves with elastic linear steps on the controls; an
    L-index bound, when given, is checked a posteriori and answered by
    raising voltage setpoints. Returns the best (lowest-penalty) point found
    when no feasible one exists. Deterministic.
    """
    net = frame.grid.topology.net
    model = LinModel(frame)
    controls = initial
    best = None
    loss_frac = 0.02
    flow_margin: dict = {}
    v_margin: dict = {}
    corr_keys = {c.key: idx for idx, c in enumerate(frame.grid.corridors)}
    bus_pos = {f"bus {bid}": i for i, bid in enumerate(frame.grid.bus_ids)}

    for _ in range(outer_iters):
        sol = _run_pf(frame, controls)
        if not sol.converged:
            flat = Controls(dict(controls.p_gen_mw), {b: 1.0 for b in controls.v_set})
            trial = _run_pf(frame, flat)
            if trial.converged:
                controls, sol = flat, trial
        corr = None
        if sol.converged:
            raw, l_val = measure_ac(frame, sol, l_max, rating_factor)
            viols = _clip_tolerance(raw)
            result = DispatchResult(controls, pf.attach_flows(sol, frame.grid),
                                    len(viols) == 0, viols, penalty(viols), l_val)
            if best is None or result.penalty < best.penalty:
                best = result
            if result.feasible:
                return result
            gen_total = sol.slack_p + frame.p_load[frame.grid.slack] + sum(
                controls.p_gen_mw.get(b, 0.0) for k, b in enumerate(frame.gen_bus)
                if frame.gen_pos[k] != frame.grid.slack) / net.base_mva
            loss_frac = float(np.clip(
                (gen_total - frame.p_load.sum()) / max(frame.p_load.sum(), 1e-6),
                0.0, 0.1))
            if all(v.kind == "l" for v in viols):
                nxt = _raise_voltage(frame, controls, 0.01)
                if nxt is None:
                    break
                controls = nxt
                continue
            for v in viols:  # recurring violations earn a growing safety margin
                if v.kind == "flow" and v.where in corr_keys:
                    idx = corr_keys[v.where]
                    flow_margin[idx] = flow_margin.get(idx, 0.0) + 1.2 * v.slack
                elif v.kind == "v" and v.where in bus_pos:
                    i = bus_pos[v.where]
                    v_margin[i] = v_margin.get(i, 0.0) + 1.2 * v.slack
            corr = correction_at(model, frame, controls, sol)
        nxt = _lp_step(model, controls, loss_frac, v_step, corr,
                       flow_margin, v_margin, rating_factor)
        if nxt is None or _same_controls(nxt, controls):
            break
        controls = nxt

    if best is not None:
        return best
    viols = (Violation("divergence", "power flow", DIVERGENCE_SLACK),)
    return DispatchResult(controls, None, False, viols, penalty(viols))


def base_opf(topology: Topology, p_load_mw, q_load_net_mw, *,
             outer_iters=15, v_step=0.02) -> DispatchResult:
    """Find controls satisfying all base-case constraints on the intact
    topology (voltage band, machine limits, continuous ratings, L bound)."""
    net = topology.net
    islands, _comp = strict_island_violations(topology, p_load_mw, q_load_net_mw)
    frame = make_frame(topology, p_load_mw, q_load_net_mw, net.limits.v_base_pct)
    if islands or frame is None or len(frame.gen_pos) == 0:
        viols = tuple(islands) or (
            Violation("island", "slack component", DIVERGENCE_SLACK),)
        return DispatchResult(Controls({}, {}), None, False, viols, penalty(viols))
    return _slp_search(frame, _initial_controls(frame), l_max=net.limits.l_max,
                       rating_factor=1.0, outer_iters=outer_iters, v_step=v_step)


# ---------------------------------------------------------------------------
# Contingency OPF
# ---------------------------------------------------------------------------

def _component_cases(topology: Topology, p_load_mw, q_load_net_mw):
    """Split a post-outage topology into judgeable pieces.

    Yields ("dead", comp) for de-energized parts, ("unserved", violations)
    where load has no source, ("single", bus_id) for one-bus generator
    islands, and ("frame", root) for components needing a network solve.
    """
    net = topology.net
    for comp in components(topology):
        gens = [g for g in net.generators if g.bus in comp]
        load = sum(abs(float(p_load_mw[net.bus_index[b]]))
                   + abs(float(q_load_net_mw[net.bus_index[b]])) for b in comp)
        if not gens:
            if load > 1e-9:
                viols = [Violation("island", f"bus {b}",
                                   (abs(float(p_load_mw[net.bus_index[b]]))
                                    + abs(float(q_load_net_mw[net.bus_index[b]])))
                                   / net.base_mva)
                         for b in comp
                         if abs(float(p_load_mw[net.bus_index[b]]))
                         + abs(float(q_load_net_mw[net.bus_index[b]])) > 1e-9]
                yield ("unserved", viols)
            continue
        if len(comp) == 1:
            yield ("single", gens[0].bus)
            continue
        if net.slack_bus in comp:
            root = net.slack_bus
        else:
            root = max(gens, key=lambda g: g.p_max).bus
        yield ("frame", root)


def _single_bus_check(topology: Topology, bus: int, p_load_mw, q_load_net_mw):
    """An islanded machine carries its own bus load within its limits."""
    net = topology.net
    g = net.generator_at(bus)
    i = net.bus_index[bus]
    s = g.scale_for_year(net, topology.year)
    p_i = float(p_load_mw[i])
    q_i = float(q_load_net_mw[i])
    gap = max(p_i - g.p_max * s, g.p_min * s - p_i, 0.0) \
        + max(q_i - g.q_max * s, g.q_min * s - q_i, 0.0)
    if gap > 1e-9:
        return [Violation("island", f"bus {bus}", gap / net.base_mva)]
    return []


@dataclass
class BaseAnchor:
    """Model errors measured at the intact-system AC operating point, keyed
    by network ids so they transfer onto any post-outage frame. Anchoring the
    contingency model here realizes "small deviations from base values": the
    quadratic losses and voltage sag of the real base point are carried into
    every outage evaluation instead of the flat-start optimism."""

    flows: dict  # corridor id -> (dp_fr, dq_fr, dp_to, dq_to), pu per line
    v: dict  # bus id -> measured minus linear voltage
    qg: dict  # generator bus -> reactive model error, pu
    p_slack: float


def anchor_from_base(frame: Frame, model: LinModel, controls: Controls,
                     sol: pf.PFSolution) -> BaseAnchor:
    corr = correction_at(model, frame, controls, sol)
    flows = {c.id: tuple(corr.flows[idx])
             for idx, c in enumerate(frame.grid.corridors)}
    v = {bid: float(corr.v[i]) for i, bid in enumerate(frame.grid.bus_ids)}
    qg = {bus: float(corr.qg[k]) for k, bus in enumerate(frame.gen_bus)}
    return BaseAnchor(flows, v, qg, corr.p_slack)


def base_anchor_for(topology: Topology, base_result: DispatchResult,
                    p_load_mw, q_load_net_mw) -> BaseAnchor | None:
    """Anchor the contingency model at a converged base dispatch."""
    if base_result.pf_solution is None:
        return None
    net = topology.net
    frame = make_frame(topology, p_load_mw, q_load_net_mw, net.limits.v_base_pct)
    if frame is None:
        return None
    model = LinModel(frame)
    return anchor_from_base(frame, model, base_result.controls,
                            base_result.pf_solution)


def _anchor_arrays(model: LinModel, anchor: BaseAnchor | None):
    frame = model.frame
    m = len(frame.grid.corridors)
    flows = np.zeros((m, 4))
    v = np.zeros(model.n)
    qg = np.zeros(model.ng)
    p_slack = 0.0
    if anchor is not None:
        for idx, c in enumerate(frame.grid.corridors):
            if c.id in anchor.flows:
                flows[idx] = anchor.flows[c.id]
        for i, bid in enumerate(frame.grid.bus_ids):
            v[i] = anchor.v.get(bid, 0.0)
        for k, bus in enumerate(frame.gen_bus):
            qg[k] = anchor.qg.get(bus, 0.0)
        p_slack = anchor.p_slack
    return flows, v, qg, p_slack


def _contingency_bounds(model: LinModel, av, aqg, ap_slack):
    """Core bounds with anchored shifts; generator setpoints stay inside the
    base-case control band (machines do not overexcite to 1.10 in practice)."""
    frame = model.frame
    net = frame.grid.topology.net
    bounds = model.core_bounds()
    for i in range(model.n):
        lo, hi = bounds[model.i_dv + i]
        bounds[model.i_dv + i] = (lo - av[i], hi - av[i])
    nominal = (frame.v_lo + frame.v_hi) / 2.0
    base_band = net.limits.v_base_pct / 100.0
    for k, pos in enumerate(frame.gen_pos):
        lo = nominal[pos] * (1 - base_band) - 1.0 - av[pos]
        hi = nominal[pos] * (1 + base_band) - 1.0 - av[pos]
        bounds[model.i_dv + pos] = (lo, hi)
        bounds[model.i_qg + k] = (frame.q_min[k] - aqg[k], frame.q_max[k] - aqg[k])
    slack_pos = np.flatnonzero(frame.gen_pos == frame.grid.slack)
    if slack_pos.size:
        k = int(slack_pos[0])
        bounds[model.i_pg + k] = (frame.p_min[k] - ap_slack,
                                  frame.p_max[k] - ap_slack)
    return bounds


def _redispatch_lp(model: LinModel, warm: Controls, anchor: BaseAnchor | None,
                   rating_factor=1.0):
    """Minimal-L1 redispatch LP on one frame; None when infeasible."""
    aflows, av, aqg, ap = _anchor_arrays(model, anchor)
    oct_rows, oct_rhs, _tags = model.octagon_rows(aflows, rating_factor)
    nv = model.nv
    n_dev = 4 * model.ng
    total = nv + 2 * model.ng
    n_oct = len(oct_rhs)
    a_ub = np.zeros((n_oct + n_dev, total))
    b_ub = np.zeros(n_oct + n_dev)
    a_ub[:n_oct, :nv] = oct_rows
    b_ub[:n_oct] = oct_rhs
    _deviation_block(model, warm, n_oct, a_ub, b_ub, nv)
    a_eq = np.hstack([model.a_eq, np.zeros((2 * model.n, 2 * model.ng))])
    bounds = _contingency_bounds(model, av, aqg, ap) + [(0.0, None)] * (2 * model.ng)
    c = np.zeros(total)
    c[nv:] = 1.0
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=model.b_eq(),
                  bounds=bounds, method="highs")
    return model.controls_from(res.x) if res.success else None


def _nr_state_violations(frame: Frame, controls: Controls, rating_factor):
    """Full power flow at the controls; contingency-band measurement.

    Divergence counts as infeasible (post-outage collapse indicator).
    Returns (violations, solution or None).
    """
    sol = _run_pf(frame, controls)
    if not sol.converged:
        return [Violation("divergence", "contingency power flow",
                          DIVERGENCE_SLACK)], None
    raw, _ = measure_ac(frame, sol, l_max=None, rating_factor=rating_factor)
    return list(_clip_tolerance(raw)), sol


def contingency_opf(topology: Topology, warm: Controls, p_load_mw,
                    q_load_net_mw, anchor: BaseAnchor | None = None
                    ) -> DispatchResult:
    """Post-outage redispatch feasibility.

    Per connected component: one-bus generator islands carry their own load
    within machine limits; load without a source fails. Network components
    are settled by the linearized redispatch program (anchored at the intact
    operating point) and the verdict is a full power flow at the returned
    controls against emergency ratings and the contingency voltage band; one
    re-anchored refinement round absorbs linearization error. The base-case
    L bound does not apply here.
    """
    net = topology.net
    band = net.limits.v_cont_pct
    factor = net.limits.cont_rating_factor
    merged_p = dict(warm.p_gen_mw)
    merged_v = dict(warm.v_set)
    all_viols: list = []
    for kind, payload in _component_cases(topology, p_load_mw, q_load_net_mw):
        if kind == "unserved":
            all_viols.extend(payload)
        elif kind == "single":
            all_viols.extend(_single_bus_check(topology, payload, p_load_mw,
                                               q_load_net_mw))
            continue
        else:
            frame = make_frame(topology, p_load_mw, q_load_net_mw, band,
                               root=payload)
            if frame is None or len(frame.gen_pos) == 0:
                all_viols.append(Violation("island", f"component at bus {payload}",
                                           DIVERGENCE_SLACK))
                continue
            viols_w, sol_w = _nr_state_violations(frame, warm, factor)
            if not viols_w:
                continue
            model = LinModel(frame)
            step_anchor = anchor
            if sol_w is not None:
                step_anchor = anchor_from_base(frame, model, warm, sol_w)
            best_viols = viols_w
            fixed = _redispatch_lp(model, warm, step_anchor, factor)
            accepted = False
            for _round in range(2):
                if fixed is None:
                    break
                viols_f, sol_f = _nr_state_violations(frame, fixed, factor)
                if not viols_f:
                    merged_p.update(fixed.p_gen_mw)
                    merged_v.update(fixed.v_set)
                    accepted = True
                    break
                if len(viols_f) <= len(best_viols):
                    best_viols = viols_f
                if sol_f is None:
                    break
                step_anchor = anchor_from_base(frame, model, fixed, sol_f)
                fixed = _redispatch_lp(model, fixed, step_anchor, factor)
            if not accepted:
                deep = _slp_search(frame, warm, l_max=None,
                                   rating_factor=factor, outer_iters=8)
                if deep.feasible:
                    merged_p.update(deep.controls.p_gen_mw)
                    merged_v.update(deep.controls.v_set)
                else:
                    all_viols.extend(best_viols if penalty(best_viols)
                                     <= deep.penalty else list(deep.violations))
    controls = Controls(merged_p, merged_v)
    if all_viols:
        return DispatchResult(warm, None, False, tuple(all_viols),
                              penalty(all_viols))
    return DispatchResult(controls, None, True, (), 0.0)


def pre_redispatch_violations(topology: Topology, warm: Controls,
                              p_load_mw, q_load_net_mw,
                              anchor: BaseAnchor | None = None):
    """Warm-start linear-state violations in the true MVA norm (for screening)."""
    net = topology.net
    band = net.limits.v_cont_pct
    out: list = []
    for kind, payload in _component_cases(topology, p_load_mw, q_load_net_mw):
        if kind == "unserved":
            out.extend(payload)
        elif kind == "single":
            out.extend(_single_bus_check(topology, payload, p_load_mw,
                                         q_load_net_mw))
        else:
            frame = make_frame(topology, p_load_mw, q_load_net_mw, band,
                               root=payload)
            if frame is None:
                continue
            model = LinModel(frame)
            x0 = model.solve_at_controls(warm)
            out.extend(_clip_tolerance(
                model.measure_linear(x0, flow_norm="true", anchor=anchor)))
    return out


# ---------------------------------------------------------------------------
# Independent rechecks (soundness oracles)
# ---------------------------------------------------------------------------

def recheck_base(topology: Topology, controls: Controls, p_load_mw, q_load_net_mw):
    """Fresh NR at the given controls; returns (feasible, violations)."""
    net = topology.net
    islands, _comp = strict_island_violations(topology, p_load_mw, q_load_net_mw)
    frame = make_frame(topology, p_load_mw, q_load_net_mw, net.limits.v_base_pct)
    if islands or frame is None:
        return False, list(islands)
    sol = _run_pf(frame, controls)
    if not sol.converged:
        return False, [Violation("divergence", "power flow", DIVERGENCE_SLACK)]
    raw, _ = measure_ac(frame, sol, net.limits.l_max)
    viols = _clip_tolerance(raw)
    return len(viols) == 0, list(viols)


def recheck_contingency(topology: Topology, controls: Controls,
                        p_load_mw, q_load_net_mw,
                        anchor: BaseAnchor | None = None):
    """Independent re-evaluation at the given controls: power flow per
    network component against emergency ratings and the contingency band,
    machine-limit arithmetic for one-bus islands."""
    net = topology.net
    band = net.limits.v_cont_pct
    factor = net.limits.cont_rating_factor
    out: list = []
    for kind, payload in _component_cases(topology, p_load_mw, q_load_net_mw):
        if kind == "unserved":
            out.extend(payload)
        elif kind == "single":
            out.extend(_single_bus_check(topology, payload, p_load_mw,
                                         q_load_net_mw))
        else:
            frame = make_frame(topology, p_load_mw, q_load_net_mw, band,
                               root=payload)
            if frame is None:
                out.append(Violation("island", f"component at bus {payload}",
                                     DIVERGENCE_SLACK))
                continue
            viols, _sol = _nr_state_violations(frame, controls, factor)
            out.extend(viols)
    return len(out) == 0, out


# ---------------------------------------------------------------------------
# Reactive-support sizing (the "simplistic RPP" used by sequential planning)
# ---------------------------------------------------------------------------

def size_reactive_support(topology: Topology, p_load_mw, q_load_net_mw,
                          corr: ModelCorrection | None = None,
                          controls: Controls | None = None,
                          v_margin=0.004):
    """Smallest added shunt MVAr per load bus that restores the voltage band.

    One linear program with nonnegative injection variables at every
    non-generator bus, hard voltage band (tightened by ``v_margin`` to absorb
    linearization error), elastic flow caps. When a measured operating point
    is supplied (controls + correction) the program is exact there. Returns
    {bus id: MVAr}, empty when no support is needed or none helps.
    """
    net = topology.net
    islands, _comp = strict_island_violations(topology, p_load_mw, q_load_net_mw)
    frame = make_frame(topology, p_load_mw, q_load_net_mw, net.limits.v_base_pct)
    if islands or frame is None:
        return {}
    model = LinModel(frame)
    load_pos = [i for i in range(frame.grid.n) if i not in set(frame.gen_pos)]
    if not load_pos:
        return {}
    nv = model.nv
    n_rc = len(load_pos)
    n_corr = len(frame.grid.corridors)
    total = nv + n_rc + n_corr
    oct_rows, oct_rhs, tags = model.octagon_rows(corr.flows if corr else None)
    a_ub = np.zeros((len(oct_rhs), total))
    b_ub = oct_rhs.copy()
    a_ub[:, :nv] = oct_rows
    for r, tag in enumerate(tags):
        a_ub[r, nv + n_rc + tag] = -1.0
    a_eq = np.hstack([model.a_eq, np.zeros((2 * model.n, n_rc + n_corr))])
    for k, pos in enumerate(load_pos):
        a_eq[model.n + pos, nv + k] = -1.0  # q_rc injects like a generator
    bounds = model.core_bounds()
    v_off = corr.v if corr is not None else np.zeros(model.n)
    for i in range(model.n):
        lo = frame.v_lo[i] - 1.0 - v_off[i] + v_margin
        hi = frame.v_hi[i] - 1.0 - v_off[i] - v_margin
        if lo > hi:
            lo = hi = 0.5 * (lo + hi)
        bounds[model.i_dv + i] = (lo, hi)
    if corr is not None:
        for k in range(model.ng):
            bounds[model.i_qg + k] = (frame.q_min[k] - corr.qg[k],
                                      frame.q_max[k] - corr.qg[k])
    bounds += [(0.0, None)] * n_rc
    bounds += [(0.0, None)] * n_corr
    c = np.zeros(total)
    c[nv:nv + n_rc] = 1.0
    c[nv + n_rc:] = 1e3
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=model.b_eq(0.02),
                  bounds=bounds, method="highs")
    if not res.success:
        return {}
    base = net.base_mva
    out = {}
    for k, pos in enumerate(load_pos):
        mvar = float(res.x[nv + k]) * base
        if mvar > 0.5:
            out[frame.grid.bus_ids[pos]] = round(mvar, 1)
    return out
