"""Network domain model: case ingestion, per-year demand scaling, topology realization.

Loads are kept in MW/MVAr on the case's MVA base; impedances are per unit.
A planning case bundles the physical network, the candidate-corridor catalog
and the horizon economics (per-year demand growth and discount factors).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

BUS_SLACK = "slack"
BUS_PV = "pv"
BUS_PQ = "pq"


class CaseError(ValueError):
    """Malformed or inconsistent case data. The message names the offending record."""


@dataclass(frozen=True)
class Bus:
    id: int
    type: str  # slack | pv | pq
    v_nominal: float = 1.0


@dataclass(frozen=True)
class Generator:
    """Aggregate dispatchable unit at one bus. Limits in MW / MVAr.

    ``growth`` is either "demand" (limits scale with the per-year demand
    growth factor) or a per-year tuple of explicit scale factors.
    """

    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    growth: object = "demand"

    def scale_for_year(self, net: "Network", year: int) -> float:
        if self.growth == "demand":
            return net.horizon.growth[year - 1]
        return float(self.growth[year - 1])


@dataclass(frozen=True)
class Corridor:
    """Candidate right-of-way. Parallel circuits share identical parameters.

    Same-endpoint corridors with a different ``cls`` tag are distinct
    sub-corridors and are enumerated separately in N-1 analysis.
    """

    id: int  # ordinal in the catalog
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float  # half line-charging susceptance per circuit (pu)
    rating: float  # MVA per circuit
    cost: float  # cost of one added circuit, case currency unit
    max_new: int
    existing: int
    cls: str = "a"

    @property
    def key(self) -> str:
        tag = f"/{self.cls}" if self.cls != "a" else ""
        return f"{self.from_bus}-{self.to_bus}{tag}"


@dataclass(frozen=True)
class Limits:
    v_base_pct: float = 5.0
    v_cont_pct: float = 10.0
    l_max: float = 0.4
    cont_rating_factor: float = 1.0  # short-term emergency rating multiple


@dataclass(frozen=True)
class Horizon:
    years: int
    growth: tuple  # multiplicative demand factor per year, year 1 = 1.0
    discount: tuple  # investment discount factor per year, year 1 = 1.0


@dataclass(frozen=True)
class Network:
    """Immutable planning universe: buses, machines, loads, corridor catalog."""

    name: str
    base_mva: float
    buses: tuple
    generators: tuple
    corridors: tuple
    p_load: np.ndarray  # MW per bus (bus order)
    q_load: np.ndarray  # MVAr per bus
    horizon: Horizon
    limits: Limits

    def __post_init__(self):
        self.p_load.setflags(write=False)
        self.q_load.setflags(write=False)
        _validate_network(self)

    # -- index helpers -------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_index(self) -> dict:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.type == BUS_SLACK)

    @property
    def gen_buses(self) -> tuple:
        return tuple(g.bus for g in self.generators)

    @property
    def load_buses(self) -> tuple:
        """Buses not hosting a generator (the q_rc / L-index load set)."""
        gens = set(self.gen_buses)
        return tuple(b.id for b in self.buses if b.id not in gens)

    def generator_at(self, bus_id: int):
        for g in self.generators:
            if g.bus == bus_id:
                return g
        return None

    def corridors_between(self, i: int, j: int) -> list:
        pair = {i, j}
        return [c for c in self.corridors if {c.from_bus, c.to_bus} == pair]

    # -- derived views -------------------------------------------------
    def with_horizon(self, year: int) -> "Network":
        """Single-year copy typed for static planning at ``year``'s demand.

        Generator limits are folded in at their year-``year`` scale so the
        resulting one-year case is self-contained.
        """
        h = self.horizon
        if not 1 <= year <= h.years:
            raise ValueError(f"year {year} outside horizon 1..{h.years}")
        gens = tuple(
            Generator(g.bus, g.p_min * g.scale_for_year(self, year),
                      g.p_max * g.scale_for_year(self, year),
                      g.q_min * g.scale_for_year(self, year),
                      g.q_max * g.scale_for_year(self, year), "demand")
            for g in self.generators
        )
        return Network(
            name=f"{self.name}-y{year}",
            base_mva=self.base_mva,
            buses=self.buses,
            generators=gens,
            corridors=self.corridors,
            p_load=self.p_load * h.growth[year - 1],
            q_load=self.q_load * h.growth[year - 1],
            horizon=Horizon(1, (1.0,), (1.0,)),
            limits=self.limits,
        )

    def with_added_circuits(self, added: np.ndarray) -> "Network":
        """Copy with ``added[l]`` extra existing circuits per corridor."""
        cors = []
        for c in self.corridors:
            extra = int(added[c.id])
            if extra:
                cors.append(
                    Corridor(c.id, c.from_bus, c.to_bus, c.r, c.x, c.b, c.rating,
                             c.cost, max(0, c.max_new - extra), c.existing + extra, c.cls)
                )
            else:
                cors.append(c)
        return Network(
            name=self.name, base_mva=self.base_mva, buses=self.buses,
            generators=self.generators, corridors=tuple(cors),
            p_load=self.p_load.copy(), q_load=self.q_load.copy(),
            horizon=self.horizon, limits=self.limits,
        )


def _validate_network(net: Network) -> None:
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus id in bus table")
    idset = set(ids)
    slacks = [b for b in net.buses if b.type == BUS_SLACK]
    if len(slacks) != 1:
        raise CaseError(f"exactly one slack bus required, found {len(slacks)}")
    if slacks[0].id not in set(net.gen_buses):
        raise CaseError(f"slack bus {slacks[0].id} has no generator")
    by_type = {b.id: b.type for b in net.buses}
    gen_buses = [g.bus for g in net.generators]
    if len(set(gen_buses)) != len(gen_buses):
        raise CaseError("more than one generator record at a bus; aggregate them")
    for g in net.generators:
        if g.bus not in idset:
            raise CaseError(f"generator references unknown bus {g.bus}")
        if g.p_min > g.p_max or g.q_min > g.q_max:
            raise CaseError(f"generator at bus {g.bus}: min limit above max")
        if by_type[g.bus] == BUS_PQ:
            raise CaseError(f"generator at bus {g.bus}: bus must be typed pv or slack")
    for b in net.buses:
        if b.type in (BUS_PV, BUS_SLACK) and b.id not in set(gen_buses):
            raise CaseError(f"bus {b.id} is typed {b.type} but hosts no generator")
    seen = set()
    for c in net.corridors:
        if c.from_bus not in idset or c.to_bus not in idset:
            raise CaseError(f"corridor {c.key}: endpoint not a known bus")
        if c.from_bus == c.to_bus:
            raise CaseError(f"corridor {c.key}: self-loop")
        trip = (min(c.from_bus, c.to_bus), max(c.from_bus, c.to_bus), c.cls)
        if trip in seen:
            raise CaseError(f"duplicate corridor {c.key}")
        seen.add(trip)
        if c.x <= 0:
            raise CaseError(f"corridor {c.key}: reactance must be positive")
        if c.rating <= 0:
            raise CaseError(f"corridor {c.key}: rating must be positive")
        if c.cost < 0 or c.max_new < 0 or c.existing < 0:
            raise CaseError(f"corridor {c.key}: negative cost/line-count field")
    h = net.horizon
    if h.years < 1:
        raise CaseError("horizon must span at least one year")
    if len(h.growth) != h.years or len(h.discount) != h.years:
        raise CaseError("growth/discount factor lists must match the horizon length")
    if any(f <= 0 for f in h.growth) or any(f <= 0 for f in h.discount):
        raise CaseError("growth and discount factors must be positive")
    if np.any(net.p_load < 0) or np.any(net.q_load < 0):
        i = int(np.argmin(np.minimum(net.p_load, net.q_load)))
        raise CaseError(f"negative demand at bus {net.buses[i].id}")


# ---------------------------------------------------------------------------
# Expansion plans
# ---------------------------------------------------------------------------

class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExpansionPlan:
    """Cumulative new-line counts, shape (corridors, years).

    ``n[l, y]`` is the total number of new circuits present in corridor ``l``
    during year ``y+1``; per-year builds are the first differences.
    """

    n: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.n, dtype=int)
        object.__setattr__(self, "n", arr)
        arr.setflags(write=False)

    @classmethod
    def empty(cls, n_corridors: int, years: int) -> "ExpansionPlan":
        return cls(np.zeros((n_corridors, years), dtype=int))

    @classmethod
    def from_additions(cls, net: Network, additions: dict) -> "ExpansionPlan":
        """Build from {corridor key or id: [incremental adds per year]}."""
        years = net.horizon.years
        keymap = {c.key: c.id for c in net.corridors}
        n = np.zeros((len(net.corridors), years), dtype=int)
        for key, incs in additions.items():
            cid = key if isinstance(key, int) else keymap.get(str(key))
            if cid is None or not 0 <= cid < len(net.corridors):
                raise PlanError(f"unknown corridor {key!r} in plan")
            if len(incs) != years:
                raise PlanError(f"corridor {key}: expected {years} yearly entries")
            n[cid] = np.cumsum(incs)
        return cls(n)

    @property
    def years(self) -> int:
        return self.n.shape[1]

    def increments(self) -> np.ndarray:
        return np.diff(np.hstack([np.zeros((self.n.shape[0], 1), int), self.n]), axis=1)

    def validate(self, net: Network) -> None:
        if self.n.shape != (len(net.corridors), net.horizon.years):
            raise PlanError(
                f"plan shape {self.n.shape} does not match "
                f"({len(net.corridors)}, {net.horizon.years})"
            )
        if np.any(self.n < 0):
            raise PlanError("negative line count in plan")
        if np.any(np.diff(self.n, axis=1) < 0):
            l = int(np.argwhere(np.diff(self.n, axis=1) < 0)[0][0])
            raise PlanError(f"corridor {net.corridors[l].key}: lines removed between years")
        caps = np.array([c.max_new for c in net.corridors])
        if np.any(self.n[:, -1] > caps):
            l = int(np.argmax(self.n[:, -1] - caps))
            raise PlanError(
                f"corridor {net.corridors[l].key}: {int(self.n[l, -1])} new lines "
                f"exceeds cap {int(caps[l])}"
            )

    def is_valid(self, net: Network) -> bool:
        try:
            self.validate(net)
            return True
        except PlanError:
            return False


@dataclass(frozen=True)
class ReactivePlan:
    """Added shunt compensation (MVAr) per load bus per year, nonnegative."""

    q_rc: np.ndarray  # shape (n_load_buses, years)

    def __post_init__(self):
        arr = np.asarray(self.q_rc, dtype=float)
        if np.any(arr < 0):
            raise PlanError("reactive compensation must be nonnegative")
        object.__setattr__(self, "q_rc", arr)
        arr.setflags(write=False)

    @classmethod
    def zero(cls, net: Network) -> "ReactivePlan":
        return cls(np.zeros((len(net.load_buses), net.horizon.years)))


# ---------------------------------------------------------------------------
# Contingencies and realized topologies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContingencyState:
    """k = 0 is the intact system; otherwise one circuit of ``corridor_id`` is out."""

    k: int
    corridor_id: int | None = None

    @classmethod
    def base(cls) -> "ContingencyState":
        return cls(0, None)


@dataclass(frozen=True)
class Topology:
    """In-service circuit counts per corridor for one (plan, year, contingency)."""

    net: Network
    counts: np.ndarray  # circuits per corridor
    year: int
    state: ContingencyState

    def __post_init__(self):
        self.counts.setflags(write=False)

    def in_service(self) -> list:
        return [c for c in self.net.corridors if self.counts[c.id] > 0]


def demand_for_year(net: Network, year: int):
    """Per-bus (P, Q) demand in MW/MVAr for the given horizon year."""
    if not 1 <= year <= net.horizon.years:
        raise ValueError(f"year {year} outside horizon 1..{net.horizon.years}")
    f = net.horizon.growth[year - 1]
    return net.p_load * f, net.q_load * f


def realize_topology(net: Network, plan: ExpansionPlan, year: int,
                     state: ContingencyState = ContingencyState.base()) -> Topology:
    """Circuit counts in year ``year``: existing + cumulative new, minus the outage."""
    plan.validate(net)
    counts = np.array([c.existing for c in net.corridors]) + plan.n[:, year - 1]
    if state.k != 0:
        cid = state.corridor_id
        if cid is None or not 0 <= cid < len(net.corridors):
            raise ValueError(f"contingency {state.k}: invalid corridor id {cid}")
        if counts[cid] < 1:
            raise ValueError(
                f"contingency on corridor {net.corridors[cid].key} "
                f"which has no circuits in year {year}"
            )
        counts = counts.copy()
        counts[cid] -= 1
    return Topology(net=net, counts=counts, year=year, state=state)


# ---------------------------------------------------------------------------
# Case files
# ---------------------------------------------------------------------------

def load_case(path) -> Network:
    """Parse and validate a JSON case file into a Network."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise CaseError(f"case file not found: {p}")
    except json.JSONDecodeError as e:
        raise CaseError(f"case file {p.name} is not valid JSON: {e}")
    return network_from_dict(raw)


def bundled_case(name: str) -> Network:
    """Load one of the packaged cases (garver6, garver6_existing, ieee24, ieee118)."""
    ref = resources.files("gridplan.cases").joinpath(f"{name}.case")
    if not ref.is_file():
        raise CaseError(f"no bundled case named {name!r}")
    return network_from_dict(json.loads(ref.read_text()))


def resolve_case(spec: str) -> Network:
    """Accept either a bundled case name or a filesystem path."""
    if Path(spec).exists():
        return load_case(spec)
    try:
        return bundled_case(spec)
    except CaseError:
        raise CaseError(f"{spec!r} is neither a readable file nor a bundled case")


def network_from_dict(raw: dict) -> Network:
    def need(section):
        if section not in raw:
            raise CaseError(f"case is missing the {section!r} section")
        return raw[section]

    meta = need("meta")
    years = int(meta.get("horizon", 1))
    growth = tuple(float(g) for g in meta.get("growth_factors", [1.0] * years))
    if "discount_factors" in meta:
        discount = tuple(float(d) for d in meta["discount_factors"])
    else:
        d = float(meta.get("discount_rate", 0.0))
        discount = tuple(1.0 / (1.0 + d) ** (y - 1) for y in range(1, years + 1))

    buses = []
    for rec in need("buses"):
        btype = rec.get("type", BUS_PQ)
        if btype not in (BUS_SLACK, BUS_PV, BUS_PQ):
            raise CaseError(f"bus {rec.get('id')}: unknown type {btype!r}")
        buses.append(Bus(int(rec["id"]), btype, float(rec.get("v_nominal", 1.0))))

    gens = []
    for rec in need("generators"):
        growth_spec = rec.get("growth", "demand")
        if growth_spec != "demand":
            growth_spec = tuple(float(g) for g in growth_spec)
        gens.append(Generator(int(rec["bus"]), float(rec.get("p_min", 0.0)),
                              float(rec["p_max"]), float(rec["q_min"]),
                              float(rec["q_max"]), growth_spec))

    index = {b.id: i for i, b in enumerate(buses)}
    p_load = np.zeros(len(buses))
    q_load = np.zeros(len(buses))
    for rec in need("loads"):
        bid = int(rec["bus"])
        if bid not in index:
            raise CaseError(f"load references unknown bus {bid}")
        p_load[index[bid]] += float(rec["p"])
        q_load[index[bid]] += float(rec["q"])

    corridors = []
    for i, rec in enumerate(need("corridors")):
        corridors.append(Corridor(
            id=i, from_bus=int(rec["from"]), to_bus=int(rec["to"]),
            r=float(rec.get("r", 0.0)), x=float(rec["x"]), b=float(rec.get("b", 0.0)),
            rating=float(rec["rating"]), cost=float(rec["cost"]),
            max_new=int(rec.get("max_new", 0)), existing=int(rec.get("existing", 0)),
            cls=str(rec.get("class", "a")),
        ))

    lim = raw.get("limits", {})
    limits = Limits(float(lim.get("v_base_pct", 5.0)),
                    float(lim.get("v_cont_pct", 10.0)),
                    float(lim.get("l_max", 0.4)),
                    float(lim.get("cont_rating_factor", 1.0)))

    return Network(
        name=str(meta.get("name", "case")),
        base_mva=float(meta.get("base_mva", 100.0)),
        buses=tuple(buses),
        generators=tuple(gens),
        corridors=tuple(corridors),
        p_load=p_load,
        q_load=q_load,
        horizon=Horizon(years, growth, discount),
        limits=limits,
    )
