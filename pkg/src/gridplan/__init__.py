"""Multi-year, N-1 security constrained AC transmission expansion planning."""

from .netmodel import (Bus, CaseError, ContingencyState, Corridor,
                       ExpansionPlan, Generator, Network, PlanError,
                       ReactivePlan, Topology, bundled_case, demand_for_year,
                       load_case, realize_topology, resolve_case)

__all__ = [
    "Bus", "CaseError", "ContingencyState", "Corridor", "ExpansionPlan",
    "Generator", "Network", "PlanError", "ReactivePlan", "Topology",
    "bundled_case", "demand_for_year", "load_case", "realize_topology",
    "resolve_case",
]
