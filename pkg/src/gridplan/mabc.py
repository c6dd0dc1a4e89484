"""Bee-colony search over integer corridor-addition matrices.

Employed, onlooker and scout phases over a colony of candidate plans, with a
best-solution guidance term. Every plan handed to the fitness evaluator is
repaired first, so the evaluator only ever sees monotone, capped, in-space
plans. Per-member RNG streams are derived from the run seed, which makes runs
bit-reproducible regardless of evaluation order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import ExpansionPlan


@dataclass(frozen=True)
class MabcParams:
    colony: int = 20
    neighbors: int = 2  # peers drawn per move; the fittest of them is used
    limit: int = 6  # failed improvements before a member is abandoned
    iterations: int = 30
    guidance: float = 1.5  # weight on the pull toward the best-so-far plan
    seed: int = 0

    def __post_init__(self):
        if min(self.colony, self.neighbors, self.limit) < 1 or self.iterations < 0:
            raise ValueError("colony, neighbors and limit must be >= 1")
        if self.guidance < 0:
            raise ValueError("guidance weight must be nonnegative")


@dataclass
class SearchSpace:
    """Feasible set of plans: which corridors may take new lines and how many.

    ``required`` corridors must end the horizon with at least one new line
    (enforced by repair); ``caps`` indexes the full corridor catalog.
    """

    n_corridors: int
    years: int
    corridor_ids: tuple
    caps: np.ndarray  # per catalog corridor; zero outside corridor_ids
    required: tuple = ()
    warm: ExpansionPlan | None = None

    def __post_init__(self):
        if not self.corridor_ids:
            raise ValueError("search space has no corridors")
        caps = np.zeros(self.n_corridors, dtype=int)
        allowed = np.asarray(self.caps, dtype=int)
        for cid in self.corridor_ids:
            caps[cid] = allowed[cid]
        self.caps = caps
        missing = [cid for cid in self.required if caps[cid] < 1]
        if missing:
            raise ValueError(f"required corridors {missing} have a zero line cap")


@dataclass
class FoodSource:
    plan: ExpansionPlan
    fitness: float
    trials: int = 0


def repair(matrix: np.ndarray, space: SearchSpace) -> ExpansionPlan:
    """Clamp into the space: nonnegative, monotone over years, capped,
    zero outside allowed corridors, required corridors built by the end."""
    n = np.array(matrix, dtype=int)
    n = np.maximum(n, 0)
    n = np.minimum(n, space.caps[:, None])
    n = np.maximum.accumulate(n, axis=1)
    n = np.minimum(n, space.caps[:, None])  # cummax cannot exceed caps once clamped
    mask = np.zeros(space.n_corridors, dtype=bool)
    mask[list(space.corridor_ids)] = True
    n[~mask] = 0
    for cid in space.required:
        if n[cid, -1] < 1:
            n[cid, -1] = 1
    return ExpansionPlan(n)


def random_plan(space: SearchSpace, rng: np.random.Generator) -> ExpansionPlan:
    """Sparse random member: roughly half the corridors stay untouched."""
    n = np.zeros((space.n_corridors, space.years), dtype=int)
    for cid in space.corridor_ids:
        cap = space.caps[cid]
        if cap < 1 or rng.uniform() < 0.5:
            continue
        draws = rng.integers(0, cap + 1, size=space.years)
        n[cid] = np.sort(draws)
    for cid in space.required:
        n[cid] = np.maximum(n[cid], 1)
    return repair(n, space)


def neighbor(src: ExpansionPlan, colony, best: ExpansionPlan, space: SearchSpace,
             params: MabcParams, rng: np.random.Generator) -> ExpansionPlan:
    """Move rule: on a random coordinate subset, step toward/away from a peer
    with a guided pull toward the best plan, then round, clamp and repair."""
    x = src.n.astype(float).copy()
    dims = [(cid, y) for cid in space.corridor_ids for y in range(space.years)]
    max_pick = max(1, len(dims) // 4)
    n_pick = int(rng.integers(1, max_pick + 1))
    picks = rng.choice(len(dims), size=n_pick, replace=False)
    others = [m for m in colony if m.plan is not src]
    if others:
        drawn = [others[i] for i in rng.choice(len(others),
                                               size=min(params.neighbors, len(others)),
                                               replace=False)]
        peer = min(drawn, key=lambda m: m.fitness).plan.n
    else:
        peer = src.n
    for d in picks:
        cid, y = dims[int(d)]
        phi = rng.uniform(-1.0, 1.0)
        psi = rng.uniform(0.0, 1.0)
        val = (x[cid, y] + phi * (x[cid, y] - peer[cid, y])
               + params.guidance * psi * (best.n[cid, y] - x[cid, y]))
        x[cid, y] = np.rint(val)
    out = repair(x, space)
    if np.array_equal(out.n, src.n):
        # force at least one coordinate to move; repair may undo a push at a
        # bound, so try a few picks
        for d in rng.permutation(len(dims)):
            cid, y = dims[int(d)]
            bump = x.copy()
            bump[cid, y] += 1 if rng.uniform() < 0.5 else -1
            out = repair(bump, space)
            if not np.array_equal(out.n, src.n):
                break
    return out


def variance(colony) -> float:
    """Population variance of the colony's fitness values."""
    vals = np.array([m.fitness for m in colony], dtype=float)
    return float(np.var(vals))


def run(fitness, space: SearchSpace, params: MabcParams, on_iteration=None):
    """Minimize ``fitness`` over the space; returns (best FoodSource, history).

    ``history`` holds the best-so-far fitness after each iteration and is
    monotone nonincreasing. Ties keep the incumbent.
    """
    seq = np.random.SeedSequence(params.seed)
    colony_rng = np.random.default_rng(seq.spawn(1)[0])
    member_rngs = [np.random.default_rng(s) for s in seq.spawn(params.colony)]

    colony = []
    for i in range(params.colony):
        if i == 0 and space.warm is not None:
            plan = repair(space.warm.n, space)
        else:
            plan = random_plan(space, member_rngs[i])
        colony.append(FoodSource(plan, float(fitness(plan))))
    best = min(colony, key=lambda m: m.fitness)
    best = FoodSource(best.plan, best.fitness)
    history = []

    def try_move(i: int, rng) -> None:
        nonlocal best
        member = colony[i]
        cand = neighbor(member.plan, colony, best.plan, space, params, rng)
        f = float(fitness(cand))
        if f < member.fitness:
            colony[i] = FoodSource(cand, f, 0)
            if f < best.fitness:
                best = FoodSource(cand, f)
        else:
            member.trials += 1

    for it in range(params.iterations):
        for i in range(params.colony):
            try_move(i, member_rngs[i])
        weights = np.array([1.0 / (1.0 + m.fitness) for m in colony])
        probs = weights / weights.sum()
        chosen = colony_rng.choice(params.colony, size=params.colony, p=probs)
        for i in chosen:
            try_move(int(i), member_rngs[int(i)])
        for i in range(params.colony):
            if colony[i].trials > params.limit:
                plan = random_plan(space, member_rngs[i])
                colony[i] = FoodSource(plan, float(fitness(plan)), 0)
                if colony[i].fitness < best.fitness:
                    best = FoodSource(plan, colony[i].fitness)
        history.append(best.fitness)
        if on_iteration is not None:
            on_iteration(it, best, colony)
    return best, history
