"""Command-line entry points: solve / screen / verify / tune.

Runs are trial-based: each trial is an independently seeded pipeline run and
the best-cost feasible trial is reported. Reports are deterministic for a
given config and seed (all wall-clock data lives under the ``timing`` key).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import mabc, planner
from .contingency import n1_verify, security_screen
from .netmodel import CaseError, ExpansionPlan, PlanError, resolve_case

MODES = ("stage1", "stage2", "stage3", "stage4", "four-stage", "sequential",
         "rigorous", "screen", "verify", "tune")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def thread_cap() -> int:
    raw = os.environ.get("GRIDPLAN_THREADS", "")
    try:
        n = int(raw)
        return max(1, n)
    except ValueError:
        return max(1, os.cpu_count() or 1)


def parse_params(pairs):
    """--param k=v overrides for the search parameters."""
    fields = {"colony": int, "neighbors": int, "limit": int,
              "iterations": int, "guidance": float,
              "dc_colony": int, "dc_iterations": int}
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ValueError(f"--param expects k=v, got {pair!r}")
        k, v = pair.split("=", 1)
        if k not in fields:
            raise ValueError(f"unknown parameter {k!r} (one of {sorted(fields)})")
        out[k] = fields[k](v)
    return out


def params_from(overrides, base=planner.AC_PARAMS, prefix=""):
    kw = {f: getattr(base, f) for f in
          ("colony", "neighbors", "limit", "iterations", "guidance")}
    for k, v in overrides.items():
        if prefix and k.startswith(prefix):
            kw[k[len(prefix):]] = v
        elif not prefix and not k.startswith("dc_"):
            kw[k] = v
    return mabc.MabcParams(**kw)


def plan_rows(net, plan: ExpansionPlan):
    """(year, corridor, lines added, cost) rows for plan.csv."""
    inc = plan.increments()
    rows = []
    for y in range(plan.years):
        for c in net.corridors:
            if inc[c.id, y]:
                rows.append({"year": y + 1, "corridor": c.key,
                             "lines_added": int(inc[c.id, y]),
                             "cost": c.cost * int(inc[c.id, y])})
    return rows


def plan_payload(net, plan: ExpansionPlan):
    inc = plan.increments()
    costs = np.array([c.cost for c in net.corridors])
    return {
        "cumulative": {c.key: [int(v) for v in plan.n[c.id]]
                       for c in net.corridors if plan.n[c.id, -1]},
        "v_lc_per_year": [float(inc[:, y] @ costs) for y in range(plan.years)],
        "lines_per_year": [int(inc[:, y].sum()) for y in range(plan.years)],
        "v_d": planner.discounted_cost(plan, net),
    }


def load_plan_file(net, path) -> ExpansionPlan:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise PlanError(f"plan file not found: {path}")
    except json.JSONDecodeError as e:
        raise PlanError(f"plan file {path} is not valid JSON: {e}")
    if "additions" in raw:
        plan = ExpansionPlan.from_additions(net, raw["additions"])
    elif "cumulative" in raw:
        keymap = {c.key: c.id for c in net.corridors}
        n = np.zeros((len(net.corridors), net.horizon.years), dtype=int)
        for key, counts in raw["cumulative"].items():
            if key not in keymap:
                raise PlanError(f"unknown corridor {key!r} in plan file")
            n[keymap[key]] = counts
        plan = ExpansionPlan(n)
    else:
        raise PlanError("plan file needs an 'additions' or 'cumulative' section")
    plan.validate(net)
    return plan


# ---------------------------------------------------------------------------
# Trial execution (module-level so process pools can pickle it)
# ---------------------------------------------------------------------------

def _solve_trial(case_spec, mode, seed, overrides, strategies):
    net = resolve_case(case_spec)
    ac = params_from(overrides, planner.AC_PARAMS)
    dc = params_from(overrides, planner.DC_PARAMS, prefix="dc_")
    t0 = time.perf_counter()
    if mode == "sequential":
        res = planner.sequential_plan(net, seed, dc_params=dc, ac_params=ac)
        return {
            "trial_seed": seed,
            "cost": res.cost,
            "feasible": True,
            "plan": plan_payload(net, res.plan),
            "q_rc": {str(y): v for y, v in res.q_rc.items()},
            "history": [],
            "stages": [{"name": f"year{i+1}", "cost": r.final.cost,
                        "fitness": r.final.fitness,
                        "counters": r.final.counters.to_dict()}
                       for i, r in enumerate(res.per_year)],
            "n1_ok": None,
            "wall_s": time.perf_counter() - t0,
        }
    rep = planner.run_pipeline(net, mode, seed, dc_params=dc, ac_params=ac,
                               strategies=strategies)
    final = rep.final
    feasible = abs(final.fitness - final.cost) < 1e-6
    out = {
        "trial_seed": seed,
        "cost": final.cost,
        "fitness": final.fitness,
        "feasible": feasible,
        "plan": plan_payload(net, final.plan),
        "q_rc": {str(y): v for y, v in rep.q_rc.items()},
        "history": [float(h) for h in final.history],
        "stages": [{"name": s.name, "cost": s.cost, "fitness": s.fitness,
                    "counters": s.counters.to_dict(),
                    **({k: v for k, v in s.extras.items() if k != "screen"})}
                   for s in rep.stages],
        "n1_ok": rep.n1_ok,
        "wall_s": time.perf_counter() - t0,
    }
    if rep.context is not None and rep.context.pc_viol:
        out["sets"] = {
            "pc_viol": sorted(i + 1 for i in rep.context.pc_viol),
            "dc_cont": sorted(i + 1 for i in rep.context.dc_cont),
            "pc_fix": sorted(i + 1 for i in rep.context.pc_fix),
            "corridor_bounds": list(rep.context.corridor_bounds or ()),
        }
    screen = next((s.extras.get("screen") for s in rep.stages
                   if "screen" in s.extras), None)
    if screen:
        out["screen"] = screen
    return out


def _run_trials(args, overrides, strategies=True):
    seeds = [args.seed + 1000 * t for t in range(args.trials)]
    workers = min(thread_cap(), len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_solve_trial, args.case, args.mode, s,
                                overrides, strategies) for s in seeds]
            trials = [f.result() for f in futs]
    else:
        trials = [_solve_trial(args.case, args.mode, s, overrides, strategies)
                  for s in seeds]
    return trials


def write_report(out_dir: Path, report: dict, net=None, best_plan=None,
                 trials=None, tuning_rows=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=1, sort_keys=True, default=float) + "\n")
    if net is not None and best_plan is not None:
        with open(out_dir / "plan.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["year", "corridor", "lines_added", "cost"])
            w.writeheader()
            w.writerows(plan_rows(net, best_plan))
    if trials is not None:
        with open(out_dir / "convergence.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["trial", "iteration", "best_fitness"])
            for t, rec in enumerate(trials):
                for i, v in enumerate(rec.get("history", [])):
                    w.writerow([t, i, v])
    if tuning_rows is not None:
        with open(out_dir / "tuning.csv", "w", newline="") as f:
            n_trials = max(len(r["variance_per_trial"]) for r in tuning_rows)
            cols = ["setting"] + [f"variance_trial_{i+1}" for i in range(n_trials)]
            cols += ["min_cost", "max_cost", "mean_cost", "std_cost"]
            w = csv.writer(f)
            w.writerow(cols)
            for r in tuning_rows:
                row = [r["setting"], *r["variance_per_trial"]]
                row += [r["min_cost"], r["max_cost"], r["mean_cost"], r["std_cost"]]
                w.writerow(row)


def _config_dict(args, extra=None):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    cfg.update(extra or {})
    return cfg


def cmd_solve(args) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        overrides = parse_params(args.param)
        net = resolve_case(args.case)
    except (ValueError, CaseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.mode == "screen":
        return _cmd_screen_via_solve(args, net, overrides)
    strategies = args.mode != "rigorous"
    trials = _run_trials(args, overrides, strategies)
    feasible = [t for t in trials if t["feasible"]]
    ranked = sorted(feasible or trials,
                    key=lambda t: (t.get("fitness", t["cost"]), t["trial_seed"]))
    best = ranked[0]
    report = {
        "config": _config_dict(args),
        "case": net.name,
        "mode": args.mode,
        "best": {k: v for k, v in best.items() if k not in ("wall_s",)},
        "trials": [{k: v for k, v in t.items() if k not in ("wall_s", "history")}
                   for t in trials],
        "timing": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
                   "wall_s_per_trial": [t["wall_s"] for t in trials]},
    }
    best_plan = None
    if best.get("plan"):
        keymap = {c.key: c.id for c in net.corridors}
        n = np.zeros((len(net.corridors), net.horizon.years), dtype=int)
        for key, counts in best["plan"]["cumulative"].items():
            n[keymap[key]] = counts
        best_plan = ExpansionPlan(n)
    write_report(Path(args.out), report, net, best_plan, trials)
    if not best["feasible"] or best.get("n1_ok") is False:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_screen_via_solve(args, net, overrides):
    trial = _solve_trial(args.case, "stage2", args.seed, overrides, True)
    keymap = {c.key: c.id for c in net.corridors}
    n = np.zeros((len(net.corridors), net.horizon.years), dtype=int)
    for key, counts in trial["plan"]["cumulative"].items():
        n[keymap[key]] = counts
    plan = ExpansionPlan(n)
    q_rc = {int(y): v for y, v in trial["q_rc"].items()}
    rep = security_screen(net, plan, q_rc=q_rc)
    report = {
        "config": _config_dict(args),
        "case": net.name,
        "mode": "screen",
        "base_plan": trial["plan"],
        "screen": rep.to_dict(),
        "pc_viol": sorted(i + 1 for i in rep.pc_viol),
        "timing": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }
    write_report(Path(args.out), report, net, plan)
    return EXIT_OK


def cmd_screen(args) -> int:
    try:
        net = resolve_case(args.case)
        plan = load_plan_file(net, args.plan)
    except (CaseError, PlanError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    rep = security_screen(net, plan)
    report = {
        "config": _config_dict(args),
        "case": net.name,
        "mode": "screen",
        "screen": rep.to_dict(),
        "pc_viol": sorted(i + 1 for i in rep.pc_viol),
        "timing": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }
    write_report(Path(args.out), report, net, plan)
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        net = resolve_case(args.case)
        plan = load_plan_file(net, args.plan)
    except (CaseError, PlanError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    rows = planner.plan_year_values(net, plan, security=True, q_rc={})
    q_rc = {r["year"]: r["q_rc"] for r in rows if r["q_rc"]}
    ok, rep = n1_verify(net, plan, q_rc)
    report = {
        "config": _config_dict(args),
        "case": net.name,
        "mode": "verify",
        "plan": plan_payload(net, plan),
        "n1_ok": ok,
        "q_rc": {str(y): v for y, v in q_rc.items()},
        "per_year": [{k: v for k, v in r.items()} for r in rows],
        "verdicts": rep.to_dict()["verdicts"],
        "timing": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }
    write_report(Path(args.out), report, net, plan)
    print(f"n1_verify: {'PASS' if ok else 'FAIL'} (v_d = {report['plan']['v_d']:.3f})")
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_tune(args) -> int:
    try:
        net = resolve_case(args.case)
        values = json.loads(args.values)
    except (CaseError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.tune_param == "corridor_bounds":
        values = [tuple(v) for v in values]
    rows = planner.tune_harness(net, args.tune_param, values, trials=args.trials,
                                seed=args.seed, problem=args.problem)
    report = {
        "config": _config_dict(args),
        "case": net.name,
        "mode": "tune",
        "rows": [{**r, "setting": str(r["setting"])} for r in rows],
        "timing": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }
    write_report(Path(args.out), report, tuning_rows=rows)
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="gridplan",
                description="Multi-year security-constrained AC transmission "
                            "expansion planning")
    sub = p.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the staged planner")
    solve.add_argument("--case", required=True)
    solve.add_argument("--mode", default="four-stage", choices=MODES)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--trials", type=int, default=10)
    solve.add_argument("--out", default="out")
    solve.add_argument("--param", action="append", metavar="k=v")
    solve.set_defaults(func=cmd_solve)

    screen = sub.add_parser("screen", help="N-1 screen of a given plan")
    screen.add_argument("--case", required=True)
    screen.add_argument("--plan", required=True)
    screen.add_argument("--out", default="out")
    screen.set_defaults(func=cmd_screen)

    verify = sub.add_parser("verify", help="independent N-1 verification of a plan")
    verify.add_argument("--case", required=True)
    verify.add_argument("--plan", required=True)
    verify.add_argument("--out", default="out")
    verify.set_defaults(func=cmd_verify)

    tune = sub.add_parser("tune", help="population-variance parameter tuning")
    tune.add_argument("--case", required=True)
    tune.add_argument("--tune-param", default="neighbors",
                      choices=("neighbors", "limit", "colony", "iterations",
                               "guidance", "corridor_bounds"))
    tune.add_argument("--values", required=True,
                      help="JSON list, e.g. [1,2,3] or [[0.9,1.3],[0.7,2.0]]")
    tune.add_argument("--trials", type=int, default=5)
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--problem", default="ac-sec", choices=("ac-sec", "dc-sec"))
    tune.add_argument("--out", default="out")
    tune.set_defaults(func=cmd_tune)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (CaseError, PlanError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
