"""Command-line front end.

Every artifact carries the scenario hash, the seed, the package version and
an echo of all parameters, and nothing time dependent, so two runs with the
same arguments produce byte-identical files.

Exit codes: 0 success, 1 property violation, 2 usage or config error,
3 resource cap.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .checks import metric_suite, projection_suite, table_suite, total_violations
from .control import FIRST, SECOND
from .dynamics import Scenario, load_scenario, sample_isaacs
from .engine import (
    DEFAULT_CAP,
    DEFAULT_STEP,
    FeedbackStrategy,
    TimeGrid,
    constant_strategy,
    estimate_J1,
    estimate_J2,
    rollout_lower,
    rollout_memory,
    rollout_upper,
    trace_csv,
)
from .errors import GraphTooLarge, MFGameError, OracleTooLarge, SearchSpaceTooLarge
from .measure import EmpiricalMeasure, w2_exact
from .pim import (
    DEFAULT_GRAPH_CAP,
    build_graph,
    build_p_strategy,
    build_q_strategy,
    iterate,
    load_tables,
    table_candidates,
    tables_csv,
)
from .presets import PRESETS, load_preset
from .shift import ExtremalShiftStrategy, ShiftConstants, verify_lemma_agent, verify_lemma_flow

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3
DEFAULT_RESOLUTION = 0.025
LEMMA_STEP = 1e-3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# plumbing


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def subseed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def resolve_scenario(spec: str) -> Scenario:
    if spec in PRESETS and not Path(spec).exists():
        return load_preset(spec)
    return load_scenario(spec)


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(x):
    """JSON has no infinities; encode them as strings."""
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    return x


class Run:
    """Shared state of one CLI invocation: scenario, seed, output directory and echo."""

    def __init__(self, args, sc: Scenario = None):
        self.args = args
        self.sc = sc
        self.seed = args.seed
        self.out = Path(args.out)

    def meta(self) -> dict:
        # the output location is not a run parameter; leaving it out keeps
        # artifacts of identical runs in different directories identical
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "out")}
        return {
            "command": self.args.command,
            "params": params,
            "scenario_hash": self.sc.hash() if self.sc is not None else "",
            "seed": self.seed,
            "version": __version__,
        }

    def csv_meta(self) -> dict:
        m = self.meta()
        flat = {"command": m["command"], "scenario_hash": m["scenario_hash"], "seed": m["seed"],
                "version": m["version"]}
        flat["params"] = json.dumps(m["params"], sort_keys=True, default=_jsonable)
        return flat

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        body = {"meta": self.meta(), **payload}
        return self.write(name, json.dumps(_finite(body), indent=2, sort_keys=True, default=_jsonable) + "\n")


def _eps_list(text: str) -> list:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --eps list {text!r}") from exc
    if not vals or any(v <= 0 for v in vals):
        raise UsageError("--eps needs positive values")
    return vals


def _check_positive(args, names):
    for name in names:
        val = getattr(args, name, None)
        if val is not None and val <= 0:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")


def _scenario(args) -> Scenario:
    sc = resolve_scenario(args.scenario)
    if getattr(args, "l_scale", None) is not None:
        if args.l_scale <= 0:
            raise UsageError("--l-scale must be positive")
        base = sc.constants
        sc = sc.with_constants(dataclasses.replace(base, L=base.L * args.l_scale,
                                                   provenance=f"{base.provenance}*L{args.l_scale!r}"))
    return sc


def _initial(args, sc: Scenario) -> EmpiricalMeasure:
    if sc.initial is None and args.particles is None:
        raise UsageError("scenario has no initial crowd; pass --particles")
    if args.particles is None or (sc.initial is not None and sc.initial.n == args.particles):
        return sc.initial
    rng = substream(args.seed, "initial")
    return EmpiricalMeasure(rng.random((args.particles, sc.dim)))


def _grid(args, sc) -> TimeGrid:
    return TimeGrid.uniform(0.0, sc.horizon, args.cells)


def _graph(args, sc, m0, grid):
    res = args.resolution or DEFAULT_RESOLUTION
    step = args.step or DEFAULT_STEP
    return build_graph(0.0, m0, grid, sc, res, cap=args.graph_cap, step=step)


# ---------------------------------------------------------------------------
# strategies


def _first_strategy(spec, args, sc, m0, grid, eps):
    """``const:<i>`` or ``shift`` (extremal shift on the converged lower table)."""
    if spec.startswith("const:"):
        return constant_strategy(FIRST, sc, _atom(spec, len(sc.grid_u))), None
    if spec == "shift":
        g = _graph(args, sc, m0, grid)
        res = iterate(g, sc, mixture_samples=0)
        rule = ExtremalShiftStrategy(FIRST, eps, sc, table_candidates(g, res.omega_star))
        return FeedbackStrategy(FIRST, rule), (g, res)
    if spec == "p":
        g = _graph(args, sc, m0, grid)
        res = iterate(g, sc, mixture_samples=0)
        return build_p_strategy(res.upper, g, eps, sc), (g, res)
    raise UsageError(f"unknown first-player strategy {spec!r}")


def _second_strategy(spec, args, sc, m0, grid, eps):
    if spec.startswith("const:"):
        return constant_strategy(SECOND, sc, _atom(spec, len(sc.grid_v))), None
    if spec == "q":
        g = _graph(args, sc, m0, grid)
        res = iterate(g, sc, mixture_samples=0)
        return build_q_strategy(res.lower, g, eps, sc), (g, res)
    raise UsageError(f"unknown second-player strategy {spec!r}")


def _atom(spec, n):
    try:
        i = int(spec.split(":", 1)[1])
    except ValueError as exc:
        raise UsageError(f"bad atom index in {spec!r}") from exc
    if not 0 <= i < n:
        raise UsageError(f"atom index {i} out of range 0..{n - 1}")
    return i


def _strategy(args, sc, m0, grid, eps):
    if args.player == FIRST:
        return _first_strategy(args.strategy, args, sc, m0, grid, eps)
    return _second_strategy(args.strategy, args, sc, m0, grid, eps)


def _resolution_for(args, built):
    """Rollouts against table strategies run on the graph lattice."""
    if built is not None:
        return built[0].resolution
    return args.resolution


# ---------------------------------------------------------------------------
# commands


def cmd_w2(args) -> int:
    try:
        a = EmpiricalMeasure.from_text(Path(args.first).read_text())
        b = EmpiricalMeasure.from_text(Path(args.second).read_text())
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    dist, plan = w2_exact(a, b)
    print(repr(float(dist)))
    if args.plan:
        for i, j, m in zip(plan.rows, plan.cols, plan.mass):
            print(f"{int(i)}\t{int(j)}\t{float(m)!r}")
    return EXIT_OK


def _play(args, sc, m0, grid, strat, built, opponent, step):
    kw = {"step": step, "resolution": _resolution_for(args, built)}
    if built is not None:
        kw["model_grid"] = built[0].grid
    if hasattr(strat, "grid") and not isinstance(strat, FeedbackStrategy):
        return rollout_memory(0.0, m0, strat, opponent, sc, **kw)
    if args.player == FIRST:
        return rollout_upper(0.0, m0, strat, grid, opponent, sc, **kw)
    return rollout_lower(0.0, m0, strat, grid, opponent, sc, **kw)


def _opponent(args, sc, m0, grid, strat, built):
    n_opp = len(sc.grid_v) if args.player == FIRST else len(sc.grid_u)
    cells = built[0].cells if built is not None else grid.cells
    spec = args.opponent
    if spec.startswith("const:"):
        return np.full((cells, m0.n), _atom(spec, n_opp))
    if spec == "random":
        return substream(args.seed, "opponent").integers(n_opp, size=(cells, m0.n))
    if spec == "worst":
        est = _search(args, sc, m0, grid, strat, built)
        return est.opponent
    raise UsageError(f"unknown opponent {spec!r}")


def _search(args, sc, m0, grid, strat, built):
    fn = estimate_J1 if args.player == FIRST else estimate_J2
    kw = {"cap": args.cap, "seed": subseed(args.seed, "search"), "step": args.step or DEFAULT_STEP,
          "resolution": _resolution_for(args, built)}
    if built is not None:
        kw["model_grid"] = built[0].grid
    return fn(0.0, m0, strat, grid, sc, args.search, **kw)


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    run = Run(args, sc)
    m0 = _initial(args, sc)
    grid = _grid(args, sc)
    eps = _eps_list(args.eps)[0]
    strat, built = _strategy(args, sc, m0, grid, eps)
    opp = _opponent(args, sc, m0, grid, strat, built)
    step = args.step or DEFAULT_STEP
    rec = _play(args, sc, m0, grid, strat, built, opp, step)
    run.write("trace.csv", trace_csv(rec, sc, run.csv_meta()))
    isaacs = sample_isaacs(sc, n=200, seed=subseed(args.seed, "isaacs"))
    ratio = rec.flow.lipschitz_ratio()
    summary = {
        "outcome": rec.outcome,
        "opponent": rec.opponent,
        "flow_lipschitz": {"ratio": ratio, "C0": sc.constants.C0,
                           "ok": bool(ratio <= sc.constants.C0 * (1 + 1e-9) + 1e-12)},
        "isaacs_gap": isaacs["max_gap"],
        "final_points": rec.final.points,
        "final_barycenter": rec.final.weights @ rec.final.points,
    }
    if args.halve_step:
        half = _play(args, sc, m0, grid, strat, built, opp, step / 2)
        run.write("trace_half.csv", trace_csv(half, sc, run.csv_meta()))
        summary["halved_step"] = {"outcome": half.outcome,
                                  "terminal_w2": w2_exact(rec.final, half.final)[0]}
    run.write_json("summary.json", summary)
    print(f"outcome {rec.outcome!r}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    """Worst case of one strategy over opponent sequences, plus the trace of that branch."""
    sc = _scenario(args)
    run = Run(args, sc)
    m0 = _initial(args, sc)
    grid = _grid(args, sc)
    eps = _eps_list(args.eps)[0]
    strat, built = _strategy(args, sc, m0, grid, eps)
    est = _search(args, sc, m0, grid, strat, built)
    rec = _play(args, sc, m0, grid, strat, built, est.opponent, args.step or DEFAULT_STEP)
    run.write("trace.csv", trace_csv(rec, sc, run.csv_meta()))
    run.write_json("search.json", {"value": est.value, "mode": est.mode, "label": est.label,
                                   "opponent": est.opponent, "evaluated": est.evaluated,
                                   "replayed_outcome": rec.outcome})
    print(f"{est.mode} {est.label}: {est.value!r}")
    return EXIT_OK


def shift_study(sc, m0, grid, eps_list, resolution, step=DEFAULT_STEP, search="exhaustive",
                cap=DEFAULT_CAP, seed=0, graph_cap=DEFAULT_GRAPH_CAP):
    """Worst-case outcomes of the extremal shift rule on the converged lower table.

    For each ``eps`` the coarsest partition of the graph grid with fineness
    at most ``eps`` is used.  Rows report the excess over the table value and
    the guaranteed bound plus 5% of the terminal payoff range.
    """
    g = build_graph(0.0, m0, grid, sc, resolution, cap=graph_cap, step=step)
    res = iterate(g, sc, mixture_samples=0)
    lo = res.omega_star
    spread = float(g.terminal.max() - g.terminal.min())
    rows = []
    for eps in eps_list:
        cells = next((c for c in range(1, grid.cells + 1)
                      if grid.cells % c == 0 and sc.horizon / c <= eps + 1e-12), grid.cells)
        part = TimeGrid.uniform(0.0, sc.horizon, cells)
        strat = FeedbackStrategy(FIRST, ExtremalShiftStrategy(FIRST, eps, sc, table_candidates(g, lo)))
        est = estimate_J1(0.0, m0, strat, part, sc, search, cap=cap, seed=seed, step=step,
                          resolution=g.resolution, model_grid=g.grid)
        guarantee = ShiftConstants(eps, sc.constants, sc.dim).guarantee(sc.horizon)
        bound = lo.root + guarantee + 0.05 * spread
        rows.append({"eps": eps, "cells": cells, "fineness": part.fineness, "value": est.value,
                     "table_value": lo.root, "excess": est.value - lo.root, "guarantee": guarantee,
                     "bound": bound, "ok": bool(est.value <= bound + 1e-12), "mode": est.mode})
    return {"rows": rows, "payoff_range": spread, "converged": res.converged,
            "upper_value": res.omega_upper_star.root}


def excess_nonincreasing(rows, tol=1e-12) -> bool:
    """Excess does not grow as ``eps`` shrinks."""
    ordered = sorted(rows, key=lambda r: -r["eps"])
    return all(b["excess"] <= a["excess"] + tol for a, b in zip(ordered, ordered[1:]))


def cmd_gamma(args) -> int:
    sc = _scenario(args)
    run = Run(args, sc)
    m0 = _initial(args, sc)
    grid = _grid(args, sc)
    study = shift_study(sc, m0, grid, _eps_list(args.eps), args.resolution or DEFAULT_RESOLUTION,
                        args.step or DEFAULT_STEP, args.search, args.cap, subseed(args.seed, "search"),
                        args.graph_cap)
    buf = io.StringIO()
    for k, v in run.csv_meta().items():
        buf.write(f"# {k}={v}\n")
    cols = ["eps", "cells", "fineness", "value", "table_value", "excess", "guarantee", "bound", "ok", "mode"]
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for row in study["rows"]:
        wr.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    run.write("gamma.csv", buf.getvalue())
    ok = all(r["ok"] for r in study["rows"])
    study["excess_nonincreasing"] = excess_nonincreasing(study["rows"])
    study["upper_value_estimate"] = min(r["value"] for r in study["rows"])
    run.write_json("gamma.json", study)
    for row in study["rows"]:
        print(f"eps={row['eps']!r} value={row['value']!r} bound={row['bound']!r} ok={row['ok']}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_iterate(args) -> int:
    sc = _scenario(args)
    run = Run(args, sc)
    m0 = _initial(args, sc)
    grid = _grid(args, sc)
    g = _graph(args, sc, m0, grid)
    start = None
    if args.resume:
        try:
            text = Path(args.resume).read_text()
        except OSError as exc:
            raise UsageError(str(exc)) from exc
        start = load_tables(text, g)
    res = iterate(g, sc, max_k=args.max_k, start=start, seed=subseed(args.seed, "mixture"))
    meta = run.csv_meta()
    meta["converged"] = res.converged
    meta["last_increment"] = f"{res.omega_star.last_increment!r},{res.omega_upper_star.last_increment!r}"
    run.write("tables.csv", tables_csv(g, res.lower + res.upper, meta))
    buf = io.StringIO()
    for k, v in run.csv_meta().items():
        buf.write(f"# {k}={v}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k", "lower_root", "upper_root", "gap"])
    for lo, up in zip(res.lower, res.upper):
        wr.writerow([lo.k, repr(lo.root), repr(up.root), repr(up.root - lo.root)])
    gap_csv = buf.getvalue()
    run.write("gap_history.csv", gap_csv)
    isaacs = sample_isaacs(sc, n=200, seed=subseed(args.seed, "isaacs"))
    spread = float(g.terminal.max() - g.terminal.min())
    summary = {
        "layer_sizes": g.layer_sizes,
        "k": res.omega_star.k,
        "converged": res.converged,
        "lower_root": res.omega_star.root,
        "upper_root": res.omega_upper_star.root,
        "root_gap": res.root_gap,
        "payoff_range": spread,
        "relative_gap": res.root_gap / spread if spread > 0 else 0.0,
        "mixture_gap": res.mixture_gap,
        "isaacs_gap": isaacs["max_gap"],
        "last_increment": {"lower": res.omega_star.last_increment, "upper": res.omega_upper_star.last_increment},
        "resumed": bool(args.resume),
    }
    run.write_json("summary.json", summary)
    sys.stdout.write(gap_csv)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.trials is not None and args.trials <= 0:
        raise UsageError("--trials must be positive")
    sc = _scenario(args)
    run = Run(args, sc)
    trials = args.trials or 1000
    step = args.step or LEMMA_STEP
    report = {}
    agent = verify_lemma_agent(sc, trials, subseed(args.seed, "lemma-agent"), step)
    flow = verify_lemma_flow(sc, max(1, trials // 2), subseed(args.seed, "lemma-flow"), step)
    for name, rep in (("lemma_agent", agent), ("lemma_flow", flow)):
        report[name] = {k: rep[k] for k in ("trials", "violations", "min_slack", "max_slack")}
    report["metric"] = metric_suite(substream(args.seed, "metric"), min(trials, 500))
    report["projection"] = projection_suite(sc, substream(args.seed, "projection"), min(trials, 200))
    if not args.skip_tables:
        m0 = _initial(args, sc)
        grid = _grid(args, sc)
        g = _graph(args, sc, m0, grid)
        res = iterate(g, sc, mixture_samples=0)
        report["tables"] = table_suite(g, res, sc)
    total = total_violations(report)
    run.write_json("verify.json", {"report": report, "violations": total})
    for name, rep in report.items():
        if name == "tables":
            for sub, r in rep.items():
                print(f"{sub}: violations={r['violations']}")
        else:
            print(f"{name}: trials={rep['trials']} violations={rep['violations']}")
    return EXIT_VIOLATION if total else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p, scenario=True):
    if scenario:
        p.add_argument("--scenario", required=True, help="scenario file or preset name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--particles", type=int, help="crowd size (sampled if it differs from the scenario)")
    p.add_argument("--cells", type=int, default=3, help="cells of the time grid")
    p.add_argument("--resolution", type=float, help="quantization step of the lattice")
    p.add_argument("--eps", default="0.2,0.1,0.05", help="comma separated accuracies")
    p.add_argument("--search", choices=["exhaustive", "heuristic"], default="exhaustive")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="opponent sequences cap")
    p.add_argument("--graph-cap", type=int, default=DEFAULT_GRAPH_CAP, help="graph transitions cap")
    p.add_argument("--step", type=float, help="integration step")


def _play_args(p):
    p.add_argument("--player", choices=[FIRST, SECOND], default=FIRST)
    p.add_argument("--strategy", default="shift",
                   help="const:<i>, shift or p for the first player; const:<j> or q for the second")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgame", description="Mean-field differential game toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("w2", help="W2 distance between two measure files")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--plan", action="store_true", help="also print the optimal plan")
    p.set_defaults(func=cmd_w2)

    p = sub.add_parser("simulate", help="play one strategy against a fixed opponent")
    _common(p)
    _play_args(p)
    p.add_argument("--opponent", default="worst", help="const:<j>, random or worst")
    p.add_argument("--halve-step", action="store_true", help="rerun at half the step and compare")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rollout", help="worst-case outcome of a strategy over opponent sequences")
    _common(p)
    _play_args(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("gamma", help="extremal shift outcomes against the value table")
    _common(p)
    p.set_defaults(func=cmd_gamma)

    p = sub.add_parser("iterate", help="build the reachable graph and run the value iteration")
    _common(p)
    p.add_argument("--max-k", type=int, default=50)
    p.add_argument("--resume", help="tables.csv of an earlier run")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("verify", help="run the property suites")
    _common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--l-scale", type=float, help="multiply the declared Lipschitz constant")
    p.add_argument("--skip-tables", action="store_true", help="skip the value-table suite")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_positive(args, ["particles", "cells", "resolution", "cap", "graph_cap", "step"])
        if getattr(args, "max_k", 0) < 0:
            raise UsageError("--max-k must be nonnegative")
        return args.func(args)
    except (GraphTooLarge, SearchSpaceTooLarge, OracleTooLarge) as exc:
        msg = f"resource cap: {exc}"
        if isinstance(exc, GraphTooLarge) and exc.layer_sizes:
            msg += f" (layer sizes {exc.layer_sizes})"
        print(msg, file=sys.stderr)
        return EXIT_CAP
    except (UsageError, MFGameError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
