"""Randomized and exhaustive property suites shared by the CLI and the test-suite.

Every suite returns a dict with at least ``trials``, ``violations`` and
``worst`` (largest observed excess over the allowed bound, 0 when none).
"""
from __future__ import annotations

import numpy as np

from .dynamics import Scenario, integrate_batch
from .measure import (
    EmpiricalMeasure,
    path_w2,
    sample_uniform_measure,
    sample_weighted_measure,
    w2,
    w2_bruteforce,
    w2_exact,
)
from .pim import IterationResult, ReachableGraph, check_u_stability, check_v_stability


def _summary(name, excesses, tol):
    ex = np.asarray(excesses, dtype=float)
    return {
        "suite": name,
        "trials": int(ex.size),
        "violations": int(np.sum(ex > tol)),
        "worst": float(max(0.0, ex.max())) if ex.size else 0.0,
        "tol": tol,
    }


def _random_measure(rng, max_n, max_d, weighted_share=0.3, dim=None):
    n = int(rng.integers(1, max_n + 1))
    d = dim or int(rng.integers(1, max_d + 1))
    if rng.random() < weighted_share:
        return sample_weighted_measure(rng, n, d)
    return sample_uniform_measure(rng, n, d)


def oracle_suite(rng: np.random.Generator, trials: int = 500, max_n: int = 6, max_d: int = 2,
                 tol: float = 1e-9) -> dict:
    """Solver against the permutation oracle on uniform equal-size clouds."""
    ex = []
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, max_d + 1))
        a, b = sample_uniform_measure(rng, n, d), sample_uniform_measure(rng, n, d)
        ex.append(abs(w2_exact(a, b)[0] - w2_bruteforce(a, b)))
    return _summary("oracle", ex, tol)


def metric_suite(rng: np.random.Generator, trials: int = 500, max_n: int = 5, max_d: int = 2,
                 tol: float = 1e-9) -> dict:
    """Triangle inequality, symmetry and zero self-distance on random triples."""
    ex = []
    for _ in range(trials):
        d = int(rng.integers(1, max_d + 1))
        a, b, c = (_random_measure(rng, max_n, max_d, dim=d) for _ in range(3))
        ab, bc, ac = w2(a, b), w2(b, c), w2(a, c)
        ex.append(max(ac - ab - bc, abs(ab - w2(b, a)), w2(a, a)))
    return _summary("metric", ex, tol)


def projection_suite(sc: Scenario, rng: np.random.Generator, trials: int = 200, max_n: int = 4,
                     step: float = 1e-2, tol: float = 1e-9) -> dict:
    """Time marginals of two path ensembles are no farther apart than the ensembles.

    Paths come from the scenario dynamics under random pure controls, so the
    check runs on genuine trajectory couplings.
    """
    ex = []
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        s = float(rng.random() * sc.horizon * 0.5)
        r = float(s + rng.random() * (sc.horizon - s))
        paths = []
        for _ in range(2):
            pts = rng.random((1, n, sc.dim))
            w = np.full((1, n), 1.0 / n)
            u = sc.grid_u.atoms[rng.integers(len(sc.grid_u), size=(1, n))]
            v = sc.grid_v.atoms[rng.integers(len(sc.grid_v), size=(1, n))]
            _, states = integrate_batch(sc, s, r, pts, w, u, v, step, record=True)
            paths.append(states[:, 0])
        bound = path_w2(paths[0], paths[1])
        k = int(rng.integers(paths[0].shape[0]))
        marg = w2(EmpiricalMeasure(paths[0][k]), EmpiricalMeasure(paths[1][k]))
        ex.append(marg - bound)
    return _summary("projection", ex, tol)


def table_suite(graph: ReachableGraph, result: IterationResult, sc: Scenario,
                bracket_tol: float = 1e-9, stability_tol: float = 1e-9) -> dict:
    """Monotonicity, terminal exactness, bracketing and stability of converged tables."""
    K = graph.cells
    mono = []
    for seq, sign in ((result.lower, 1.0), (result.upper, -1.0)):
        for a, b in zip(seq, seq[1:]):
            for l in range(K + 1):
                mono.append(float(np.max(sign * (a.values[l] - b.values[l]), initial=-np.inf)))
    terminal = [float(np.max(np.abs(t.values[K] - graph.terminal)))
                for t in result.lower + result.upper]
    lo, up = result.omega_star, result.omega_upper_star
    bracket = [float(np.max(lo.values[l] - up.values[l])) for l in range(K + 1)]
    u_st = check_u_stability(graph, lo, sc, stability_tol)
    v_st = check_v_stability(graph, up, sc, stability_tol)
    return {
        "monotone": _summary("monotone", mono, 0.0),
        "terminal": _summary("terminal", terminal, 0.0),
        "bracketing": _summary("bracketing", bracket, bracket_tol),
        "u_stability": _stability_summary(u_st),
        "v_stability": _stability_summary(v_st),
    }


def _stability_summary(rep):
    return {"ok": rep["ok"], "violations": rep["violations"] + (0 if rep["terminal_ok"] else 1),
            "worst": rep["worst_excess"], "terminal_ok": rep["terminal_ok"]}


def total_violations(report: dict) -> int:
    """Sum of ``violations`` over a nested report."""
    own = report.get("violations", 0)
    own = int(own) if isinstance(own, (int, np.integer)) else 0
    return own + sum(total_violations(v) for v in report.values() if isinstance(v, dict))
