import functools

import numpy as np
import pytest

from mfgame.checks import table_suite, total_violations
from mfgame.dynamics import scenario_from_text
from mfgame.engine import TimeGrid, estimate_J1, estimate_J2
from mfgame.errors import GraphTooLarge, InvalidMeasure, TableIncomplete
from mfgame.measure import EmpiricalMeasure
from mfgame.pim import (
    apply_phi,
    build_graph,
    build_p_strategy,
    build_q_strategy,
    iterate,
    load_tables,
    omega_lower_0,
    tables_csv,
)
from mfgame.presets import load_preset

from oracles import scenario_text

BILINEAR_ONE = scenario_text(dynamics="name = bilinear", payoff="name = w2_to_target\ntarget = 0.5",
                             grid_u="-1; 1", grid_v="-1; 1", horizon=0.15, initial="0.2")


def graph_of(sc, cells=3, resolution=0.025, **kw):
    return build_graph(0.0, sc.initial, TimeGrid.uniform(0.0, sc.horizon, cells), sc, resolution, **kw)


def test_single_path_when_both_grids_are_singletons():
    sc = scenario_from_text(scenario_text(grid_u="1", grid_v="0", horizon=0.15, initial="0.2"))
    g = graph_of(sc)
    assert g.layer_sizes == [1, 1, 1, 1]
    res = iterate(g, sc, mixture_samples=0)
    assert res.omega_star.root == res.omega_upper_star.root == float(g.terminal[0])
    # 0.2 moves to 0.35, squared distance to the origin
    assert g.terminal[0] == pytest.approx(0.35**2)


def test_zero_dynamics_merge_every_edge():
    sc = load_preset("still")
    g = graph_of(sc)
    assert g.layer_sizes == [1, 1, 1, 1]
    assert np.all(g.succ[0] == 0)
    res = iterate(g, sc, mixture_samples=0)
    assert res.gap_history[-1] == 0.0 and res.converged
    assert res.omega_star.root == pytest.approx(0.09)


def test_graph_layers_and_terminal(split_graph):
    sc, g, _ = split_graph
    assert g.layer_sizes[0] == 1
    np.testing.assert_array_equal(g.points(0, 0), np.sort(sc.initial.points, axis=0))
    for node in range(0, g.layer_sizes[-1], 17):
        assert g.terminal[node] == pytest.approx(sc.g(g.measure(3, node)), abs=1e-15)
    # every successor index is a valid node of the next layer
    for l, s in enumerate(g.succ):
        assert s.min() >= 0 and s.max() < g.layer_sizes[l + 1]
    node, slot = g.locate(0, sc.initial.points[::-1])
    assert node == 0 and sorted(slot) == [0, 1]


def test_graph_guards():
    sc = load_preset("pursuit_circle")
    with pytest.raises(GraphTooLarge) as info:
        graph_of(sc, cap=1000)
    assert info.value.layer_sizes[0] == 1
    weighted = EmpiricalMeasure([[0.1], [0.4]], [0.3, 0.7])
    with pytest.raises(InvalidMeasure):
        build_graph(0.0, weighted, TimeGrid.uniform(0.0, sc.horizon, 3), sc, 0.025)


def test_tables_monotone_and_bracketing():
    for name in ("pursuit_circle", "barycenter", "bilinear"):
        sc = load_preset(name)
        g = graph_of(sc)
        res = iterate(g, sc, mixture_samples=0)
        for a, b in zip(res.lower, res.lower[1:]):
            for va, vb in zip(a.values, b.values):
                assert np.all(vb >= va)
        for a, b in zip(res.upper, res.upper[1:]):
            for va, vb in zip(a.values, b.values):
                assert np.all(vb <= va)
        for t in res.lower + res.upper:
            np.testing.assert_array_equal(t.values[-1], g.terminal)
        hist = res.gap_history
        assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))
        assert total_violations(table_suite(g, res, sc)) == 0


def _oracle_tables():
    """Lower iterates for one particle on a bilinear game, enumerated on integer lattice indices."""
    M, K, shift = 40, 3, 2  # |u v| dt = 0.05 is two lattice cells
    moves = (-1, 1)

    def g(i):
        d = abs(i / M - 0.5)
        return min(d, 1 - d) ** 2

    @functools.lru_cache(maxsize=None)
    def commit_value(table_k, r, l, i, b):
        if l == r:
            return table(table_k, r, i) if table_k >= 0 else g(i)
        return min(commit_value(table_k, r, l + 1, (i + a * b * shift) % M, b) for a in moves)

    @functools.lru_cache(maxsize=None)
    def table(k, l, i):
        if l == K:
            return g(i)
        if k == 0:
            return max(commit_value(-1, K, l, i, b) for b in moves)
        prev = k - 1
        return max(commit_value(prev, r, l, i, b) for r in range(l, K + 1) for b in moves)

    return table, M


def test_lower_iterates_against_enumeration():
    sc = scenario_from_text(BILINEAR_ONE)
    g = graph_of(sc)
    res = iterate(g, sc, max_k=2, mixture_samples=0)
    oracle, M = _oracle_tables()
    lower = [omega_lower_0(g)]
    lower.append(apply_phi(lower[0], g))
    lower.append(apply_phi(lower[1], g))
    for k, t in enumerate(lower):
        for l in range(g.cells + 1):
            for node in range(g.layer_sizes[l]):
                i = int(g.nodes[l][node][0, 0])
                assert t.values[l][node] == pytest.approx(oracle(k, l, i), abs=1e-15)
    assert res.lower[0].root == pytest.approx(lower[0].root)


def test_bilinear_gap_stays_open():
    sc = load_preset("bilinear")
    res = iterate(graph_of(sc), sc, mixture_samples=4)
    assert res.converged and res.root_gap > 0.05
    assert set(res.mixture_gap) == {"lower", "upper"}
    assert min(res.mixture_gap.values()) >= 0.0


def test_persistence_round_trip(split_graph):
    sc, g, res = split_graph
    text = tables_csv(g, res.lower + res.upper, {"converged": res.converged})
    lower, upper = load_tables(text, g)
    assert len(lower) == len(res.lower)
    for a, b in zip(lower + upper, res.lower + res.upper):
        for va, vb in zip(a.values, b.values):
            np.testing.assert_array_equal(va, vb)
        for wa, wb in zip(a.witness_commit, b.witness_commit):
            np.testing.assert_array_equal(wa, wb)
    again = iterate(g, sc, start=(lower, upper), mixture_samples=0)
    assert again.gap_history == res.gap_history
    # a table missing nodes is refused
    cut = "\n".join(text.splitlines()[:-3]) + "\n"
    with pytest.raises(TableIncomplete):
        load_tables(cut, g)


def test_resume_continues_sweeps():
    sc = load_preset("barycenter")
    g = graph_of(sc)
    full = iterate(g, sc, mixture_samples=0)
    part = iterate(g, sc, max_k=0, mixture_samples=0)
    lower, upper = load_tables(tables_csv(g, part.lower + part.upper), g)
    resumed = iterate(g, sc, start=(lower, upper), mixture_samples=0)
    assert resumed.gap_history == full.gap_history
    assert resumed.omega_star.root == full.omega_star.root


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_q_strategy_guarantee(split_graph, k, eps):
    sc, g, res = split_graph
    k = min(k, len(res.lower) - 1)
    q = build_q_strategy(res.lower, g, eps, sc, k=k)
    est = estimate_J2(0.0, sc.initial, q, g.grid, sc, resolution=g.resolution)
    slack = eps * sum(2.0**-l for l in range(k + 1))
    assert est.value >= res.lower[k].root - slack - 1e-12
    p = build_p_strategy(res.upper, g, eps, sc, k=k)
    up = estimate_J1(0.0, sc.initial, p, g.grid, sc, resolution=g.resolution)
    assert up.value <= res.upper[k].root + slack + 1e-12


def test_strategy_needs_enough_tables(split_graph):
    sc, g, res = split_graph
    with pytest.raises(TableIncomplete):
        build_q_strategy(res.lower, g, 0.1, sc, k=len(res.lower))
