import numpy as np
import pytest

from mfgame.control import FIRST, SECOND, ControlField, count_pure_fields, validate_consistency
from mfgame.dynamics import scenario_from_text
from mfgame.engine import (
    FeedbackStrategy,
    TimeGrid,
    as_memory,
    constant_strategy,
    estimate_gamma1,
    estimate_gamma2,
    estimate_J1,
    estimate_J2,
    rollout_lower,
    rollout_memory,
    rollout_upper,
    trace_csv,
)
from mfgame.errors import GridError, SearchSpaceTooLarge
from mfgame.measure import EmpiricalMeasure, w2
from mfgame.pim import build_q_strategy, table_candidates
from mfgame.presets import load_preset
from mfgame.shift import ExtremalShiftStrategy

from oracles import perm_w2, scenario_text


def split(**kw):
    return scenario_from_text(scenario_text(**kw))


def test_translation_rollout():
    sc = split(horizon=0.4)
    m0 = EmpiricalMeasure([[0.1], [0.8]])
    grid = TimeGrid.uniform(0.0, 0.4, 2)
    rec = rollout_upper(0.0, m0, constant_strategy(FIRST, sc, 2), grid, np.full((2, 2), 1), sc)
    # u = +1 and v = 0 shift every particle by the horizon
    np.testing.assert_allclose(rec.final.points[:, 0], [0.5, 0.2], atol=1e-12)
    assert rec.outcome == pytest.approx(perm_w2([[0.5], [0.2]], [[0.0], [0.0]]) ** 2, abs=1e-12)
    assert rec.flow.time_grid[-1] == pytest.approx(0.4)


def test_cancelling_controls_freeze_the_crowd():
    sc = split(grid_v="-1; 0; 1")
    m0 = EmpiricalMeasure([[0.3], [0.7]])
    grid = TimeGrid.uniform(0.0, 0.4, 4)
    rec = rollout_upper(0.0, m0, constant_strategy(FIRST, sc, 2), grid, np.zeros((4, 2), int), sc)
    assert w2(rec.final, m0) == pytest.approx(0.0, abs=1e-12)


def test_two_cells_equal_concatenated_single_cells():
    sc = load_preset("pursuit_circle")
    m0 = sc.initial
    T = sc.horizon
    opp = np.array([[0, 2], [1, 0]])
    whole = rollout_upper(0.0, m0, constant_strategy(FIRST, sc, 0), TimeGrid.uniform(0, T, 2), opp, sc)
    mid = T / 2
    second = rollout_upper(mid, whole.states[1], constant_strategy(FIRST, sc, 0), TimeGrid((mid, T)),
                           opp[1:], sc)
    np.testing.assert_allclose(whole.final.points, second.final.points, atol=1e-12)
    assert whole.outcome == pytest.approx(second.outcome, abs=1e-12)


def test_opponent_space_of_size_one():
    sc = split(grid_v="0")
    m0 = EmpiricalMeasure([[0.1], [0.3]])
    grid = TimeGrid.uniform(0.0, 0.4, 2)
    strat = constant_strategy(FIRST, sc, 0)
    est = estimate_J1(0.0, m0, strat, grid, sc)
    rec = rollout_upper(0.0, m0, strat, grid, np.zeros((2, 2), int), sc)
    assert est.value == rec.outcome
    assert est.mode == "exhaustive"


def test_heuristic_below_exhaustive():
    sc = load_preset("pursuit_circle")
    grid = TimeGrid.uniform(0.0, sc.horizon, 2)
    strat = constant_strategy(FIRST, sc, 1)
    exact = estimate_J1(0.0, sc.initial, strat, grid, sc)
    heur = estimate_J1(0.0, sc.initial, strat, grid, sc, "heuristic", restarts=2)
    assert heur.value <= exact.value + 1e-12
    assert "lower bound" in heur.label
    # the exhaustive optimum is attained by its own opponent sequence
    rec = rollout_upper(0.0, sc.initial, strat, grid, exact.opponent, sc)
    assert rec.outcome == pytest.approx(exact.value, abs=1e-12)
    low = estimate_J2(0.0, sc.initial, constant_strategy(SECOND, sc, 1), grid, sc)
    low_h = estimate_J2(0.0, sc.initial, constant_strategy(SECOND, sc, 1), grid, sc, "heuristic", restarts=2)
    assert low_h.value >= low.value - 1e-12


def test_search_cap_and_grid_errors():
    sc = load_preset("pursuit_circle")
    grid = TimeGrid.uniform(0.0, sc.horizon, 3)
    assert count_pure_fields(3, 2, 3) == 9**3
    with pytest.raises(SearchSpaceTooLarge):
        estimate_J1(0.0, sc.initial, constant_strategy(FIRST, sc, 0), grid, sc, cap=100)
    with pytest.raises(GridError):
        TimeGrid((0.0, 0.1, 0.1))
    with pytest.raises(GridError):
        rollout_upper(0.0, sc.initial, constant_strategy(FIRST, sc, 0), TimeGrid((0.0, 0.1)),
                      np.zeros((1, 2), int), sc)
    with pytest.raises(ValueError):
        estimate_J1(0.0, sc.initial, constant_strategy(FIRST, sc, 0), grid, sc, "annealing")


def test_memory_matches_feedback():
    sc = load_preset("barycenter")
    grid = TimeGrid.uniform(0.0, sc.horizon, 2)
    fb = constant_strategy(FIRST, sc, 2)
    mem = as_memory(fb, grid)
    opp = np.array([[2, 0], [1, 1]])
    a = rollout_upper(0.0, sc.initial, fb, grid, opp, sc)
    b = rollout_memory(0.0, sc.initial, mem, opp, sc)
    np.testing.assert_array_equal(a.final.points, b.final.points)
    assert estimate_J1(0.0, sc.initial, fb, grid, sc).value == estimate_J1(0.0, sc.initial, mem, grid, sc).value


def test_joint_fields_are_consistent():
    sc = load_preset("pursuit_circle")
    grid = TimeGrid.uniform(0.0, sc.horizon, 3)
    rec = rollout_lower(0.0, sc.initial, constant_strategy(SECOND, sc, 0), grid,
                        lambda c, t, m: np.full(m.n, c % 3), sc)
    assert len(rec.joint_fields) == 3
    for k in rec.joint_fields:
        assert validate_consistency(k) and k.is_pure_response()
    text = trace_csv(rec, sc, {"seed": 1})
    assert text.startswith("# seed=1\n")
    assert text.rstrip().split("\n")[-1].endswith(repr(float(rec.outcome)))


def test_mixed_field_rollout_is_rejected():
    sc = split()
    m0 = EmpiricalMeasure([[0.2], [0.6]])
    mix = FeedbackStrategy(FIRST, lambda t, m: ControlField.from_mixtures(
        FIRST, sc.grid_u, np.tile([0.5, 0.0, 0.5], (m.n, 1))))
    # splitting particles would change the crowd size mid-rollout
    with pytest.raises(NotImplementedError):
        rollout_upper(0.0, m0, mix, TimeGrid.uniform(0.0, 0.4, 1), np.ones((1, 2), int), sc)


def test_quantized_rollout_matches_graph(split_graph):
    sc, g, res = split_graph
    strat = FeedbackStrategy(FIRST, ExtremalShiftStrategy(FIRST, 0.05, sc, table_candidates(g, res.omega_star)))
    rec = rollout_upper(0.0, sc.initial, strat, g.grid, np.ones((3, 2), int), sc, resolution=g.resolution)
    node, _ = g.locate(3, rec.final.points)
    assert g.terminal[node] == rec.outcome


def test_q_zero_guarantee(split_graph):
    sc, g, res = split_graph
    q = build_q_strategy(res.lower, g, 0.01, sc, k=0)
    est = estimate_J2(0.0, sc.initial, q, g.grid, sc, resolution=g.resolution)
    assert est.value >= res.lower[0].root - 0.01 - 1e-12


def test_gamma_sandwich(split_graph):
    sc, g, res = split_graph
    lo, up = res.omega_star, res.omega_upper_star
    grids = [TimeGrid.uniform(0.0, sc.horizon, 1), g.grid]
    kw = {"resolution": g.resolution, "model_grid": g.grid}
    gam1 = estimate_gamma1(0.0, sc.initial, sc, [0.05], grids,
                           lambda e: FeedbackStrategy(FIRST, ExtremalShiftStrategy(
                               FIRST, e, sc, table_candidates(g, lo))), **kw)
    gam2 = estimate_gamma2(0.0, sc.initial, sc, [0.05], grids,
                           lambda e: FeedbackStrategy(SECOND, ExtremalShiftStrategy(
                               SECOND, e, sc, table_candidates(g, up))), **kw)
    assert len(gam1["rows"]) == 2
    # any second-player guarantee lies below any first-player guarantee
    assert gam2["estimate"] <= up.root + 1e-12
    assert lo.root - 1e-12 <= gam1["estimate"]
    assert gam2["estimate"] <= gam1["estimate"] + 1e-12
