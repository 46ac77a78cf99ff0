"""Game rollouts under feedback and memory strategies, and adversarial search.

Rollouts advance the crowd one model cell at a time.  With a quantization
``resolution`` every particle is snapped to the lattice at the end of each
cell, and cells are integrated in lattice order, which is exactly how the
reachable-measure graph is built; rollout outcomes then coincide with graph
values bit for bit.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .control import (
    FIRST,
    SECOND,
    ControlField,
    JointControlField,
    RelaxedSchedule,
    all_pure_assignments,
    count_pure_fields,
    join_with_response,
    other_player,
)
from .dynamics import Scenario, check_step, generate_flow, integrate_batch
from .errors import GridError, SearchSpaceTooLarge
from .measure import EmpiricalMeasure, MeasureFlow, lattice_size, to_lattice

DEFAULT_STEP = 5e-3
DEFAULT_CAP = 10**6
HEURISTIC_RESTARTS = 8
BATCH_CHUNK = 200_000


@dataclass(frozen=True)
class TimeGrid:
    nodes: tuple

    def __post_init__(self):
        nodes = tuple(float(t) for t in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 1 or any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise GridError("time grid nodes must be strictly increasing")
        if nodes[0] < -1e-12:
            raise GridError("time grid starts before 0")

    @classmethod
    def uniform(cls, t0: float, horizon: float, cells: int) -> "TimeGrid":
        if cells < 1:
            raise GridError("need at least one cell")
        return cls(tuple(np.linspace(t0, horizon, cells + 1)))

    @property
    def cells(self) -> int:
        return len(self.nodes) - 1

    @property
    def fineness(self) -> float:
        return float(np.max(np.diff(self.nodes))) if self.cells else 0.0

    @property
    def start(self) -> float:
        return self.nodes[0]

    @property
    def end(self) -> float:
        return self.nodes[-1]

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        for i, node in enumerate(self.nodes):
            if abs(node - t) <= tol:
                return i
        raise GridError(f"{t} is not a grid node")

    def contains(self, t: float, tol: float = 1e-9) -> bool:
        return any(abs(node - t) <= tol for node in self.nodes)

    def is_subgrid_of(self, other: "TimeGrid") -> bool:
        return all(other.contains(t) for t in self.nodes)

    def check_horizon(self, t0: float, horizon: float):
        if abs(self.start - t0) > 1e-9:
            raise GridError(f"grid starts at {self.start}, game at {t0}")
        if abs(self.end - horizon) > 1e-9:
            raise GridError(f"grid ends at {self.end}, horizon is {horizon}")


@dataclass
class FeedbackStrategy:
    """``rule(t, m)`` returns a constant control field for the crowd ``m``."""

    player: str
    rule: Callable

    def __call__(self, t: float, m: EmpiricalMeasure) -> ControlField:
        return self.rule(t, m)


@dataclass
class MemoryStrategy:
    """``rule(i, history)`` sees the crowd at grid nodes ``t_0 .. t_i``."""

    player: str
    grid: TimeGrid
    rule: Callable

    def __call__(self, i: int, history: list) -> ControlField:
        return self.rule(i, list(history))


def constant_strategy(player: str, sc: Scenario, atom_index: int) -> FeedbackStrategy:
    grid = sc.grid_u if player == FIRST else sc.grid_v
    return FeedbackStrategy(player, lambda t, m: ControlField.from_indices(player, grid, [atom_index] * m.n))


def as_memory(strat: FeedbackStrategy, grid: TimeGrid) -> MemoryStrategy:
    """A feedback strategy viewed as one that ignores all but the latest node."""
    return MemoryStrategy(strat.player, grid, lambda i, hist: strat(grid.nodes[i], hist[-1]))


@dataclass
class RolloutRecord:
    flow: MeasureFlow
    model_grid: TimeGrid
    states: list  # crowd at every model node
    fields: list  # (time, issued ControlField) at strategy nodes
    joint_fields: list  # JointControlField per model cell
    opponent: np.ndarray  # (cells, N) opponent atom indices
    own: np.ndarray  # (cells, N) strategy atom indices
    outcome: float
    player: str

    @property
    def final(self) -> EmpiricalMeasure:
        return self.states[-1]


# ---------------------------------------------------------------------------
# one model cell


@dataclass(frozen=True)
class CellModel:
    """Integrator settings shared by rollouts and the reachable graph."""

    step: float = DEFAULT_STEP
    method: str = "euler"
    resolution: Optional[float] = None

    @property
    def lattice(self) -> Optional[int]:
        return None if self.resolution is None else lattice_size(self.resolution)


def lattice_codes(idx: np.ndarray, size: int) -> np.ndarray:
    """Scalar code per particle: ``sum_k idx_k size^k``; shape ``(..., N)``."""
    mult = size ** np.arange(idx.shape[-1], dtype=np.int64)
    return (idx.astype(np.int64) * mult).sum(axis=-1)


def canonical_order(idx: np.ndarray, size: int) -> np.ndarray:
    """Stable sort order of particles by lattice code, batched over leading axes."""
    return np.argsort(lattice_codes(idx, size), axis=-1, kind="stable")


def model_step(sc: Scenario, t0: float, t1: float, pts, u_idx, v_idx, model: CellModel,
               record: bool = False):
    """Integrate ``B`` uniform crowds ``(B, N, d)`` over one cell with pure controls."""
    pts = np.asarray(pts, dtype=float)
    b, n, _ = pts.shape
    w = np.full((b, n), 1.0 / n)
    u = sc.grid_u.atoms[np.asarray(u_idx)]
    v = sc.grid_v.atoms[np.asarray(v_idx)]
    if record or b <= BATCH_CHUNK:
        return integrate_batch(sc, t0, t1, pts, w, u, v, model.step, model.method, record=record)
    out = np.empty_like(pts)
    for lo in range(0, b, BATCH_CHUNK):
        hi = min(b, lo + BATCH_CHUNK)
        out[lo:hi] = integrate_batch(sc, t0, t1, pts[lo:hi], w[lo:hi], u[lo:hi], v[lo:hi],
                                     model.step, model.method)
    return out


def _cell_pure(sc, t0, t1, pts, u_idx, v_idx, model: CellModel, record=False):
    """Advance a batch of uniform crowds; quantize and keep particle identity.

    Returns the end positions ``(B, N, d)`` and, with ``record``, the
    substep times and states of the (single) crowd.
    """
    size = model.lattice
    if size is None:
        res = model_step(sc, t0, t1, pts, u_idx, v_idx, model, record)
        if record:
            times, states = res
            return states[-1], times, states
        return res, None, None
    lat = to_lattice(pts, size)
    order = canonical_order(lat, size)
    inv = np.argsort(order, axis=-1)
    sorted_pts = np.take_along_axis(lat, order[..., None], axis=1) / size
    su = np.take_along_axis(np.asarray(u_idx), order, axis=1)
    sv = np.take_along_axis(np.asarray(v_idx), order, axis=1)
    res = model_step(sc, t0, t1, sorted_pts, su, sv, model, record)
    if record:
        times, states = res
        states = np.take_along_axis(states, inv[None, :, :, None], axis=2)
        end = to_lattice(states[-1], size) / size
        states = states.copy()
        states[-1] = end
        return end, times, states
    end = np.take_along_axis(res, inv[..., None], axis=1)
    return to_lattice(end, size) / size, None, None


def _start_points(m0: EmpiricalMeasure, model: CellModel) -> np.ndarray:
    if model.lattice is None:
        return m0.points.copy()
    return to_lattice(m0.points, model.lattice) / model.lattice


# ---------------------------------------------------------------------------
# rollouts


def _resolve_grids(t0, sc, grid: TimeGrid, model_grid: Optional[TimeGrid]):
    grid.check_horizon(t0, sc.horizon)
    mg = model_grid or grid
    mg.check_horizon(t0, sc.horizon)
    if not grid.is_subgrid_of(mg):
        raise GridError("strategy partition must be a subset of the model grid")
    return mg


def _opponent_at(opponent, c, t, m):
    if callable(opponent):
        return np.asarray(opponent(c, t, m), dtype=int)
    return np.asarray(opponent[c], dtype=int)


def _rollout(player, t0, m0, strat, grid, opponent, sc, model, model_grid):
    mg = _resolve_grids(t0, sc, grid, model_grid)
    check_step(sc, model.step)
    opp_grid = sc.grid_v if player == FIRST else sc.grid_u
    memory = isinstance(strat, MemoryStrategy)
    pts = _start_points(m0, model)
    w = m0.weights
    states = [EmpiricalMeasure(pts, w, check=False)]
    history = [states[0]]
    fields, joints, opp_trace, own_trace = [], [], [], []
    all_t, all_x = [np.array([t0])], [pts[None]]
    current: Optional[ControlField] = None
    for c in range(mg.cells):
        t_a, t_b = mg.nodes[c], mg.nodes[c + 1]
        m_now = states[-1]
        if grid.contains(t_a):
            if memory:
                current = strat(grid.index_of(t_a), history)
            else:
                current = strat(t_a, m_now)
            fields.append((t_a, current))
        opp = _opponent_at(opponent, c, t_a, m_now)
        if current.is_pure() and m_now.is_uniform():
            own = current.pure_indices()
            u_idx, v_idx = (own, opp) if player == FIRST else (opp, own)
            end, times, xs = _cell_pure(sc, t_a, t_b, m_now.points[None], u_idx[None], v_idx[None],
                                        model, record=True)
            joint = JointControlField.from_pure(u_idx, v_idx, len(sc.grid_u), len(sc.grid_v))
            joint.declared_marginal = (player, current)
            new_pts, new_w = end[0], w
            all_t.append(times[1:])
            all_x.append(xs[1:, 0])
        else:
            # mixtures: split particles, the opponent answers every component alike
            own = np.full(m_now.n, -1)
            resp = [[RelaxedSchedule.pure(int(opp[i]), len(opp_grid)) for _ in comps]
                    for i, comps in enumerate(current.entries)]
            joint = join_with_response(current, resp)
            flow = generate_flow(sc, t_a, m_now, joint, t_b, model.step, model.method)
            new_pts, new_w = flow.positions[-1], flow.weights
            if model.lattice is not None:
                new_pts = to_lattice(new_pts, model.lattice) / model.lattice
            if new_pts.shape[0] != pts.shape[0]:
                raise NotImplementedError("mixed fields change the particle count; "
                                          "record flows per cell with generate_flow instead")
            all_t.append(flow.time_grid[1:])
            xs = flow.positions[1:].copy()
            xs[-1] = new_pts
            all_x.append(xs)
        joints.append(joint)
        opp_trace.append(opp)
        own_trace.append(own)
        states.append(EmpiricalMeasure(new_pts, new_w, check=False))
        if grid.contains(t_b):
            history.append(states[-1])
        w = new_w
    flow = MeasureFlow(np.concatenate(all_t), np.concatenate(all_x, axis=0), w, sc.constants.C0)
    return RolloutRecord(flow, mg, states, fields, joints, np.asarray(opp_trace),
                         np.asarray(own_trace), sc.g(states[-1]), player)


def rollout_upper(t0, m0, strat, grid: TimeGrid, opponent, sc: Scenario, *, step: float = DEFAULT_STEP,
                  resolution: Optional[float] = None, model_grid: Optional[TimeGrid] = None,
                  method: str = "euler") -> RolloutRecord:
    """First player follows ``strat``; the second plays ``opponent[c]`` on model cell ``c``.

    ``opponent`` is a ``(cells, N)`` array of second-player atom indices or a
    callable ``(cell, t, m) -> indices``.
    """
    if strat.player != FIRST:
        raise ValueError("rollout_upper needs a first-player strategy")
    return _rollout(FIRST, t0, m0, strat, grid, opponent, sc, CellModel(step, method, resolution), model_grid)


def rollout_lower(t0, m0, strat, grid: TimeGrid, opponent, sc: Scenario, *, step: float = DEFAULT_STEP,
                  resolution: Optional[float] = None, model_grid: Optional[TimeGrid] = None,
                  method: str = "euler") -> RolloutRecord:
    """Mirror of :func:`rollout_upper` with the strategy on the second player."""
    if strat.player != SECOND:
        raise ValueError("rollout_lower needs a second-player strategy")
    return _rollout(SECOND, t0, m0, strat, grid, opponent, sc, CellModel(step, method, resolution), model_grid)


def rollout_memory(s, mu, strat: MemoryStrategy, opponent, sc: Scenario, *, step: float = DEFAULT_STEP,
                   resolution: Optional[float] = None, model_grid: Optional[TimeGrid] = None,
                   method: str = "euler") -> RolloutRecord:
    model = CellModel(step, method, resolution)
    return _rollout(strat.player, s, mu, strat, strat.grid, opponent, sc, model, model_grid)


# ---------------------------------------------------------------------------
# adversarial search


@dataclass
class SearchResult:
    value: float
    mode: str  # "exhaustive" or "heuristic"
    label: str  # what the number certifies
    opponent: np.ndarray  # (cells, N) best opponent found
    evaluated: int

    def __float__(self):
        return float(self.value)


def _decide(strat, player, t, i_grid, m, history):
    fld = strat(i_grid, history) if isinstance(strat, MemoryStrategy) else strat(t, m)
    if not fld.is_pure():
        raise ValueError("adversarial search needs pure strategy fields")
    return fld.pure_indices()


def _exhaustive(player, t0, m0, strat, grid, sc, model, mg, maximize, cap):
    """Level-by-level expansion of every opponent sequence, with state merging.

    Feedback strategies merge branches reaching the same crowd with the same
    active field; memory strategies merge only identical node histories.
    """
    opp_n = len(sc.grid_v) if player == FIRST else len(sc.grid_u)
    n = m0.n
    total = count_pure_fields(opp_n, n, mg.cells)
    if total > cap:
        raise SearchSpaceTooLarge(f"{total} opponent sequences exceed the cap {cap}")
    opp_table = all_pure_assignments(opp_n, n)
    memory = isinstance(strat, MemoryStrategy)
    pts0 = _start_points(m0, model)
    # a level entry: (points, active own indices, history tuple)
    levels = [[(pts0, None, (pts0.tobytes(),))]]
    hist_pts = {(pts0.tobytes(),): [pts0]}
    links = []  # per level: (parent idx per child, opponent idx per child)
    evaluated = 0
    for c in range(mg.cells):
        t_a, t_b = mg.nodes[c], mg.nodes[c + 1]
        cur = levels[-1]
        owns = []
        for pts, active, hist in cur:
            if grid.contains(t_a):
                history = [EmpiricalMeasure(p, check=False) for p in hist_pts[hist]] if memory else None
                own = _decide(strat, player, t_a, grid.index_of(t_a),
                              EmpiricalMeasure(pts, check=False), history)
            else:
                own = active
            owns.append(own)
        k = len(cur)
        base = np.repeat(np.stack([e[0] for e in cur]), len(opp_table), axis=0)
        own_b = np.repeat(np.stack(owns), len(opp_table), axis=0)
        opp_b = np.tile(opp_table, (k, 1))
        u_idx, v_idx = (own_b, opp_b) if player == FIRST else (opp_b, own_b)
        end, _, _ = _cell_pure(sc, t_a, t_b, base, u_idx, v_idx, model)
        evaluated += end.shape[0]
        nxt, index = [], {}
        parent = np.repeat(np.arange(k), len(opp_table))
        child = np.empty(end.shape[0], dtype=int)
        for j in range(end.shape[0]):
            p = end[j]
            own_j = own_b[j]
            hist = cur[parent[j]][2]
            if memory:
                new_hist = hist + (p.tobytes(),) if grid.contains(t_b) else hist
                key = (p.tobytes(), own_j.tobytes(), new_hist)
            else:
                new_hist = ()
                key = (p.tobytes(), own_j.tobytes())
            if key not in index:
                index[key] = len(nxt)
                if memory and new_hist not in hist_pts:
                    hist_pts[new_hist] = hist_pts[hist] + ([p] if grid.contains(t_b) else [])
                nxt.append((p, own_j, new_hist))
            child[j] = index[key]
        links.append((child.reshape(k, len(opp_table))))
        levels.append(nxt)
    w = m0.weights
    vals = sc.payoff.batch(np.stack([e[0] for e in levels[-1]]), np.broadcast_to(w, (len(levels[-1]), n)))
    best_choice = []
    for c in range(mg.cells - 1, -1, -1):
        table = vals[links[c]]
        pick = np.argmax(table, axis=1) if maximize else np.argmin(table, axis=1)
        best_choice.append(pick)
        vals = table[np.arange(table.shape[0]), pick]
    best_choice.reverse()
    # replay the optimal branch
    node = 0
    opp_seq = []
    for c in range(mg.cells):
        o = best_choice[c][node]
        opp_seq.append(opp_table[o])
        node = links[c][node, o]
    return float(vals[0]), np.asarray(opp_seq), evaluated


def _heuristic(player, t0, m0, strat, grid, sc, model, mg, maximize, seed, restarts):
    """Coordinate ascent over (cell, particle) opponent choices with random restarts."""
    opp_n = len(sc.grid_v) if player == FIRST else len(sc.grid_u)
    rng = np.random.default_rng(seed)
    sign = 1.0 if maximize else -1.0
    evaluated = 0

    def score(seq):
        nonlocal evaluated
        evaluated += 1
        return sign * _rollout(player, t0, m0, strat, grid, seq, sc, model, mg).outcome

    best_val, best_seq = -np.inf, None
    for _ in range(restarts):
        seq = rng.integers(opp_n, size=(mg.cells, m0.n))
        cur = score(seq)
        improved = True
        while improved:
            improved = False
            for c in range(mg.cells):
                for i in range(m0.n):
                    for a in range(opp_n):
                        if a == seq[c, i]:
                            continue
                        trial = seq.copy()
                        trial[c, i] = a
                        val = score(trial)
                        if val > cur + 1e-15:
                            seq, cur, improved = trial, val, True
        if cur > best_val:
            best_val, best_seq = cur, seq
    return sign * best_val, best_seq, evaluated


def _estimate(player, t0, m0, strat, grid, sc, search, cap, seed, restarts, step, resolution,
              model_grid, method, maximize):
    if isinstance(strat, MemoryStrategy):
        grid = strat.grid
    model = CellModel(step, method, resolution)
    mg = _resolve_grids(t0, sc, grid, model_grid)
    check_step(sc, step)
    if search == "exhaustive":
        val, seq, n = _exhaustive(player, t0, m0, strat, grid, sc, model, mg, maximize, cap)
        label = "exact over pure piecewise-constant opponents"
    elif search == "heuristic":
        val, seq, n = _heuristic(player, t0, m0, strat, grid, sc, model, mg, maximize, seed, restarts)
        label = "lower bound on the sup" if maximize else "upper bound on the inf"
    else:
        raise ValueError(f"search must be 'exhaustive' or 'heuristic', got {search!r}")
    return SearchResult(val, search, label, seq, n)


def estimate_J1(t0, m0, strat, grid: TimeGrid, sc: Scenario, search: str = "exhaustive", *,
                cap: int = DEFAULT_CAP, seed: int = 0, restarts: int = HEURISTIC_RESTARTS,
                step: float = DEFAULT_STEP, resolution: Optional[float] = None,
                model_grid: Optional[TimeGrid] = None, method: str = "euler") -> SearchResult:
    """Worst-case outcome of a first-player strategy over opponent sequences."""
    return _estimate(FIRST, t0, m0, strat, grid, sc, search, cap, seed, restarts, step, resolution,
                     model_grid, method, maximize=True)


def estimate_J2(t0, m0, strat, grid: TimeGrid, sc: Scenario, search: str = "exhaustive", *,
                cap: int = DEFAULT_CAP, seed: int = 0, restarts: int = HEURISTIC_RESTARTS,
                step: float = DEFAULT_STEP, resolution: Optional[float] = None,
                model_grid: Optional[TimeGrid] = None, method: str = "euler") -> SearchResult:
    """Worst-case (smallest) outcome of a second-player strategy."""
    return _estimate(SECOND, t0, m0, strat, grid, sc, search, cap, seed, restarts, step, resolution,
                     model_grid, method, maximize=False)


def _gamma(player, t0, m0, sc, eps_list, grid_list, strategy_factory, search, kwargs):
    rows = []
    for eps in eps_list:
        for grid in grid_list:
            strat = strategy_factory(eps)
            est = (estimate_J1 if player == FIRST else estimate_J2)(t0, m0, strat, grid, sc, search, **kwargs)
            rows.append({"eps": float(eps), "fineness": grid.fineness, "cells": grid.cells,
                         "value": est.value, "mode": est.mode, "label": est.label})
    vals = [r["value"] for r in rows]
    best = min(vals) if player == FIRST else max(vals)
    return {"rows": rows, "estimate": best, "mode": search}


def estimate_gamma1(t0, m0, sc: Scenario, eps_list, grid_list, strategy_factory,
                    search: str = "exhaustive", **kwargs) -> dict:
    """Outcomes of ``strategy_factory(eps)`` over partitions; the minimum bounds the upper value.

    ``strategy_factory`` typically wraps an extremal shift strategy built on
    a lower value table.
    """
    return _gamma(FIRST, t0, m0, sc, eps_list, grid_list, strategy_factory, search, kwargs)


def estimate_gamma2(t0, m0, sc: Scenario, eps_list, grid_list, strategy_factory,
                    search: str = "exhaustive", **kwargs) -> dict:
    return _gamma(SECOND, t0, m0, sc, eps_list, grid_list, strategy_factory, search, kwargs)


# ---------------------------------------------------------------------------
# traces


def trace_csv(rec: RolloutRecord, sc: Scenario, meta: Optional[dict] = None) -> str:
    """Rollout as CSV: one row per (substep time, particle) plus an outcome row."""
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    wr = csv.writer(buf, lineterminator="\n")
    d = sc.dim
    wr.writerow(["t", "particle"] + [f"x{k}" for k in range(d)] + ["weight", "u_atom", "v_atom"])
    mg = rec.model_grid
    u_tr, v_tr = (rec.own, rec.opponent) if rec.player == FIRST else (rec.opponent, rec.own)
    for k, t in enumerate(rec.flow.time_grid):
        c = min(int(np.searchsorted(mg.nodes, t + 1e-12, side="right")) - 1, mg.cells - 1)
        for p in range(rec.flow.positions.shape[1]):
            ua = int(u_tr[c][p]) if p < len(u_tr[c]) else -1
            va = int(v_tr[c][p]) if p < len(v_tr[c]) else -1
            wr.writerow([repr(float(t)), p] + [repr(float(x)) for x in rec.flow.positions[k, p]]
                        + [repr(float(rec.flow.weights[p])), ua, va])
    wr.writerow(["outcome", "", *([""] * d), "", "", repr(float(rec.outcome))])
    return buf.getvalue()
