"""Programmed iteration on the reachable-measure graph.

Nodes of layer ``l`` are uniform N-particle crowds on the quantization
lattice at grid time ``t_l``, stored as particle lists sorted by lattice
code.  An edge applies one pure per-particle pair of controls over one cell.
Because controls committed for several cells stay attached to particles,
the iteration tracks the committed assignment alongside the node and edges
carry the particle permutation induced by re-sorting.

Lower tables (first player answers a committed second-player field) satisfy
``omega_{k+1} >= omega_k`` exactly; upper tables are the mirror image.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import FIRST, SECOND, ControlField, RelaxedSchedule, all_pure_assignments
from .dynamics import Scenario, check_step, generate_flow
from .control import JointControlField
from .engine import (
    DEFAULT_STEP,
    CellModel,
    MemoryStrategy,
    TimeGrid,
    canonical_order,
    lattice_codes,
    model_step,
)
from .errors import GraphTooLarge, InvalidMeasure, TableIncomplete
from .measure import EmpiricalMeasure, canonical_key, lattice_size, to_lattice

DEFAULT_GRAPH_CAP = 4_000_000
LOWER = "lower"
UPPER = "upper"


def digits_to_index(digits: np.ndarray, base: int) -> np.ndarray:
    """Inverse of :func:`all_pure_assignments` (first particle most significant)."""
    n = digits.shape[-1]
    mult = base ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return (digits.astype(np.int64) * mult).sum(axis=-1)


@dataclass
class ReachableGraph:
    times: np.ndarray  # (K+1,)
    size: int  # lattice points per axis
    n_particles: int
    dim: int
    nodes: list  # layer -> (n_l, N, d) lattice ints, particles sorted by code
    succ: list  # layer -> (n_l, nA, nB) successor index in layer l+1
    perm: list  # layer -> (n_l, nA, nB, N): particle p lands at sorted slot perm[..., p]
    n_u: int
    n_v: int
    model: CellModel
    terminal: np.ndarray  # payoff on the last layer
    scenario_hash: str = ""
    _lookup: list = field(default_factory=list, repr=False)

    @property
    def cells(self) -> int:
        return len(self.times) - 1

    @property
    def layer_sizes(self) -> list:
        return [int(x.shape[0]) for x in self.nodes]

    @property
    def n_a(self) -> int:
        return self.n_u ** self.n_particles

    @property
    def n_b(self) -> int:
        return self.n_v ** self.n_particles

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(tuple(self.times))

    @property
    def resolution(self) -> float:
        return 1.0 / self.size

    def points(self, layer: int, node: int) -> np.ndarray:
        return self.nodes[layer][node] / self.size

    def measure(self, layer: int, node: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.points(layer, node), check=False)

    def layer_points(self, layer: int) -> np.ndarray:
        return self.nodes[layer] / self.size

    def node_key(self, layer: int, node: int) -> str:
        """Printable node identity: particle lattice indices, e.g. ``4;12``."""
        return ";".join(",".join(str(int(c)) for c in row) for row in self.nodes[layer][node])

    def canonical_key(self, layer: int, node: int) -> tuple:
        return canonical_key(self.measure(layer, node), self.resolution)

    def _ensure_lookup(self):
        if not self._lookup:
            for lat in self.nodes:
                codes = lattice_codes(lat, self.size)
                self._lookup.append({c.tobytes(): i for i, c in enumerate(codes)})

    def locate(self, layer: int, pts) -> tuple:
        """Node index of a crowd and the sorted slot of each of its particles."""
        self._ensure_lookup()
        lat = to_lattice(np.asarray(pts, dtype=float), self.size)
        if lat.shape != (self.n_particles, self.dim):
            raise InvalidMeasure("crowd size does not match the graph")
        order = canonical_order(lat, self.size)
        codes = lattice_codes(lat[order], self.size)
        hit = self._lookup[layer].get(codes.tobytes())
        if hit is None:
            raise KeyError(f"crowd is not a node of layer {layer}")
        slot = np.empty(self.n_particles, dtype=int)
        slot[order] = np.arange(self.n_particles)
        return hit, slot

    def layer_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9:
            raise KeyError(f"{t} is not a graph time")
        return k


def build_graph(t0: float, m0: EmpiricalMeasure, grid: TimeGrid, sc: Scenario,
                quantize_resolution: float, cap: int = DEFAULT_GRAPH_CAP, *,
                step: float = DEFAULT_STEP, method: str = "euler") -> ReachableGraph:
    """Forward expansion over all pure per-particle control pairs, one cell at a time."""
    grid.check_horizon(t0, sc.horizon)
    if not m0.is_uniform():
        raise InvalidMeasure("the reachable graph needs a uniformly weighted crowd")
    model = CellModel(step, method, quantize_resolution)
    check_step(sc, step)
    size = model.lattice
    n, d = m0.n, m0.dim
    A = all_pure_assignments(len(sc.grid_u), n)
    B = all_pure_assignments(len(sc.grid_v), n)
    na, nb = len(A), len(B)
    root = to_lattice(m0.points, size)
    root = root[canonical_order(root, size)]
    nodes = [root[None]]
    succ, perm = [], []
    for layer in range(grid.cells):
        cur = nodes[-1]
        n_l = cur.shape[0]
        edges = n_l * na * nb
        if edges > cap:
            raise GraphTooLarge(
                f"layer {layer} needs {edges} edge integrations (cap {cap})",
                [x.shape[0] for x in nodes],
            )
        pts = np.repeat(cur / size, na * nb, axis=0)
        u_idx = np.tile(np.repeat(A, nb, axis=0), (n_l, 1))
        v_idx = np.tile(np.tile(B, (na, 1)), (n_l, 1))
        end = model_step(sc, grid.nodes[layer], grid.nodes[layer + 1], pts, u_idx, v_idx, model)
        lat = to_lattice(end, size)
        order = canonical_order(lat, size)
        sorted_lat = np.take_along_axis(lat, order[..., None], axis=1)
        slot = np.empty_like(order)
        np.put_along_axis(slot, order, np.arange(n)[None, :].repeat(len(order), 0), axis=1)
        codes = lattice_codes(sorted_lat, size)
        uniq, first, inv = np.unique(codes, axis=0, return_index=True, return_inverse=True)
        nodes.append(sorted_lat[first])
        succ.append(inv.reshape(n_l, na, nb))
        perm.append(slot.reshape(n_l, na, nb, n).astype(np.int8))
    w = np.full((nodes[-1].shape[0], n), 1.0 / n)
    terminal = sc.payoff.batch(nodes[-1] / size, w)
    return ReachableGraph(np.asarray(grid.nodes), size, n, d, nodes, succ, perm,
                          len(sc.grid_u), len(sc.grid_v), model, terminal, sc.hash())


# ---------------------------------------------------------------------------
# committed-assignment transitions


def _carried_transitions(graph: ReachableGraph, layer: int, player: str) -> np.ndarray:
    """``trans[n * nC + c, o] = s * nC + c'`` for committed assignment ``c``.

    ``player`` names who commits (``SECOND`` for lower tables); ``o`` ranges
    over the other player's assignments and ``c'`` is ``c`` re-indexed in the
    successor's particle order.
    """
    n = graph.n_particles
    succ, perm = graph.succ[layer], graph.perm[layer].astype(np.int64)
    n_l = succ.shape[0]
    if player == SECOND:
        base, nc = graph.n_v, graph.n_b
        s = succ.transpose(0, 2, 1)  # (n_l, nB, nA)
        p = perm.transpose(0, 2, 1, 3)  # (n_l, nB, nA, N)
    else:
        base, nc = graph.n_u, graph.n_a
        s, p = succ, perm  # (n_l, nA, nB)
    digits = all_pure_assignments(base, n)  # (nC, N)
    moved = np.zeros(p.shape, dtype=np.int64)
    np.put_along_axis(moved, p, np.broadcast_to(digits[None, :, None, :], p.shape), axis=-1)
    new_c = digits_to_index(moved, base)
    return (s.astype(np.int64) * nc + new_c).reshape(n_l * nc, -1)


@dataclass
class ValueTable:
    """Values of ``omega_k`` (lower) or ``omega^k`` (upper) on every graph node.

    ``choices[l][n, j, c]`` is the value of committing assignment ``c`` until
    layer ``l + j`` and answering optimally (``-inf``/``+inf`` where that
    option is unavailable).  Witnesses record the chosen switch layer,
    committed assignment and first-cell answer.
    """

    kind: str
    k: int
    values: list
    witness_r: list
    witness_commit: list
    witness_response: list
    choices: Optional[list] = None
    converged: bool = False
    gap: float = float("nan")
    last_increment: float = float("nan")

    def value(self, layer: int, node: int) -> float:
        return float(self.values[layer][node])

    @property
    def root(self) -> float:
        return float(self.values[0][0])


def _sweep(graph: ReachableGraph, prev: Optional[ValueTable], kind: str, k: int) -> ValueTable:
    """One application of the lower (``kind=LOWER``) or upper operator.

    With ``prev=None`` the base function is produced: commitment runs to the
    horizon and the payoff is read at the terminal layer.
    """
    K = graph.cells
    lower = kind == LOWER
    committer = SECOND if lower else FIRST
    nc = graph.n_b if lower else graph.n_a
    inner = np.min if lower else np.max
    blank = -np.inf if lower else np.inf
    trans = [_carried_transitions(graph, l, committer) for l in range(K)]
    sizes = graph.layer_sizes
    choices = [np.full((sizes[l], K - l + 1, nc), blank) for l in range(K + 1)]
    targets = range(K + 1) if prev is not None else [K]
    for r in targets:
        vals_r = graph.terminal if prev is None else prev.values[r]
        h = np.repeat(vals_r[:, None], nc, axis=1)
        choices[r][:, 0, :] = h
        for l in range(r - 1, -1, -1):
            h = inner(h.reshape(-1)[trans[l]], axis=1).reshape(sizes[l], nc)
            choices[l][:, r - l, :] = h
    values, wr, wc, wresp = [], [], [], []
    for l in range(K + 1):
        flat = choices[l].reshape(sizes[l], -1)
        best = flat.max(axis=1) if lower else flat.min(axis=1)
        idx = np.argmax(flat == best[:, None], axis=1)
        r = l + idx // nc
        c = idx % nc
        values.append(best)
        wr.append(r)
        wc.append(c)
        resp = np.full(sizes[l], -1)
        if l < K:
            for node in np.nonzero(r > l)[0]:
                st = trans[l][node * nc + c[node]]
                nxt = choices[l + 1][st // nc, r[node] - l - 1, st % nc]
                resp[node] = int(np.argmin(nxt) if lower else np.argmax(nxt))
        wresp.append(resp)
    return ValueTable(kind, k, values, wr, wc, wresp, choices)


def omega_lower_0(graph: ReachableGraph, sc: Optional[Scenario] = None) -> ValueTable:
    """Best constant second-player commitment to the horizon against pure answers."""
    return _sweep(graph, None, LOWER, 0)


def omega_upper_0(graph: ReachableGraph, sc: Optional[Scenario] = None) -> ValueTable:
    return _sweep(graph, None, UPPER, 0)


def apply_phi(table: ValueTable, graph: ReachableGraph, sc: Optional[Scenario] = None) -> ValueTable:
    """Lower operator: best switch layer and commitment against optimal answers."""
    if table.kind != LOWER:
        raise ValueError("apply_phi needs a lower table")
    return _sweep(graph, table, LOWER, table.k + 1)


def apply_psi(table: ValueTable, graph: ReachableGraph, sc: Optional[Scenario] = None) -> ValueTable:
    if table.kind != UPPER:
        raise ValueError("apply_psi needs an upper table")
    return _sweep(graph, table, UPPER, table.k + 1)


def _max_change(a: ValueTable, b: ValueTable) -> float:
    return float(max(np.max(np.abs(x - y)) for x, y in zip(a.values, b.values)))


@dataclass
class IterationResult:
    lower: list  # omega_0, omega_1, ...
    upper: list
    gap_history: list
    converged: bool
    mixture_gap: dict = field(default_factory=dict)

    @property
    def omega_star(self) -> ValueTable:
        return self.lower[-1]

    @property
    def omega_upper_star(self) -> ValueTable:
        return self.upper[-1]

    @property
    def root_gap(self) -> float:
        return self.upper[-1].root - self.lower[-1].root


def iterate(graph: ReachableGraph, sc: Optional[Scenario] = None, tol: float = 0.0, max_k: int = 50,
            start: Optional[tuple] = None, mixture_samples: int = 32, seed: int = 0) -> IterationResult:
    """Alternate both operators until neither table moves by more than ``tol``.

    ``start`` may hold previously computed ``(lower_tables, upper_tables)`` to
    resume from.  When ``sc`` is given, the relaxation gap of the base
    tables is probed with random mixed answers at the root.
    """
    if start is not None:
        lower, upper = list(start[0]), list(start[1])
    else:
        lower, upper = [omega_lower_0(graph)], [omega_upper_0(graph)]
    gaps = [u.root - l.root for l, u in zip(lower, upper)]
    converged = bool(lower[-1].converged and upper[-1].converged)
    while not converged and lower[-1].k < max_k:
        nl = apply_phi(lower[-1], graph)
        nu = apply_psi(upper[-1], graph)
        dl, du = _max_change(nl, lower[-1]), _max_change(nu, upper[-1])
        nl.last_increment, nu.last_increment = dl, du
        lower.append(nl)
        upper.append(nu)
        gaps.append(nu.root - nl.root)
        converged = dl <= tol and du <= tol
    for t in (lower[-1], upper[-1]):
        t.converged = converged
        t.gap = upper[-1].root - lower[-1].root
    res = IterationResult(lower, upper, gaps, converged)
    if sc is not None and mixture_samples > 0:
        res.mixture_gap = mixture_gap(graph, sc, lower[0], upper[0], mixture_samples, seed)
    return res


# ---------------------------------------------------------------------------
# relaxation monitoring


def _relaxed_terminal(graph, sc, points, commit_player, commit_idx, answer_mixes):
    """Payoff after committing pure atoms and answering with relaxed mixtures."""
    n = graph.n_particles
    m = EmpiricalMeasure(points, check=False)
    for l in range(graph.cells):
        entries = []
        for i in range(n):
            fixed = RelaxedSchedule.pure(int(commit_idx[i]), graph.n_v if commit_player == SECOND else graph.n_u)
            ans = RelaxedSchedule.constant(answer_mixes[l, i])
            pair = (ans, fixed) if commit_player == SECOND else (fixed, ans)
            entries.append([(1.0, pair[0], pair[1])])
        flow = generate_flow(sc, graph.times[l], m, JointControlField(entries), graph.times[l + 1],
                             graph.model.step)
        m = EmpiricalMeasure(to_lattice(flow.positions[-1], graph.size) / graph.size, m.weights, check=False)
    return sc.g(m)


def mixture_gap(graph, sc, lower0: ValueTable, upper0: ValueTable, samples: int = 32, seed: int = 0) -> dict:
    """Improvement that random relaxed answers achieve over the pure optimum at the root."""
    rng = np.random.default_rng(seed)
    n, K = graph.n_particles, graph.cells
    pts = graph.points(0, 0)
    out = {}
    for table, committer, n_ans in ((lower0, SECOND, graph.n_u), (upper0, FIRST, graph.n_v)):
        base = graph.n_v if committer == SECOND else graph.n_u
        commit = all_pure_assignments(base, n)[table.witness_commit[0][0]]
        vals = [
            _relaxed_terminal(graph, sc, pts, committer, commit, rng.dirichlet(np.ones(n_ans), size=(K, n)))
            for _ in range(samples)
        ]
        if committer == SECOND:
            out["lower"] = max(0.0, table.root - min(vals))
        else:
            out["upper"] = max(0.0, max(vals) - table.root)
    return out


# ---------------------------------------------------------------------------
# stability checks (edge-by-edge, independent of the sweep bookkeeping)


def _reach_extreme(graph, table_vals, l0, r, committer, minimize):
    """For each (node, committed assignment) at ``l0``: extreme value at layer ``r``.

    Walks the edges with explicit particle re-indexing of the commitment.
    """
    n = graph.n_particles
    base = graph.n_v if committer == SECOND else graph.n_u
    digits = all_pure_assignments(base, n)
    nc = len(digits)
    cur = np.repeat(table_vals[r][:, None], nc, axis=1)
    for l in range(r - 1, l0 - 1, -1):
        n_l = graph.nodes[l].shape[0]
        best = np.full((n_l, nc), np.inf if minimize else -np.inf)
        n_other = graph.n_a if committer == SECOND else graph.n_b
        for o in range(n_other):
            for c in range(nc):
                if committer == SECOND:
                    s = graph.succ[l][:, o, c]
                    p = graph.perm[l][:, o, c]
                else:
                    s = graph.succ[l][:, c, o]
                    p = graph.perm[l][:, c, o]
                moved = np.zeros((n_l, n), dtype=int)
                for i in range(n):
                    moved[np.arange(n_l), p[:, i]] = digits[c, i]
                val = cur[s, digits_to_index(moved, base)]
                best[:, c] = np.minimum(best[:, c], val) if minimize else np.maximum(best[:, c], val)
        cur = best
    return cur


def check_u_stability(graph: ReachableGraph, table: ValueTable, sc: Scenario, tol: float = 1e-9) -> dict:
    """Terminal bound ``g <= psi`` and, for every node, commitment and later layer,
    an answer keeping ``psi`` from increasing."""
    return _check_stability(graph, table, tol, lower=True)


def check_v_stability(graph: ReachableGraph, table: ValueTable, sc: Scenario, tol: float = 1e-9) -> dict:
    return _check_stability(graph, table, tol, lower=False)


def _check_stability(graph, table, tol, lower):
    K = graph.cells
    vals = table.values
    term = vals[K] - graph.terminal
    terminal_ok = bool(np.all(term >= -tol)) if lower else bool(np.all(term <= tol))
    worst = 0.0
    failures = 0
    for l in range(K):
        for r in range(l + 1, K + 1):
            ext = _reach_extreme(graph, vals, l, r, SECOND if lower else FIRST, minimize=lower)
            excess = (ext - vals[l][:, None]) if lower else (vals[l][:, None] - ext)
            worst = max(worst, float(excess.max()))
            failures += int(np.sum(excess > tol))
    return {"terminal_ok": terminal_ok, "violations": failures, "worst_excess": worst,
            "ok": terminal_ok and failures == 0}


# ---------------------------------------------------------------------------
# strategies with memory from the iterates


def _pick(table: ValueTable, layer: int, node: int, slack: float, lower: bool):
    """First (switch layer, commitment) within ``slack`` of the table value."""
    if table.choices is not None:
        opts = table.choices[layer][node]
        target = table.values[layer][node]
        ok = opts >= target - slack if lower else opts <= target + slack
        flat = np.argmax(ok.reshape(-1))
        j, c = divmod(int(flat), opts.shape[1])
        return layer + j, c
    if table.witness_r is None or table.witness_commit is None:
        raise TableIncomplete(f"table k={table.k} has no witnesses")
    return int(table.witness_r[layer][node]), int(table.witness_commit[layer][node])


def _memory_from_tables(graph: ReachableGraph, tables: list, eps: float, k: Optional[int],
                        start_layer: int, lower: bool, control_grid) -> MemoryStrategy:
    if k is None:
        k = len(tables) - 1
    if k >= len(tables):
        raise TableIncomplete(f"need tables up to k={k}, have {len(tables)}")
    for t in tables[: k + 1]:
        if t.choices is None and (t.witness_r is None or t.witness_commit is None):
            raise TableIncomplete(f"table k={t.k} has no witnesses")
    player = SECOND if lower else FIRST
    digits = all_pure_assignments(len(control_grid), graph.n_particles)

    def rule(i, history):
        layer = start_layer + i
        kk, l_cur = k, start_layer
        node, slot = graph.locate(l_cur, history[0].points)
        while True:
            r, c = _pick(tables[kk], l_cur, node, eps * 2.0 ** (-kk), lower)
            if r == l_cur and kk > 0:
                kk -= 1
                continue
            if layer < r or kk == 0:
                return ControlField.from_indices(player, control_grid, digits[c][slot])
            l_cur = r
            node, slot = graph.locate(l_cur, history[l_cur - start_layer].points)
            kk -= 1

    return MemoryStrategy(player, TimeGrid(tuple(graph.times[start_layer:])), rule)


def build_q_strategy(tables: list, graph: ReachableGraph, eps: float, sc: Scenario,
                     k: Optional[int] = None, start_layer: int = 0) -> MemoryStrategy:
    """Second-player memory strategy guaranteeing ``omega_k - eps * sum 2^-l``.

    Commits the recorded assignment until the recorded switch layer, then
    restarts from the observed crowd one iterate lower.
    """
    return _memory_from_tables(graph, tables, eps, k, start_layer, True, sc.grid_v)


def build_p_strategy(tables: list, graph: ReachableGraph, eps: float, sc: Scenario,
                     k: Optional[int] = None, start_layer: int = 0) -> MemoryStrategy:
    """First-player mirror of :func:`build_q_strategy` built on upper tables."""
    return _memory_from_tables(graph, tables, eps, k, start_layer, False, sc.grid_u)


def table_candidates(graph: ReachableGraph, table: ValueTable):
    """Candidate source for the extremal shift rule: nodes of the matching layer."""
    from .shift import CandidatePool

    def source(t, m):
        layer = graph.layer_of(t)
        return CandidatePool(graph.layer_points(layer), table.values[layer])

    return source


# ---------------------------------------------------------------------------
# persistence


TABLE_COLUMNS = ["kind", "k", "layer", "time", "node_key", "value",
                 "witness_commit", "witness_response", "witness_r"]


def _digits_str(idx, base, n):
    if idx < 0:
        return ""
    return ",".join(str(int(x)) for x in all_pure_assignments(base, n)[idx])


def tables_csv(graph: ReachableGraph, tables: list, meta: Optional[dict] = None) -> str:
    buf = io.StringIO()
    for key, val in (meta or {}).items():
        buf.write(f"# {key}={val}\n")
    buf.write(f"# layer_sizes={','.join(str(s) for s in graph.layer_sizes)}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(TABLE_COLUMNS)
    n = graph.n_particles
    for t in tables:
        base = graph.n_v if t.kind == LOWER else graph.n_u
        for l in range(graph.cells + 1):
            for node in range(graph.nodes[l].shape[0]):
                wr.writerow([
                    t.kind, t.k, l, repr(float(graph.times[l])), graph.node_key(l, node),
                    repr(float(t.values[l][node])),
                    _digits_str(int(t.witness_commit[l][node]), base, n),
                    _digits_str(int(t.witness_response[l][node]),
                                graph.n_u if t.kind == LOWER else graph.n_v, n),
                    int(t.witness_r[l][node]),
                ])
    return buf.getvalue()


def load_tables(text: str, graph: ReachableGraph) -> tuple:
    """Rebuild ``(lower_tables, upper_tables)`` from :func:`tables_csv` output.

    Choice arrays are not persisted; strategies built from reloaded tables
    use the recorded witnesses.  A ``# converged=True`` header marks the
    last pair as a stall, so resuming does no further sweeps; a
    ``# last_increment=<lower>,<upper>`` header restores the final increments.
    """
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(rows)
    keyed = {}
    for l in range(graph.cells + 1):
        for node in range(graph.nodes[l].shape[0]):
            keyed[(l, graph.node_key(l, node))] = node
    store: dict = {}
    for row in reader:
        kind, k, l = row["kind"], int(row["k"]), int(row["layer"])
        t = store.get((kind, k))
        if t is None:
            sizes = graph.layer_sizes
            t = ValueTable(kind, k, [np.full(s, np.nan) for s in sizes],
                           [np.full(s, -1) for s in sizes], [np.full(s, -1) for s in sizes],
                           [np.full(s, -1) for s in sizes])
            store[(kind, k)] = t
        try:
            node = keyed[(l, row["node_key"])]
        except KeyError as exc:
            raise TableIncomplete(f"node {row['node_key']} of layer {l} is not in the graph") from exc
        t.values[l][node] = float(row["value"])
        t.witness_r[l][node] = int(row["witness_r"])
        base = graph.n_v if kind == LOWER else graph.n_u
        if row["witness_commit"]:
            t.witness_commit[l][node] = int(digits_to_index(
                np.asarray([int(x) for x in row["witness_commit"].split(",")]), base))
        if row["witness_response"]:
            other = graph.n_u if kind == LOWER else graph.n_v
            t.witness_response[l][node] = int(digits_to_index(
                np.asarray([int(x) for x in row["witness_response"].split(",")]), other))
    lower = [store[k] for k in sorted(store) if k[0] == LOWER]
    upper = [store[k] for k in sorted(store) if k[0] == UPPER]
    for t in lower + upper:
        if any(np.isnan(v).any() for v in t.values):
            raise TableIncomplete(f"{t.kind} table k={t.k} misses nodes")
    if not lower or len(lower) != len(upper):
        raise TableIncomplete("lower and upper tables do not pair up")
    header = dict(ln[2:].split("=", 1) for ln in text.splitlines() if ln.startswith("# ") and "=" in ln)
    if header.get("converged") == "True":
        lower[-1].converged = upper[-1].converged = True
    if "last_increment" in header:
        lower[-1].last_increment, upper[-1].last_increment = (float(x) for x in header["last_increment"].split(","))
    return lower, upper
