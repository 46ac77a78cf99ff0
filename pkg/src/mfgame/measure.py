"""Empirical probability measures on the torus and exact optimal transport.

Measures are finite weighted particle clouds.  Distances use the squared
torus metric, so every quantity here is the periodic one, never the
Euclidean one on the unit cube.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .errors import (
    DegenerateMarginal,
    DimError,
    InvalidKernel,
    InvalidMeasure,
    InvalidPoint,
    OracleTooLarge,
)
from .torus import TorusPoint, sq_dist, wrap_array

WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-10
BRUTEFORCE_MAX = 8


class EmpiricalMeasure:
    """Weighted particle cloud standing for a probability on the torus.

    Points are stored as an ``(N, d)`` array of canonical coordinates.
    Coincident points are allowed; :meth:`merged` collapses them.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights=None, *, check: bool = True):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise InvalidMeasure(f"need a nonempty (N, d) point array, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidPoint("non-finite particle coordinates")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
        if check:
            if w.shape[0] != n:
                raise InvalidMeasure(f"{n} points but {w.shape[0]} weights")
            if np.any(~np.isfinite(w)) or np.any(w <= 0):
                raise InvalidMeasure("weights must be positive and finite")
            if abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise InvalidMeasure(f"weights sum to {w.sum()!r}, not 1")
        pts = wrap_array(pts)
        pts.setflags(write=False)
        w.setflags(write=False)
        self.points = pts
        self.weights = w

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        return cls(points)

    @classmethod
    def dirac(cls, point) -> "EmpiricalMeasure":
        return cls(np.atleast_1d(np.asarray(point, dtype=float)).reshape(1, -1))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.n) <= WEIGHT_TOL))

    def point(self, i: int) -> TorusPoint:
        return TorusPoint(tuple(float(c) for c in self.points[i]), self.dim)

    def translate(self, shift) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.points + np.asarray(shift, dtype=float), self.weights)

    def merged(self) -> "EmpiricalMeasure":
        """Collapse exactly coincident atoms, summing their weights."""
        uniq, inv = np.unique(self.points, axis=0, return_inverse=True)
        w = np.zeros(uniq.shape[0])
        np.add.at(w, inv.reshape(-1), self.weights)
        return EmpiricalMeasure(uniq, w / w.sum())

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.n}, dim={self.dim})"

    def __eq__(self, other):
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    # -- plain text serialization ------------------------------------------
    def to_text(self) -> str:
        lines = [f"# dim={self.dim} n={self.n}"]
        for p, w in zip(self.points, self.weights):
            lines.append(" ".join(repr(float(c)) for c in p) + " " + repr(float(w)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EmpiricalMeasure":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise InvalidMeasure("missing '# dim=<d> n=<N>' header")
        header = dict(tok.split("=", 1) for tok in lines[0].lstrip("#").split() if "=" in tok)
        try:
            dim, n = int(header["dim"]), int(header["n"])
        except (KeyError, ValueError) as exc:
            raise InvalidMeasure(f"bad header {lines[0]!r}") from exc
        rows = [ln for ln in lines[1:] if not ln.startswith("#")]
        if len(rows) != n:
            raise InvalidMeasure(f"header says n={n}, found {len(rows)} rows")
        data = []
        for ln in rows:
            vals = [float(tok) for tok in ln.replace(",", " ").split()]
            if len(vals) != dim + 1:
                raise InvalidMeasure(f"row {ln!r} does not have {dim} coords + weight")
            data.append(vals)
        arr = np.asarray(data, dtype=float)
        w = arr[:, dim]
        return cls(arr[:, :dim], w / w.sum() if abs(w.sum() - 1) <= 1e-9 else w)


def _check_dims(m1: EmpiricalMeasure, m2: EmpiricalMeasure):
    if m1.dim != m2.dim:
        raise DimError(f"dimension mismatch: {m1.dim} vs {m2.dim}")


def cost_matrix(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> np.ndarray:
    """Squared torus distances between all particle pairs."""
    _check_dims(m1, m2)
    return sq_dist(m1.points[:, None, :], m2.points[None, :, :])


@dataclass
class TransportPlan:
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    source: EmpiricalMeasure
    target: EmpiricalMeasure

    def dense(self) -> np.ndarray:
        out = np.zeros((self.source.n, self.target.n))
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def cost(self) -> float:
        c = sq_dist(self.source.points[self.rows], self.target.points[self.cols])
        return float(np.dot(self.mass, c))

    def is_permutation(self) -> bool:
        n = self.source.n
        return (
            n == self.target.n
            and self.rows.size == n
            and np.array_equal(np.sort(self.rows), np.arange(n))
            and np.array_equal(np.sort(self.cols), np.arange(n))
        )

    def as_permutation(self) -> np.ndarray:
        """``sigma`` with source particle ``i`` sent to target ``sigma[i]``."""
        if not self.is_permutation():
            raise ValueError("plan is not a permutation")
        sigma = np.empty(self.source.n, dtype=int)
        sigma[self.rows] = self.cols
        return sigma

    def check(self, tol: float = MARGINAL_TOL) -> bool:
        d = self.dense()
        return bool(
            np.all(self.mass > 0)
            and np.allclose(d.sum(axis=1), self.source.weights, atol=tol, rtol=0)
            and np.allclose(d.sum(axis=0), self.target.weights, atol=tol, rtol=0)
        )

    @classmethod
    def from_dense(cls, dense, source, target, threshold: float = 0.0) -> "TransportPlan":
        r, c = np.nonzero(np.asarray(dense) > threshold)
        return cls(r, c, np.asarray(dense)[r, c].astype(float), source, target)

    @classmethod
    def identity(cls, m: EmpiricalMeasure) -> "TransportPlan":
        idx = np.arange(m.n)
        return cls(idx, idx.copy(), m.weights.copy(), m, m)


def min_cost_transport(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Exact discrete transportation problem solved as a linear program.

    Returns the dense optimal coupling of weight vectors ``a`` and ``b``.
    HiGHS returns a vertex solution, so the support is a forest.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n1, n2 = cost.shape
    if abs(a.sum() - b.sum()) > 1e-9:
        raise InvalidMeasure("transport problem infeasible (mass mismatch)")
    a_eq = np.vstack([
        np.kron(np.eye(n1), np.ones((1, n2))),
        np.kron(np.ones((1, n1)), np.eye(n2)),
    ])
    res = linprog(
        cost.reshape(-1), A_eq=a_eq, b_eq=np.concatenate([a, b]),
        bounds=(0, None), method="highs-ds",
        # default tolerances (1e-7) accept visibly suboptimal vertices on
        # nearly degenerate costs
        options={"dual_feasibility_tolerance": 1e-10, "primal_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise InvalidMeasure(f"transport LP failed: {res.message}")
    flow = res.x.reshape(n1, n2)
    flow[flow < 1e-14] = 0.0
    return flow


def w2_exact(m1: EmpiricalMeasure, m2: EmpiricalMeasure, *, method: str = "auto"):
    """Exact 2-Wasserstein distance on the torus and an optimal plan.

    Equal-cardinality uniform measures go through a linear assignment
    solver; anything else through :func:`min_cost_transport`.
    ``method`` may force ``"assignment"`` or ``"flow"``.
    """
    _check_dims(m1, m2)
    cost = cost_matrix(m1, m2)
    use_assignment = (
        method == "assignment"
        or (method == "auto" and m1.n == m2.n and m1.is_uniform() and m2.is_uniform())
    )
    if use_assignment:
        if m1.n != m2.n:
            raise InvalidMeasure("assignment route needs equal cardinalities")
        rows, cols = linear_sum_assignment(cost)
        mass = np.asarray(m1.weights)[rows].copy()
        plan = TransportPlan(rows, cols, mass, m1, m2)
        total = float(cost[rows, cols].sum() / m1.n)
    else:
        dense = min_cost_transport(m1.weights, m2.weights, cost)
        plan = TransportPlan.from_dense(dense, m1, m2)
        total = float(np.sum(dense * cost))
    return math.sqrt(max(total, 0.0)), plan


def w2(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    return w2_exact(m1, m2)[0]


def w2_bruteforce(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    """Minimum over all permutations; test oracle for uniform measures."""
    _check_dims(m1, m2)
    if m1.n != m2.n or not (m1.is_uniform() and m2.is_uniform()):
        raise InvalidMeasure("brute force needs uniform measures of equal size")
    if m1.n > BRUTEFORCE_MAX:
        raise OracleTooLarge(f"N={m1.n} > {BRUTEFORCE_MAX}")
    cost = cost_matrix(m1, m2)
    idx = np.arange(m1.n)
    best = min(cost[idx, list(p)].sum() for p in itertools.permutations(range(m1.n)))
    return math.sqrt(best / m1.n)


def disintegrate(plan: TransportPlan, side: str = "source") -> np.ndarray:
    """Conditional laws of a plan given one marginal.

    Returns a dense row-stochastic matrix: for ``side="source"``, entry
    ``[i, j]`` is the mass sent from source ``i`` to target ``j`` divided by
    the weight of ``i``.  For ``side="target"`` the roles swap and row ``j``
    is the conditional over source particles.
    """
    dense = plan.dense()
    if side == "source":
        w = plan.source.weights
    elif side == "target":
        dense = dense.T
        w = plan.target.weights
    else:
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")
    if np.any(w <= 0):
        raise DegenerateMarginal("zero-weight particle has no conditional")
    return dense / w[:, None]


def recompose(cond: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return cond * np.asarray(weights)[:, None]


def push_forward(m: EmpiricalMeasure, fn: Callable, *, merge: bool = True) -> EmpiricalMeasure:
    """Image measure under a point map applied particle by particle."""
    out = []
    for p in m.points:
        q = np.atleast_1d(np.asarray(fn(p.copy()), dtype=float))
        if q.shape != (m.dim,) or not np.all(np.isfinite(q)):
            raise InvalidPoint(f"map produced invalid point {q!r}")
        out.append(q)
    img = EmpiricalMeasure(np.asarray(out), m.weights)
    return img.merged() if merge else img


@dataclass
class JointMeasure:
    """Atoms of ``m * b`` on torus x labels."""

    points: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    source: np.ndarray

    def marginal(self, n_particles: int) -> np.ndarray:
        w = np.zeros(n_particles)
        np.add.at(w, self.source, self.weights)
        return w

    def label_marginal(self, n_labels: int) -> np.ndarray:
        w = np.zeros(n_labels)
        np.add.at(w, self.labels, self.weights)
        return w


def star_product(m: EmpiricalMeasure, kernel) -> JointMeasure:
    """Joint measure carrying weight ``w_i * kernel[i, l]`` on ``(x_i, l)``."""
    k = np.asarray(kernel, dtype=float)
    if k.ndim != 2 or k.shape[0] != m.n:
        raise InvalidKernel(f"kernel must have one row per particle, got {k.shape}")
    if np.any(k < -WEIGHT_TOL) or np.any(np.abs(k.sum(axis=1) - 1.0) > WEIGHT_TOL):
        raise InvalidKernel("kernel rows must be probability vectors")
    i, lab = np.nonzero(k > 0)
    return JointMeasure(m.points[i], lab, m.weights[i] * k[i, lab], i)


# -- quantization ------------------------------------------------------------

def lattice_size(resolution: float) -> int:
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    return max(1, int(round(1.0 / resolution)))


def to_lattice(points, size: int) -> np.ndarray:
    """Nearest lattice index (mod ``size``) of each coordinate, halves rounded up."""
    return np.mod(np.floor(np.asarray(points, dtype=float) * size + 0.5), size).astype(np.int64)


def from_lattice(idx, size: int) -> np.ndarray:
    return np.asarray(idx, dtype=float) / size


def canonical_key(m: EmpiricalMeasure, resolution: float) -> tuple:
    """Hashable node identity: rounded, sorted and merged atoms.

    Coordinates are snapped to the nearest multiple of ``1/round(1/resolution)``
    (mod 1) and weights are rounded to 12 decimals.  Equal keys imply the
    measures are within half a lattice cell per coordinate of a common
    representative; distinct keys carry no separation guarantee.
    """
    size = lattice_size(resolution)
    lat = to_lattice(m.points, size)
    uniq, inv = np.unique(lat, axis=0, return_inverse=True)
    w = np.zeros(uniq.shape[0])
    np.add.at(w, inv.reshape(-1), m.weights)
    return tuple(
        (tuple(int(c) for c in row), round(float(wi), 12)) for row, wi in zip(uniq, w)
    )


def quantize(m: EmpiricalMeasure, resolution: float) -> EmpiricalMeasure:
    """Snap particles to the lattice, keeping particle identity (no merging)."""
    size = lattice_size(resolution)
    return EmpiricalMeasure(from_lattice(to_lattice(m.points, size), size), m.weights, check=False)


# -- trajectories and flows --------------------------------------------------

@dataclass
class ParticleTrajectory:
    time_grid: np.ndarray
    states: np.ndarray

    def max_step_drift(self) -> float:
        if len(self.time_grid) < 2:
            return 0.0
        return float(np.sqrt(sq_dist(self.states[1:], self.states[:-1])).max())


@dataclass
class MeasureFlow:
    """Flow of measures together with the particle paths that carry it.

    ``positions[k]`` holds every particle at ``time_grid[k]`` so the measure
    at any node is the push-forward of the path ensemble by evaluation.
    ``parent[p]`` is the index of the initial particle that sub-particle
    ``p`` was split from.
    """

    time_grid: np.ndarray
    positions: np.ndarray
    weights: np.ndarray
    lipschitz_const: float = 0.0
    parent: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_times(self) -> int:
        return len(self.time_grid)

    @property
    def start(self) -> float:
        return float(self.time_grid[0])

    @property
    def end(self) -> float:
        return float(self.time_grid[-1])

    def measure(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.positions[k], self.weights, check=False)

    @property
    def measures(self) -> list:
        return [self.measure(k) for k in range(self.n_times)]

    def final(self) -> EmpiricalMeasure:
        return self.measure(self.n_times - 1)

    def index_at(self, t: float, tol: float = 1e-9) -> int:
        """Largest node index with ``time_grid[k] <= t`` (within ``tol``)."""
        k = int(np.searchsorted(self.time_grid, t + tol, side="right")) - 1
        return min(max(k, 0), self.n_times - 1)

    def at(self, t: float) -> EmpiricalMeasure:
        return self.measure(self.index_at(t))

    def trajectory(self, p: int) -> ParticleTrajectory:
        return ParticleTrajectory(self.time_grid, self.positions[:, p, :])

    def trajectories(self) -> list:
        return [self.trajectory(p) for p in range(self.positions.shape[1])]

    def lipschitz_ratio(self) -> float:
        """Largest ``W2(m(t_k), m(t_{k+1})) / (t_{k+1} - t_k)`` over the grid.

        Uses the identity coupling of the carried particles, which is an
        upper bound on the true W2 between consecutive nodes.
        """
        dt = np.diff(self.time_grid)
        if dt.size == 0:
            return 0.0
        step = sq_dist(self.positions[1:], self.positions[:-1]) @ self.weights
        ok = dt > 0
        return float(np.max(np.sqrt(step[ok]) / dt[ok])) if ok.any() else 0.0


def path_w2(paths1: np.ndarray, paths2: np.ndarray) -> float:
    """W2 between two uniform path ensembles under the sup-in-time metric.

    ``paths*`` have shape ``(n_times, N, d)`` on a shared time grid.
    """
    if paths1.shape != paths2.shape:
        raise DimError("path ensembles must share grid, size and dimension")
    n = paths1.shape[1]
    d2 = sq_dist(paths1[:, :, None, :], paths2[:, None, :, :])  # (T, N, N)
    cost = d2.max(axis=0)
    r, c = linear_sum_assignment(cost)
    return math.sqrt(cost[r, c].sum() / n)


def sample_uniform_measure(rng: np.random.Generator, n: int, dim: int) -> EmpiricalMeasure:
    return EmpiricalMeasure(rng.random((n, dim)))


def sample_weighted_measure(rng: np.random.Generator, n: int, dim: int) -> EmpiricalMeasure:
    w = rng.random(n) + 0.1
    return EmpiricalMeasure(rng.random((n, dim)), w / w.sum())
