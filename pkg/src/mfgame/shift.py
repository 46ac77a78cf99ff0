"""Extremal shift: moduli, selectors, target choice and strategy fields.

The first player's rule at a position ``(s, m)``: pick a target measure
``nu`` minimizing a u-stable function over a W2 ball of squared radius
``rho(eps, s)``, couple ``m`` to ``nu`` optimally, and send each particle the
control that best pushes it toward its coupled target points.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .control import FIRST, SECOND, ControlField, RelaxedSchedule, join_with_response
from .dynamics import Scenario, ScenarioConstants, generate_flow, integrate_batch, substeps
from .errors import PlanMismatch
from .measure import (
    EmpiricalMeasure,
    TransportPlan,
    disintegrate,
    w2_exact,
)
from .torus import sq_dist, wrap_array

TIE_TOL = 1e-12
TOL_FACTOR = 10.0


@dataclass(frozen=True)
class ShiftConstants:
    """Moduli derived from the scenario constants for a given accuracy ``epsilon``."""

    epsilon: float
    base: ScenarioConstants
    dim: int

    def varpi1(self, eps: Optional[float] = None) -> float:
        e = self.epsilon if eps is None else eps
        b = self.base
        return 2 * math.sqrt(self.dim) * b.omega_f(e) + 4 * math.sqrt(self.dim) * b.L * b.C0 * e

    def varpi2(self, eps: Optional[float] = None) -> float:
        e = self.epsilon if eps is None else eps
        return 2 * self.varpi1(e) + 4 * self.base.C0**2 * e

    def rho(self, t: float, eps: Optional[float] = None) -> float:
        e = self.epsilon if eps is None else eps
        return (e + self.varpi2(e) * t) * math.exp(4 * self.base.L * t)

    def guarantee(self, horizon: float) -> float:
        """Payoff slack of the extremal rule at the horizon: ``omega_g(sqrt(rho(eps, T)))``."""
        return float(self.base.omega_g(math.sqrt(self.rho(horizon))))


# ---------------------------------------------------------------------------
# selectors


def _lift_direction(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return xs - (ys - np.floor(ys - xs + 0.5))


def direction_values(sc: Scenario, s, xs, ys, m: EmpiricalMeasure) -> np.ndarray:
    """``vals[a, b, q] = <x_q' - y_q', f(s, x_q, m, u_a, v_b)>`` with nearest lifts."""
    xs = wrap_array(np.atleast_2d(np.asarray(xs, dtype=float)))
    ys = wrap_array(np.atleast_2d(np.asarray(ys, dtype=float)))
    nu, nv = len(sc.grid_u), len(sc.grid_v)
    q, d = xs.shape
    xq = np.broadcast_to(xs[None], (nu * nv, q, d))
    u = np.broadcast_to(np.repeat(sc.grid_u.atoms, nv, axis=0)[:, None, :], (nu * nv, q, sc.grid_u.dim))
    v = np.broadcast_to(np.tile(sc.grid_v.atoms, (nu, 1))[:, None, :], (nu * nv, q, sc.grid_v.dim))
    ens = np.broadcast_to(m.points[None], (nu * nv,) + m.points.shape)
    w = np.broadcast_to(m.weights[None], (nu * nv, m.n))
    vel = sc.velocity(s, xq, ens, w, u, v).reshape(nu, nv, q, d)
    return np.einsum("abqd,qd->abq", vel, _lift_direction(xs, ys))


def _first_min(vals, axis=0):
    best = vals.min(axis=axis, keepdims=True)
    return np.argmax(vals <= best + TIE_TOL, axis=axis)


def _first_max(vals, axis=0):
    best = vals.max(axis=axis, keepdims=True)
    return np.argmax(vals >= best - TIE_TOL, axis=axis)


def u_hat_batch(sc, s, xs, ys, m) -> np.ndarray:
    return _first_min(direction_values(sc, s, xs, ys, m).max(axis=1), axis=0)


def v_hat_batch(sc, s, xs, ys, m) -> np.ndarray:
    return _first_max(direction_values(sc, s, xs, ys, m).min(axis=0), axis=0)


def v_pull_batch(sc, s, xs, ys, m) -> np.ndarray:
    """Second player's own pull toward ``ys``: ``argmin_v max_u <x'-y', f(s,x,m,u,v)>``."""
    return _first_min(direction_values(sc, s, xs, ys, m).max(axis=0), axis=0)


def u_hat(s, x, y, m, sc) -> int:
    """Index of the first-player atom minimizing the worst-case approach rate."""
    return int(u_hat_batch(sc, s, np.asarray(x, float).reshape(1, -1), np.asarray(y, float).reshape(1, -1), m)[0])


def v_hat(s, x, y, m, sc) -> int:
    """Index of the second-player atom maximizing the worst-case separation rate."""
    return int(v_hat_batch(sc, s, np.asarray(x, float).reshape(1, -1), np.asarray(y, float).reshape(1, -1), m)[0])


# ---------------------------------------------------------------------------
# targets


def _perm_table(n: int) -> np.ndarray:
    return np.asarray(list(itertools.permutations(range(n))), dtype=int)


def w2_sq_uniform_batch(x: np.ndarray, ys: np.ndarray):
    """Squared W2 from one uniform cloud ``x`` (N, d) to many ``ys`` (C, N, d).

    Returns ``(values, perms)`` where ``perms[c]`` sends particle ``i`` of
    ``x`` to particle ``perms[c, i]`` of ``ys[c]``; ties go to the first
    permutation in lexicographic order.
    """
    n = x.shape[0]
    cost = sq_dist(x[None, :, None, :], ys[:, None, :, :])  # (C, N, N)
    if n <= 6:
        perms = _perm_table(n)
        tot = cost[:, np.arange(n)[None, :], perms].sum(axis=-1)  # (C, n!)
        k = np.argmin(tot, axis=1)
        return tot[np.arange(len(ys)), k] / n, perms[k]
    vals = np.empty(len(ys))
    out = np.empty((len(ys), n), dtype=int)
    for c in range(len(ys)):
        r, col = linear_sum_assignment(cost[c])
        vals[c] = cost[c, r, col].sum() / n
        out[c, r] = col
    return vals, out


def select_target(value_fn, s, m: EmpiricalMeasure, k: ShiftConstants, candidates: Sequence,
                  maximize: bool = False):
    """Best-valued candidate inside the ball ``W2^2(m, .) <= rho(eps, s)``.

    ``m`` itself is appended last as the always-feasible fallback.  Ties go
    to the earliest candidate.  Returns ``(nu, plan, value)``.
    """
    radius = k.rho(s)
    pool = list(candidates) + [m]
    best, best_val, best_plan = None, None, None
    for cand in pool:
        dist, plan = w2_exact(m, cand)
        if dist * dist > radius + 1e-12:
            continue
        val = float(value_fn(s, cand))
        better = best is None or (val > best_val + TIE_TOL if maximize else val < best_val - TIE_TOL)
        if better:
            best, best_val, best_plan = cand, val, plan
    return best, best_plan, best_val


def _check_plan(m, nu, plan):
    if plan.source.n != m.n or plan.target.n != nu.n or not (
        np.array_equal(plan.source.points, m.points) and np.array_equal(plan.target.points, nu.points)
    ):
        raise PlanMismatch("plan does not couple the given measures")
    if not plan.check():
        raise PlanMismatch("plan marginals do not match the measures")


def _field_from_conditionals(player, grid, cond, picks):
    """Constant field: row ``i`` mixes atom ``picks[i, j]`` with weight ``cond[i, j]``."""
    mix = np.zeros((cond.shape[0], len(grid)))
    for i in range(cond.shape[0]):
        for j in np.nonzero(cond[i] > 0)[0]:
            mix[i, picks[i, j]] += cond[i, j]
    mix /= mix.sum(axis=1, keepdims=True)
    return ControlField.from_mixtures(player, grid, mix)


def extremal_first_field(s, m: EmpiricalMeasure, nu: EmpiricalMeasure, plan: TransportPlan,
                         sc: Scenario) -> ControlField:
    """Push each particle's conditional target law through the first-player selector."""
    _check_plan(m, nu, plan)
    cond = disintegrate(plan, "source")
    i, j = np.nonzero(cond > 0)
    picks = np.zeros(cond.shape, dtype=int)
    picks[i, j] = u_hat_batch(sc, s, m.points[i], nu.points[j], m)
    return _field_from_conditionals(FIRST, sc.grid_u, cond, picks)


def extremal_second_field(s, m: EmpiricalMeasure, nu: EmpiricalMeasure, plan: TransportPlan,
                          sc: Scenario) -> ControlField:
    """Field on the target's particles: second-player selector pushed along ``plan(.|y)``."""
    _check_plan(m, nu, plan)
    cond = disintegrate(plan, "target")  # rows: target particles, cols: source
    j, i = np.nonzero(cond > 0)
    picks = np.zeros(cond.shape, dtype=int)
    picks[j, i] = v_hat_batch(sc, s, m.points[i], nu.points[j], m)
    return _field_from_conditionals(SECOND, sc.grid_v, cond, picks)


def second_pull_field(s, m, nu, plan, sc) -> ControlField:
    """Second player's mirror of the first-player rule, attached to ``m``."""
    _check_plan(m, nu, plan)
    cond = disintegrate(plan, "source")
    i, j = np.nonzero(cond > 0)
    picks = np.zeros(cond.shape, dtype=int)
    picks[i, j] = v_pull_batch(sc, s, m.points[i], nu.points[j], m)
    return _field_from_conditionals(SECOND, sc.grid_v, cond, picks)


# ---------------------------------------------------------------------------
# strategies


@dataclass
class CandidatePool:
    """Finite set of target measures with known stable-function values."""

    points: np.ndarray  # (C, N, d) uniform clouds
    values: np.ndarray  # (C,)


class ExtremalShiftStrategy:
    """Feedback strategy ``(t, m) -> constant field`` following the extremal shift rule.

    ``candidate_source(t, m)`` returns a :class:`CandidatePool` (uniform
    clouds with the same particle count as ``m``) or a list of
    ``(measure, value)`` pairs.  The first player minimizes the value, the
    second maximizes it.  The achieved target value of the last query is
    kept in ``last_target_value``.
    """

    def __init__(self, player: str, epsilon: float, sc: Scenario, candidate_source: Callable,
                 constants: Optional[ScenarioConstants] = None):
        self.player = player
        self.epsilon = epsilon
        self.sc = sc
        self.shift = ShiftConstants(epsilon, constants or sc.constants, sc.dim)
        self.candidate_source = candidate_source
        self.last_target_value = None
        self._cache: dict = {}

    def target(self, t: float, m: EmpiricalMeasure):
        pool = self.candidate_source(t, m)
        maximize = self.player == SECOND
        radius = self.shift.rho(t) + 1e-12
        if isinstance(pool, CandidatePool) and m.is_uniform() and (
            len(pool.values) == 0 or pool.points.shape[1] == m.n
        ):
            pts = np.concatenate([pool.points, m.points[None]], axis=0)
            vals = np.asarray(pool.values, dtype=float)
            d2, perms = w2_sq_uniform_batch(m.points, pts)
            feasible = np.nonzero(d2[:-1] <= radius)[0]
            if feasible.size:
                v = vals[feasible]
                best = v.max() if maximize else v.min()
                ok = np.abs(v - best) <= TIE_TOL
                c = int(feasible[np.argmax(ok)])
                nu = EmpiricalMeasure(pts[c], check=False)
                idx = np.arange(m.n)
                plan = TransportPlan(idx, perms[c], m.weights.copy(), m, nu)
                return nu, plan, float(vals[c])
            idx = np.arange(m.n)
            return m, TransportPlan(idx, idx.copy(), m.weights.copy(), m, m), None
        pairs = list(pool) if not isinstance(pool, CandidatePool) else [
            (EmpiricalMeasure(p, check=False), float(v)) for p, v in zip(pool.points, pool.values)
        ]
        lookup = {id(c): v for c, v in pairs}
        nu, plan, val = select_target(
            lambda _s, cand: lookup.get(id(cand), np.inf if not maximize else -np.inf),
            t, m, self.shift, [c for c, _ in pairs], maximize=maximize,
        )
        return nu, plan, (None if nu is m else val)

    def __call__(self, t: float, m: EmpiricalMeasure) -> ControlField:
        key = (round(t, 12), m.points.tobytes(), m.weights.tobytes())
        hit = self._cache.get(key)
        if hit is not None:
            self.last_target_value = hit[1]
            return hit[0]
        nu, plan, val = self.target(t, m)
        if self.player == FIRST:
            fld = extremal_first_field(t, m, nu, plan, self.sc)
        else:
            fld = second_pull_field(t, m, nu, plan, self.sc)
        self._cache[key] = (fld, val)
        self.last_target_value = val
        return fld


# ---------------------------------------------------------------------------
# lemma verifiers


def _report(rows):
    slack = np.array([r["slack"] for r in rows]) if rows else np.zeros(0)
    return {
        "trials": len(rows),
        "violations": int(np.sum(slack < 0)),
        "min_slack": float(slack.min()) if rows else 0.0,
        "max_slack": float(slack.max()) if rows else 0.0,
        "rows": rows,
    }


def report_table(report) -> str:
    """Verifier rows as tab-separated text."""
    lines = ["trial\ts\tr\tlhs\trhs\tslack"]
    for row in report["rows"]:
        lines.append("\t".join(
            str(row[k]) if k == "trial" else repr(float(row[k]))
            for k in ("trial", "s", "r", "lhs", "rhs", "slack")
        ))
    return "\n".join(lines) + "\n"


def _random_flow_batch(sc, rng, g, n, s, r, step):
    pts = rng.random((g, n, sc.dim))
    w = np.full((g, n), 1.0 / n)
    u = sc.grid_u.atoms[rng.integers(len(sc.grid_u), size=(g, n))]
    v = sc.grid_v.atoms[rng.integers(len(sc.grid_v), size=(g, n))]
    return pts, w, integrate_batch(sc, s, r, pts, w, u, v, step, record=True)


def verify_lemma_agent(sc: Scenario, trials: int = 1000, rng_seed: int = 0, step: float = 1e-3,
                       constants: Optional[ScenarioConstants] = None, group: int = 50,
                       n_crowd: int = 3) -> dict:
    """Randomized check of the one-agent extremal-shift estimate.

    Trials run in groups sharing ``(s, r)``; within a group every trial has
    its own crowds, agents and opponent schedules.
    """
    if trials < 0:
        raise ValueError("trials must be nonnegative")
    consts = constants or sc.constants
    sk = ShiftConstants(1.0, consts, sc.dim)
    rng = np.random.default_rng(rng_seed)
    T, d = sc.horizon, sc.dim
    nu_, nv_ = len(sc.grid_u), len(sc.grid_v)
    rows = []
    done = 0
    while done < trials:
        g = min(group, trials - done)
        s = float(rng.random() * T)
        r = float(s + rng.random() * (T - s))
        if rng.random() < 0.05:
            r = s
        _, w_m, (times, flow_m) = _random_flow_batch(sc, rng, g, n_crowd, s, r, step)
        _, w_n, (_, flow_n) = _random_flow_batch(sc, rng, g, n_crowd, s, r, step)
        x0 = rng.random((g, d))
        y0 = rng.random((g, d))
        close = rng.random(g) < 0.3  # some trials start at nearby points
        y0[close] = wrap_array(x0[close] + 0.02 * rng.normal(size=(close.sum(), d)))
        u_star = np.empty(g, dtype=int)
        v_star = np.empty(g, dtype=int)
        for b in range(g):
            ms = EmpiricalMeasure(flow_m[0, b], w_m[b], check=False)
            u_star[b] = u_hat(s, x0[b], y0[b], ms, sc)
            v_star[b] = v_hat(s, x0[b], y0[b], ms, sc)
        # opponents: two pure pieces with a random switch
        zeta = rng.integers(nv_, size=(g, 2))
        xi = rng.integers(nu_, size=(g, 2))
        n = len(times) - 1
        switch = rng.integers(0, n + 1, size=g)
        x = x0[:, None, :].copy()
        y = y0[:, None, :].copy()
        for j in range(n):
            t = times[j]
            h = times[j + 1] - times[j]
            piece = (j >= switch).astype(int)
            ux = sc.grid_u.atoms[u_star][:, None, :]
            vx = sc.grid_v.atoms[zeta[np.arange(g), piece]][:, None, :]
            uy = sc.grid_u.atoms[xi[np.arange(g), piece]][:, None, :]
            vy = sc.grid_v.atoms[v_star][:, None, :]
            x = wrap_array(x + h * sc.velocity(t, x, flow_m[j], w_m, ux, vx))
            y = wrap_array(y + h * sc.velocity(t, y, flow_n[j], w_n, uy, vy))
        tau = r - s
        d0 = sq_dist(x0, y0)
        w2s, _ = zip(*[w2_sq_uniform_batch(flow_m[0, b], flow_n[0, b][None]) for b in range(g)])
        w2s = np.concatenate(w2s)
        lhs = sq_dist(x[:, 0], y[:, 0])
        rhs = d0 * (1 + 3 * consts.L * tau) + consts.L * w2s * tau + sk.varpi2(tau) * tau
        tol = TOL_FACTOR * consts.C0 * step * tau
        for b in range(g):
            rows.append({"trial": done + b, "s": s, "r": r, "lhs": float(lhs[b]),
                         "rhs": float(rhs[b]), "slack": float(rhs[b] + tol - lhs[b])})
        done += g
    return _report(rows)


def _random_measure(rng, n, d, weighted):
    pts = rng.random((n, d))
    if not weighted:
        return EmpiricalMeasure(pts)
    w = rng.random(n) + 0.2
    return EmpiricalMeasure(pts, w / w.sum())


def _pure_response(field: ControlField, n_other: int, rng) -> list:
    resp = []
    for comps in field.entries:
        resp.append([RelaxedSchedule.pure(int(rng.integers(n_other)), n_other) for _ in comps])
    return resp


def verify_lemma_flow(sc: Scenario, trials: int = 500, rng_seed: int = 0, step: float = 1e-3,
                      constants: Optional[ScenarioConstants] = None, max_particles: int = 4,
                      weighted_share: float = 0.2) -> dict:
    """Randomized check of the flow-level extremal-shift estimate.

    Each trial couples two random clouds optimally, builds both extremal
    fields from the plan, answers each with a random pure response and
    compares the squared W2 distance of the generated flows at time ``r``.
    """
    if trials < 0:
        raise ValueError("trials must be nonnegative")
    consts = constants or sc.constants
    sk = ShiftConstants(1.0, consts, sc.dim)
    rng = np.random.default_rng(rng_seed)
    T = sc.horizon
    rows = []
    for trial in range(trials):
        n1 = int(rng.integers(1, max_particles + 1))
        weighted = rng.random() < weighted_share
        n2 = int(rng.integers(1, max_particles + 1)) if weighted else n1
        m0 = _random_measure(rng, n1, sc.dim, weighted)
        nu0 = _random_measure(rng, n2, sc.dim, weighted)
        s = float(rng.random() * T)
        r = float(s + rng.random() * (T - s))
        d0, plan = w2_exact(m0, nu0)
        alpha = extremal_first_field(s, m0, nu0, plan, sc)
        beta = extremal_second_field(s, m0, nu0, plan, sc)
        kappa = join_with_response(alpha, _pure_response(alpha, len(sc.grid_v), rng))
        theta = join_with_response(beta, _pure_response(beta, len(sc.grid_u), rng))
        fm = generate_flow(sc, s, m0, kappa, r, step)
        fn = generate_flow(sc, s, nu0, theta, r, step)
        lhs = w2_exact(fm.final(), fn.final())[0] ** 2
        tau = r - s
        rhs = d0**2 * (1 + 4 * consts.L * tau) + sk.varpi2(tau) * tau
        tol = TOL_FACTOR * consts.C0 * step * tau
        rows.append({"trial": trial, "s": s, "r": r, "lhs": lhs, "rhs": rhs, "slack": rhs + tol - lhs})
    return _report(rows)
