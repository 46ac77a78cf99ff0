"""Scenarios: velocity fields, payoffs, constants and particle integration.

Every built-in velocity is evaluated in batch form

    velocity(t, xq, ens, w, u, v) -> array (B, Q, d)

with query points ``xq`` of shape ``(B, Q, d)``, the ensemble defining the
current empirical measure ``ens`` of shape ``(B, P, d)`` with weights ``w``
``(B, P)``, and per-query controls ``u`` ``(B, Q, du)``, ``v`` ``(B, Q, dv)``.
Batching over ``B`` lets the value-iteration code push thousands of
candidate cells through one integrator call.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .control import ControlGrid, FIRST, JointControlField, RelaxedSchedule
from .errors import (
    ConfigError,
    DynamicsError,
    FlowDomainError,
    StepTooLarge,
)
from .measure import EmpiricalMeasure, MeasureFlow, ParticleTrajectory, w2
from .torus import sq_dist, wrap_array

TWO_PI = 2.0 * math.pi
SAFETY = 1.1
MAX_STEP_DRIFT = 0.5


def periodic_pull(z):
    """Smooth periodic attraction ``sin(2 pi z) / (2 pi)``; 1-Lipschitz, |.| <= 1/(2 pi)."""
    return np.sin(TWO_PI * z) / TWO_PI


def _mean_pull(xq, ens, w):
    # sum_j w_j pull(y_j - x) for every query point
    diff = ens[:, None, :, :] - xq[:, :, None, :]
    return np.einsum("bqpd,bp->bqd", periodic_pull(diff), w)


# ---------------------------------------------------------------------------
# moduli of continuity


@dataclass(frozen=True)
class Modulus:
    """Nondecreasing modulus of continuity vanishing at zero.

    Families: ``zero``; ``linear`` (``k |r|``); ``power`` (``k |r|^a``);
    ``envelope`` (``max_j c_j min(1, |r| / s_j)``, fitted from samples).
    """

    family: str = "zero"
    params: tuple = ()

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        if self.family == "zero":
            out = np.zeros_like(r)
        elif self.family == "linear":
            out = self.params[0] * r
        elif self.family == "power":
            k, a = self.params
            out = k * r**a
        elif self.family == "envelope":
            scales, incs = np.asarray(self.params[0]), np.asarray(self.params[1])
            if scales.size == 0:
                out = np.zeros_like(r)
            else:
                out = np.max(incs * np.minimum(1.0, r[..., None] / scales), axis=-1)
        else:
            raise ConfigError(f"unknown modulus family {self.family!r}")
        return float(out) if out.ndim == 0 else out

    def describe(self) -> str:
        if self.family == "envelope":
            return "envelope"
        return ":".join([self.family] + [repr(float(p)) for p in self.params])

    @classmethod
    def parse(cls, text: str) -> "Modulus":
        parts = [p.strip() for p in text.split(":")]
        fam = parts[0]
        vals = tuple(float(p) for p in parts[1:] if p)
        arity = {"zero": 0, "linear": 1, "power": 2}
        if fam not in arity or len(vals) != arity[fam]:
            raise ConfigError(f"bad modulus {text!r}; use zero, linear:k or power:k:a")
        if any(v < 0 for v in vals):
            raise ConfigError(f"modulus parameters must be nonnegative: {text!r}")
        return cls(fam, vals)


@dataclass(frozen=True)
class ScenarioConstants:
    C0: float
    L: float
    omega_f: Modulus = Modulus()
    omega_g: Modulus = Modulus()
    provenance: str = "declared"

    def __post_init__(self):
        if self.C0 < 0 or self.L < 0:
            raise ConfigError("constants must be nonnegative")


# ---------------------------------------------------------------------------
# built-in velocity fields


def _vec(value, dim: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(dim, float(arr[0]))
    if arr.shape != (dim,):
        raise ConfigError(f"parameter {name} needs 1 or {dim} values")
    return arr


def _max_pair_norm(grid_u, grid_v, offset=None) -> float:
    tot = grid_u.atoms[:, None, :] + grid_v.atoms[None, :, :]
    if offset is not None:
        tot = tot + offset
    return float(np.sqrt((tot**2).sum(axis=-1)).max())


class Dynamics:
    """Base class for registry entries."""

    name = "base"
    uses_time = False
    additive_controls = True

    def __init__(self, dim: int, **params):
        self.dim = dim
        self.params = params

    def velocity(self, t, xq, ens, w, u, v):
        raise NotImplementedError

    def constants(self, grid_u, grid_v) -> ScenarioConstants:
        raise NotImplementedError

    def check_grids(self, grid_u, grid_v):
        if self.additive_controls and (grid_u.dim != self.dim or grid_v.dim != self.dim):
            raise ConfigError(f"{self.name} needs control atoms of dimension {self.dim}")

    def param_echo(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}


class SplitLinear(Dynamics):
    """``f = u + v + drift``; no dependence on state or measure."""

    name = "split_linear"

    def __init__(self, dim, drift=0.0):
        super().__init__(dim, drift=_vec(drift, dim, "drift"))

    def velocity(self, t, xq, ens, w, u, v):
        return u + v + self.params["drift"]

    def constants(self, grid_u, grid_v):
        return ScenarioConstants(_max_pair_norm(grid_u, grid_v, self.params["drift"]), 0.0)


class BarycenterAttraction(Dynamics):
    """``f = u + v + kappa * sum_j w_j pull(y_j - x)``: periodic attraction to the crowd."""

    name = "barycenter_attraction"

    def __init__(self, dim, kappa=1.0):
        super().__init__(dim, kappa=float(kappa))

    def velocity(self, t, xq, ens, w, u, v):
        return u + v + self.params["kappa"] * _mean_pull(xq, ens, w)

    def constants(self, grid_u, grid_v):
        k = abs(self.params["kappa"])
        c0 = _max_pair_norm(grid_u, grid_v) + k * math.sqrt(self.dim) / TWO_PI
        return ScenarioConstants(c0, k)


class PursuitCircle(Dynamics):
    """Agents chase a target running around the torus at constant speed.

    ``f = u + v + target_gain * pull(z(t) - x) + mean_gain * sum_j w_j pull(y_j - x)``
    with ``z(t) = start + speed * t`` (mod 1).
    """

    name = "pursuit_circle"
    uses_time = True

    def __init__(self, dim, target_gain=1.0, mean_gain=0.5, start=0.5, speed=1.0):
        super().__init__(
            dim,
            target_gain=float(target_gain),
            mean_gain=float(mean_gain),
            start=_vec(start, dim, "start"),
            speed=_vec(speed, dim, "speed"),
        )

    def target(self, t):
        return wrap_array(self.params["start"] + self.params["speed"] * t)

    def velocity(self, t, xq, ens, w, u, v):
        p = self.params
        z = p["start"] + p["speed"] * t
        return (
            u + v
            + p["target_gain"] * periodic_pull(z - xq)
            + p["mean_gain"] * _mean_pull(xq, ens, w)
        )

    def constants(self, grid_u, grid_v):
        p = self.params
        tg, mg = abs(p["target_gain"]), abs(p["mean_gain"])
        c0 = _max_pair_norm(grid_u, grid_v) + (tg + mg) * math.sqrt(self.dim) / TWO_PI
        speed = float(np.linalg.norm(p["speed"]))
        return ScenarioConstants(c0, tg + mg, omega_f=Modulus("linear", (tg * speed,)))


class Bilinear(Dynamics):
    """``f = u * v`` componentwise; finite grids typically break the saddle condition."""

    name = "bilinear"
    additive_controls = False

    def velocity(self, t, xq, ens, w, u, v):
        return np.broadcast_to(u * v, xq.shape)

    def check_grids(self, grid_u, grid_v):
        if grid_u.dim not in (1, self.dim) or grid_v.dim not in (1, self.dim):
            raise ConfigError("bilinear needs scalar or d-dimensional atoms")

    def constants(self, grid_u, grid_v):
        prod = grid_u.atoms[:, None, :] * grid_v.atoms[None, :, :]
        prod = np.broadcast_to(prod, prod.shape[:2] + (self.dim,))
        return ScenarioConstants(float(np.sqrt((prod**2).sum(-1)).max()), 0.0)


class ZeroDynamics(Dynamics):
    """``f = 0``: nothing moves."""

    name = "zero"
    additive_controls = False

    def velocity(self, t, xq, ens, w, u, v):
        return np.zeros_like(xq)

    def check_grids(self, grid_u, grid_v):
        pass

    def constants(self, grid_u, grid_v):
        return ScenarioConstants(0.0, 0.0)


DYNAMICS_REGISTRY = {
    cls.name: cls for cls in (SplitLinear, BarycenterAttraction, PursuitCircle, Bilinear, ZeroDynamics)
}


# ---------------------------------------------------------------------------
# payoffs


class Payoff:
    name = "base"

    def __init__(self, dim, **params):
        self.dim = dim
        self.params = params

    def batch(self, points, weights) -> np.ndarray:
        """Terminal payoff for ``points`` ``(B, P, d)``, ``weights`` ``(B, P)``."""
        raise NotImplementedError

    def __call__(self, m: EmpiricalMeasure) -> float:
        return float(self.batch(m.points[None], m.weights[None])[0])

    def modulus(self) -> Modulus:
        # both built-ins integrate a sqrt(d)-Lipschitz function of position
        return Modulus("linear", (math.sqrt(self.dim),))

    def param_echo(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}


class W2ToTarget(Payoff):
    """Squared W2 distance to a point mass, ``sum_i w_i |x_i - z|^2``."""

    name = "w2_to_target"

    def __init__(self, dim, target=0.0):
        super().__init__(dim, target=wrap_array(_vec(target, dim, "target")))

    def batch(self, points, weights):
        return np.einsum("bp,bp->b", sq_dist(points, self.params["target"]), weights)


def frechet_variance_1d(x, w):
    """``min_c sum_i w_i gap(x_i, c)^2`` on the circle, batched over leading axes.

    The minimizer is the weighted mean of some contiguous unwrapping of the
    sorted points, so scanning the P cut positions is exact.
    """
    order = np.argsort(x, axis=-1, kind="stable")
    xs = np.take_along_axis(x, order, axis=-1)
    ws = np.take_along_axis(w, order, axis=-1)
    p = x.shape[-1]
    best = np.full(x.shape[:-1], np.inf)
    total = ws.sum(axis=-1)
    for cut in range(p):
        lifted = xs + (np.arange(p) < cut)  # first `cut` points moved up by one
        c = np.einsum("...p,...p->...", lifted, ws) / total
        gaps = np.abs(xs - (c[..., None] % 1.0))
        gaps = np.minimum(gaps, 1.0 - gaps)
        best = np.minimum(best, np.einsum("...p,...p->...", gaps**2, ws))
    return best


class Spread(Payoff):
    """Torus Frechet variance: ``min_c W2^2(m, delta_c)``."""

    name = "spread"

    def batch(self, points, weights):
        out = np.zeros(points.shape[0])
        for k in range(points.shape[-1]):
            out += frechet_variance_1d(points[..., k], weights)
        return out


PAYOFF_REGISTRY = {cls.name: cls for cls in (W2ToTarget, Spread)}


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    dim: int
    horizon: float
    grid_u: ControlGrid
    grid_v: ControlGrid
    dynamics: Dynamics
    payoff: Payoff
    declared_constants: Optional[ScenarioConstants] = None
    initial: Optional[EmpiricalMeasure] = None
    name: str = "scenario"
    source_text: str = ""

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        self.dynamics.check_grids(self.grid_u, self.grid_v)

    @property
    def constants(self) -> ScenarioConstants:
        """Declared constants, else the analytic bounds of the built-in."""
        if self.declared_constants is not None:
            return self.declared_constants
        c = self.dynamics.constants(self.grid_u, self.grid_v)
        return replace(c, omega_g=self.payoff.modulus(), provenance="analytic")

    def f(self, t, x, m: EmpiricalMeasure, u, v) -> np.ndarray:
        """Velocity of a single agent at ``x`` in the crowd ``m``."""
        xq = np.asarray(x, dtype=float).reshape(1, 1, self.dim)
        u = np.asarray(u, dtype=float).reshape(1, 1, -1)
        v = np.asarray(v, dtype=float).reshape(1, 1, -1)
        return self.velocity(t, xq, m.points[None], m.weights[None], u, v)[0, 0]

    def velocity(self, t, xq, ens, w, u, v):
        out = self.dynamics.velocity(t, xq, ens, w, u, v)
        return np.asarray(out, dtype=float)

    def g(self, m: EmpiricalMeasure) -> float:
        return self.payoff(m)

    def hash(self) -> str:
        text = self.source_text or self.describe()
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def describe(self) -> str:
        return (
            f"dim={self.dim};horizon={self.horizon!r};"
            f"U={self.grid_u.atoms.tolist()};V={self.grid_v.atoms.tolist()};"
            f"f={self.dynamics.name}{self.dynamics.param_echo()};"
            f"g={self.payoff.name}{self.payoff.param_echo()}"
        )

    def with_constants(self, constants: ScenarioConstants) -> "Scenario":
        return replace(self, declared_constants=constants)


def payoff(sc: Scenario, m: EmpiricalMeasure) -> float:
    return sc.g(m)


# ---------------------------------------------------------------------------
# constants and the saddle condition


def _random_cloud(rng, n, dim):
    pts = rng.random((n, dim))
    w = rng.random(n) + 0.2
    return pts, w / w.sum()


def estimate_constants(sc: Scenario, sample_budget: int = 1000, seed: int = 0) -> ScenarioConstants:
    """Sampled constants with a 1.1 safety factor."""
    if sample_budget < 1000:
        raise ValueError("sample_budget must be at least 1000")
    rng = np.random.default_rng(seed)
    d, T = sc.dim, sc.horizon
    nu, nv = len(sc.grid_u), len(sc.grid_v)
    B, P = sample_budget, 4
    t = rng.random(B) * T
    ens = rng.random((B, P, d))
    w = rng.random((B, P)) + 0.2
    w /= w.sum(axis=1, keepdims=True)
    x = rng.random((B, 1, d))
    u = sc.grid_u.atoms[rng.integers(nu, size=B)][:, None, :]
    v = sc.grid_v.atoms[rng.integers(nv, size=B)][:, None, :]

    def vel(tt, xx, ee):
        out = np.stack([sc.velocity(tt[b], xx[b:b + 1], ee[b:b + 1], w[b:b + 1], u[b:b + 1], v[b:b + 1])[0, 0]
                        for b in range(B)])
        if not np.all(np.isfinite(out)):
            raise DynamicsError("velocity returned non-finite values")
        return out

    f0 = vel(t, x, ens)
    c0 = SAFETY * float(np.linalg.norm(f0, axis=1).max())

    # Lipschitz in (x, m): move x and every particle by small random offsets
    scale = 10.0 ** rng.uniform(-4, -1, size=B)
    dx = rng.normal(size=(B, 1, d)) * scale[:, None, None]
    de = rng.normal(size=(B, P, d)) * scale[:, None, None]
    f1 = vel(t, x + dx, ens + de)
    dist_x = np.sqrt(sq_dist(x[:, 0], wrap_array(x[:, 0] + dx[:, 0])))
    # identity coupling bounds W2 from above, so the quotient is conservative-low;
    # the 1.1 factor covers the difference at these scales
    dist_m = np.sqrt(np.einsum("bp,bp->b", sq_dist(ens, wrap_array(ens + de)), w))
    quot = np.linalg.norm(f1 - f0, axis=1) / np.maximum(dist_x + dist_m, 1e-300)
    lip = SAFETY * float(quot.max())
    if lip < 1e-9:
        lip = 0.0

    def envelope(increments, taus, scales):
        incs = np.array([increments[taus <= sc_].max(initial=0.0) for sc_ in scales])
        if np.all(incs <= 1e-12):
            return Modulus()
        return Modulus("envelope", (tuple(float(c) for c in scales), tuple(SAFETY * incs)))

    tau_scales = T * 2.0 ** -np.arange(7, -1, -1)
    tau = tau_scales[rng.integers(len(tau_scales), size=B)] * rng.random(B)
    f2 = vel(t + tau, x, ens)
    omega_f = envelope(np.linalg.norm(f2 - f0, axis=1), tau, tau_scales)

    # payoff modulus from pairs of random clouds at random distances
    nb = max(200, B // 5)
    g_pts = rng.random((nb, P, d))
    g_w = np.full((nb, P), 1.0 / P)
    g_shift = rng.normal(size=(nb, P, d)) * 10.0 ** rng.uniform(-3, -0.5, size=(nb, 1, 1))
    g_pts2 = wrap_array(g_pts + g_shift)
    g0 = sc.payoff.batch(g_pts, g_w)
    g1 = sc.payoff.batch(g_pts2, g_w)
    dists = np.array([
        w2(EmpiricalMeasure(g_pts[b]), EmpiricalMeasure(g_pts2[b])) for b in range(nb)
    ])
    ratio = np.abs(g1 - g0) / np.maximum(dists, 1e-300)
    omega_g = Modulus("linear", (SAFETY * float(ratio.max()),))
    return ScenarioConstants(c0, lip, omega_f, omega_g, provenance="estimated")


def saddle_matrix(sc: Scenario, t, x, m: EmpiricalMeasure, direction) -> np.ndarray:
    """``M[a, b] = <direction, f(t, x, m, u_a, v_b)>`` over the two grids."""
    nu, nv = len(sc.grid_u), len(sc.grid_v)
    xq = np.broadcast_to(np.asarray(x, dtype=float).reshape(1, 1, -1), (nu * nv, 1, sc.dim))
    u = np.repeat(sc.grid_u.atoms, nv, axis=0)[:, None, :]
    v = np.tile(sc.grid_v.atoms, (nu, 1))[:, None, :]
    ens = np.broadcast_to(m.points[None], (nu * nv,) + m.points.shape)
    ww = np.broadcast_to(m.weights[None], (nu * nv, m.n))
    vel = sc.velocity(t, np.ascontiguousarray(xq), ens, ww, u, v)[:, 0, :]
    return (vel @ np.asarray(direction, dtype=float).reshape(-1)).reshape(nu, nv)


def isaacs_check(sc: Scenario, samples) -> dict:
    """Largest ``min_u max_v - max_v min_u`` of ``<w, f>`` over the samples."""
    if not samples:
        raise ValueError("isaacs_check needs at least one sample")
    worst, worst_case = -np.inf, None
    for sample in samples:
        t, x, m, direction = sample
        mat = saddle_matrix(sc, t, x, m, direction)
        gap = float(mat.max(axis=1).min() - mat.min(axis=0).max())
        if gap > worst:
            worst, worst_case = gap, sample
    return {"max_gap": worst, "worst_case": worst_case}


def sample_isaacs(sc: Scenario, n: int = 200, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        pts, wts = _random_cloud(rng, 3, sc.dim)
        samples.append((rng.random() * sc.horizon, rng.random(sc.dim), EmpiricalMeasure(pts, wts),
                        rng.normal(size=sc.dim)))
    return isaacs_check(sc, samples)


# ---------------------------------------------------------------------------
# integration


def substeps(t0: float, t1: float, step: float) -> int:
    if step <= 0:
        raise ValueError("step must be positive")
    return max(1, int(math.ceil((t1 - t0) / step - 1e-9)))


def check_step(sc: Scenario, step: float):
    c0 = sc.constants.C0
    if c0 * step > MAX_STEP_DRIFT:
        raise StepTooLarge(f"C0*h = {c0 * step:.3g} exceeds {MAX_STEP_DRIFT}")


def _advance(sc, t, x, w, u, v, h, method):
    if method == "euler":
        return wrap_array(x + h * sc.velocity(t, x, x, w, u, v))
    if method == "rk4":
        k1 = sc.velocity(t, x, x, w, u, v)
        y = x + 0.5 * h * k1
        k2 = sc.velocity(t + 0.5 * h, y, y, w, u, v)
        y = x + 0.5 * h * k2
        k3 = sc.velocity(t + 0.5 * h, y, y, w, u, v)
        y = x + h * k3
        k4 = sc.velocity(t + h, y, y, w, u, v)
        return wrap_array(x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
    raise ValueError(f"unknown integrator {method!r}")


def integrate_batch(sc: Scenario, t0: float, t1: float, x, w, u, v, step: float,
                    method: str = "euler", record: bool = False):
    """Self-consistent ensemble stepping with controls fixed on ``[t0, t1]``.

    ``x`` ``(B, P, d)``, ``w`` ``(B, P)``, ``u`` ``(B, P, du)``, ``v``
    ``(B, P, dv)``.  Each step's velocity sees the current ensemble.  Returns
    the end state, or ``(times, states)`` with ``record=True``.
    """
    n = substeps(t0, t1, step)
    h = (t1 - t0) / n
    x = np.asarray(x, dtype=float)
    states = [x] if record else None
    for j in range(n):
        x = _advance(sc, t0 + j * h, x, w, u, v, h, method)
        if record:
            states.append(x)
    if record:
        times = t0 + h * np.arange(n + 1)
        times[-1] = t1
        return times, np.stack(states, axis=0)
    return x


def _expand_joint(k: JointControlField, m_star: EmpiricalMeasure):
    pts, wts, us, vs, parent = [], [], [], [], []
    for i, comps in enumerate(k.entries):
        for wc, su, sv in comps:
            pts.append(m_star.points[i])
            wts.append(m_star.weights[i] * wc)
            us.append(su)
            vs.append(sv)
            parent.append(i)
    return np.asarray(pts), np.asarray(wts), us, vs, np.asarray(parent)


def _mixture_rows(scheds, t):
    return np.stack([s.mixture_at(t) for s in scheds])


def generate_flow(sc: Scenario, s: float, m_star: EmpiricalMeasure, k: JointControlField,
                  t_end: Optional[float] = None, step: float = 1e-3, method: str = "euler",
                  breaks=()) -> MeasureFlow:
    """Flow generated from ``(s, m_star)`` by a joint field, via particle splitting.

    Each joint component becomes a sub-particle.  On every step the drift of
    a sub-particle is the product-mixture average of the velocity over its
    first- and second-player schedules at that time.  Switching times of the
    schedules (and ``breaks``) are honored as substep boundaries.
    """
    if k.n_particles != m_star.n:
        raise ValueError(f"joint field has {k.n_particles} entries for {m_star.n} particles")
    check_step(sc, step)
    t_end = sc.horizon if t_end is None else t_end
    if t_end < s:
        raise FlowDomainError("t_end precedes the start time")
    x0, w, us, vs, parent = _expand_joint(k, m_star)
    cuts = sorted({float(b) for sch in us + vs for b in sch.breaks} | {float(b) for b in breaks})
    nodes = [s] + [b for b in cuts if s < b < t_end] + [t_end]
    gu, gv = sc.grid_u.atoms, sc.grid_v.atoms
    x = x0[None]
    wb = w[None]
    times, states = [np.array([s])], [x[None]]
    for a, b in zip(nodes[:-1], nodes[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        pu, pv = _mixture_rows(us, mid), _mixture_rows(vs, mid)
        if np.all(pu.max(axis=1) == 1.0) and np.all(pv.max(axis=1) == 1.0):
            u = gu[pu.argmax(axis=1)][None]
            v = gv[pv.argmax(axis=1)][None]
            tt, xs = integrate_batch(sc, a, b, x, wb, u, v, step, method, record=True)
        else:
            tt, xs = _integrate_mixed(sc, a, b, x, wb, pu, pv, step, method)
        times.append(tt[1:])
        states.append(xs[1:])
        x = xs[-1]
    tg = np.concatenate(times)
    pos = np.concatenate(states, axis=0)[:, 0]
    return MeasureFlow(tg, pos, w, sc.constants.C0, parent)


def _mixed_velocity(sc, t, x, w, pu, pv):
    gu, gv = sc.grid_u.atoms, sc.grid_v.atoms
    out = np.zeros_like(x)
    Q = x.shape[1]
    for a in np.nonzero(pu.any(axis=0))[0]:
        for b in np.nonzero(pv.any(axis=0))[0]:
            weight = pu[:, a] * pv[:, b]
            if not np.any(weight):
                continue
            u = np.broadcast_to(gu[a], (1, Q, gu.shape[1]))
            v = np.broadcast_to(gv[b], (1, Q, gv.shape[1]))
            out = out + weight[None, :, None] * sc.velocity(t, x, x, w, u, v)
    return out


def _integrate_mixed(sc, t0, t1, x, w, pu, pv, step, method):
    if method != "euler":
        raise ValueError("relaxed mixtures are integrated with Euler only")
    n = substeps(t0, t1, step)
    h = (t1 - t0) / n
    states = [x]
    for j in range(n):
        x = wrap_array(x + h * _mixed_velocity(sc, t0 + j * h, x, w, pu, pv))
        states.append(x)
    times = t0 + h * np.arange(n + 1)
    times[-1] = t1
    return times, np.stack(states, axis=0)


def integrate_agent(sc: Scenario, s: float, y, flow: MeasureFlow, u_sched: RelaxedSchedule,
                    v_sched: RelaxedSchedule, t_end: Optional[float] = None,
                    step: float = 1e-3) -> ParticleTrajectory:
    """Single agent moving in a prescribed crowd flow under relaxed controls.

    The crowd is frozen at the latest flow node not after the current time.
    """
    t_end = flow.end if t_end is None else t_end
    if s < flow.start - 1e-12 or t_end > flow.end + 1e-12:
        raise FlowDomainError(f"flow covers [{flow.start}, {flow.end}], need [{s}, {t_end}]")
    n = substeps(s, t_end, step) if t_end > s else 0
    h = (t_end - s) / n if n else 0.0
    x = wrap_array(np.asarray(y, dtype=float).reshape(1, 1, -1))
    gu, gv = sc.grid_u.atoms, sc.grid_v.atoms
    states = [x[0, 0]]
    for j in range(n):
        t = s + j * h
        k = flow.index_at(t)
        ens, w = flow.positions[k][None], flow.weights[None]
        pu, pv = u_sched.mixture_at(t), v_sched.mixture_at(t)
        vel = np.zeros(sc.dim)
        for a in np.nonzero(pu)[0]:
            for b in np.nonzero(pv)[0]:
                vel += pu[a] * pv[b] * sc.velocity(t, x, ens, w, gu[a][None, None], gv[b][None, None])[0, 0]
        x = wrap_array(x + h * vel)
        states.append(x[0, 0])
    times = s + h * np.arange(n + 1)
    if n:
        times[-1] = t_end
    return ParticleTrajectory(times, np.asarray(states))


# ---------------------------------------------------------------------------
# configuration files


def parse_atoms(text: str) -> np.ndarray:
    rows = [r.strip() for r in text.replace("\n", ";").split(";") if r.strip()]
    if not rows:
        raise ConfigError("empty atom list")
    try:
        return np.asarray([[float(c) for c in r.strip("()").split(",")] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"bad atom list {text!r}") from exc


def _parse_value(text: str):
    parts = [p for p in text.replace(",", " ").split()]
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad numeric parameter {text!r}") from exc
    return vals[0] if len(vals) == 1 else vals


def parse_measure_spec(text: str, dim: int) -> EmpiricalMeasure:
    """Initial measure from ``x1; x2; ...`` (uniform) or ``x:w; ...`` rows."""
    rows = [r.strip() for r in text.split(";") if r.strip()]
    pts, wts = [], []
    for r in rows:
        if ":" in r:
            coords, wt = r.split(":", 1)
            wts.append(float(wt))
        else:
            coords = r
        pts.append([float(c) for c in coords.strip("()").split(",")])
    arr = np.asarray(pts, dtype=float)
    if arr.shape[1] != dim:
        raise ConfigError(f"initial points must have {dim} coordinates")
    if wts and len(wts) != len(pts):
        raise ConfigError("either all or no initial points carry weights")
    return EmpiricalMeasure(arr, np.asarray(wts) / sum(wts) if wts else None)


def scenario_from_text(text: str, name: str = "scenario") -> Scenario:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    try:
        sec = cp["scenario"]
        dim = int(sec["dim"])
        horizon = float(sec["horizon"])
        gu = ControlGrid(parse_atoms(sec["grid_u"]), "U")
        gv = ControlGrid(parse_atoms(sec["grid_v"]), "V")
        dyn_sec = dict(cp["dynamics"])
        pay_sec = dict(cp["payoff"])
    except KeyError as exc:
        raise ConfigError(f"missing config entry {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if dim < 1:
        raise ConfigError("dim must be positive")
    dname = dyn_sec.pop("name", None)
    pname = pay_sec.pop("name", None)
    if dname not in DYNAMICS_REGISTRY:
        raise ConfigError(f"unknown dynamics {dname!r}; choose from {sorted(DYNAMICS_REGISTRY)}")
    if pname not in PAYOFF_REGISTRY:
        raise ConfigError(f"unknown payoff {pname!r}; choose from {sorted(PAYOFF_REGISTRY)}")
    try:
        dyn = DYNAMICS_REGISTRY[dname](dim, **{k: _parse_value(v) for k, v in dyn_sec.items()})
        pay = PAYOFF_REGISTRY[pname](dim, **{k: _parse_value(v) for k, v in pay_sec.items()})
    except TypeError as exc:
        raise ConfigError(f"bad parameters: {exc}") from exc
    declared = None
    if cp.has_section("constants"):
        c = cp["constants"]
        try:
            declared = ScenarioConstants(
                float(c["C0"]), float(c["L"]),
                Modulus.parse(c.get("omega_f", "zero")),
                Modulus.parse(c.get("omega_g", f"linear:{math.sqrt(dim)!r}")),
                "declared",
            )
        except KeyError as exc:
            raise ConfigError(f"constants block needs {exc}") from exc
    initial = parse_measure_spec(sec["initial"], dim) if "initial" in sec else None
    return Scenario(dim, horizon, gu, gv, dyn, pay, declared, initial,
                    cp.get("scenario", "name", fallback=name), text)


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_text(text, p.stem)
