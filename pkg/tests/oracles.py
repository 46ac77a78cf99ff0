"""Independent reference computations used as test oracles."""
import itertools
import math

import numpy as np


def shift_enum_distance(x, y):
    """Torus distance by enumerating integer shifts in {-1, 0, 1} per axis."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    best = math.inf
    for shift in itertools.product((-1, 0, 1), repeat=x.size):
        best = min(best, float(np.linalg.norm(x - (y + np.asarray(shift)))))
    return best


def perm_w2(xs, ys):
    """W2 between equal-size uniform clouds by enumerating all pairings."""
    n = len(xs)
    best = math.inf
    for p in itertools.permutations(range(n)):
        best = min(best, sum(shift_enum_distance(xs[i], ys[p[i]]) ** 2 for i in range(n)))
    return math.sqrt(best / n)




def expand_rational(points, units):
    """Uniform cloud with ``units[i]`` copies of point ``i``."""
    return [p for p, k in zip(points, units) for _ in range(int(k))]


def frechet_variance_grid(xs, ws, size=2000):
    """Torus Frechet variance on the circle by scanning candidate centers."""
    best = math.inf
    for c in np.arange(size) / size:
        d = np.abs(np.asarray(xs) - c)
        d = np.minimum(d, 1 - d)
        best = min(best, float(np.dot(ws, d * d)))
    return best


def scenario_text(dynamics="name = split_linear", payoff="name = w2_to_target\ntarget = 0.0",
                  grid_u="-1; 0; 1", grid_v="-0.5; 0; 0.5", horizon=0.4, dim=1, initial="0.0",
                  constants=None):
    text = (f"[scenario]\ndim = {dim}\nhorizon = {horizon}\ngrid_u = {grid_u}\ngrid_v = {grid_v}\n"
            f"initial = {initial}\n\n[dynamics]\n{dynamics}\n\n[payoff]\n{payoff}\n")
    if constants:
        text += f"\n[constants]\n{constants}\n"
    return text
