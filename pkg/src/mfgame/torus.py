"""Flat torus geometry: canonical representatives, distance and lifting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimError, InvalidPoint


@dataclass(frozen=True)
class TorusPoint:
    coords: tuple
    dim: int

    def __post_init__(self):
        if self.dim < 1 or len(self.coords) != self.dim:
            raise DimError(f"point has {len(self.coords)} coords, dim={self.dim}")
        if any(not (0.0 <= c < 1.0) for c in self.coords):
            raise InvalidPoint(f"coords {self.coords} not canonical")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype or float)


@dataclass(frozen=True)
class LiftedPair:
    x_rep: np.ndarray
    y_rep: np.ndarray
    distance: float


PointLike = Union[TorusPoint, Sequence[float], np.ndarray, float]


def wrap_array(raw) -> np.ndarray:
    """Reduce an array of reals to [0, 1) elementwise."""
    a = np.asarray(raw, dtype=float)
    out = a - np.floor(a)
    # tiny negatives round to exactly 1.0 after the subtraction
    out[out >= 1.0] = 0.0
    return out


def wrap(raw) -> TorusPoint:
    arr = np.atleast_1d(np.asarray(raw, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidPoint(f"expected a flat coordinate vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidPoint(f"non-finite coordinates: {arr}")
    return TorusPoint(tuple(float(c) for c in wrap_array(arr)), arr.size)


def _coords(p: PointLike) -> np.ndarray:
    if isinstance(p, TorusPoint):
        return np.asarray(p.coords, dtype=float)
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise InvalidPoint(f"non-finite coordinates: {arr}")
    return wrap_array(arr)


def coordinate_gaps(x, y) -> np.ndarray:
    """Per-coordinate circular distance for broadcastable arrays in [0,1)."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return np.minimum(d, 1.0 - d)


def sq_dist(x, y) -> np.ndarray:
    """Squared torus distance, reducing over the last axis."""
    g = coordinate_gaps(x, y)
    return np.sum(g * g, axis=-1)


def torus_distance(x: PointLike, y: PointLike) -> float:
    a, b = _coords(x), _coords(y)
    if a.shape != b.shape:
        raise DimError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(np.sqrt(sq_dist(a, b)))


def lift_offsets(x, y) -> np.ndarray:
    """Representative of ``y - x`` realizing the torus distance.

    Works on broadcastable canonical arrays.  Each coordinate lands in
    [-1/2, 1/2); an exact half is sent to -1/2 (the smaller representative
    of ``y``).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shift = np.floor(y - x + 0.5)
    return (y - shift) - x


def lift_pair(x: PointLike, y: PointLike) -> LiftedPair:
    a, b = _coords(x), _coords(y)
    if a.shape != b.shape:
        raise DimError(f"dimension mismatch: {a.size} vs {b.size}")
    y_rep = b - np.floor(b - a + 0.5)
    return LiftedPair(a, y_rep, float(np.linalg.norm(a - y_rep)))
