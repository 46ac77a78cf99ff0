import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgame.errors import DimError, InvalidPoint
from mfgame.torus import TorusPoint, coordinate_gaps, lift_offsets, lift_pair, torus_distance, wrap, wrap_array

from oracles import shift_enum_distance

coord = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)
unit = st.floats(min_value=0.0, max_value=1.0, exclude_max=True)


def points(dim):
    return st.lists(unit, min_size=dim, max_size=dim)


def test_wrap_examples():
    assert wrap([1.25]).coords == (0.25,)
    assert wrap([-0.1, 2.0]).coords == pytest.approx((0.9, 0.0), abs=1e-15)
    assert wrap([0.5]).coords == (0.5,)


def test_wrap_rejects_non_finite():
    with pytest.raises(InvalidPoint):
        wrap([float("nan")])
    with pytest.raises(InvalidPoint):
        wrap([0.1, float("inf")])


def test_tiny_negative_wraps_into_unit_interval():
    out = wrap_array([-1e-18])
    assert 0.0 <= out[0] < 1.0


def test_torus_point_rejects_noncanonical():
    with pytest.raises(InvalidPoint):
        TorusPoint((1.0,), 1)
    with pytest.raises(DimError):
        TorusPoint((0.1,), 2)


def test_distance_examples():
    assert torus_distance([0.1], [0.9]) == pytest.approx(0.2, abs=1e-15)
    assert torus_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
    got = torus_distance([0.1, 0.2], [0.8, 0.9])
    assert got == pytest.approx(shift_enum_distance([0.1, 0.2], [0.8, 0.9]), abs=1e-12)
    assert got == pytest.approx(0.3 * math.sqrt(2), abs=1e-10)


def test_distance_dim_mismatch():
    with pytest.raises(DimError):
        torus_distance([0.1], [0.1, 0.2])
    with pytest.raises(DimError):
        lift_pair([0.1], [0.1, 0.2])


def test_lift_examples():
    lp = lift_pair([0.1], [0.9])
    assert lp.x_rep[0] == 0.1 and lp.y_rep[0] == pytest.approx(-0.1) and lp.distance == pytest.approx(0.2)
    lp = lift_pair([0.4], [0.4])
    assert lp.x_rep[0] == lp.y_rep[0] and lp.distance == 0.0


def test_lift_tie_goes_to_smaller_representative():
    lp = lift_pair([0.25], [0.75])
    # both representatives are at distance 0.5
    assert abs(0.25 - (-0.25)) == abs(0.25 - 0.75)
    assert lp.y_rep[0] == -0.25
    assert lp.distance == 0.5


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(points(d), points(d), points(d))))
def test_metric_axioms(triple):
    x, y, z = triple
    dxy, dyz, dxz = torus_distance(x, y), torus_distance(y, z), torus_distance(x, z)
    assert dxy >= 0
    assert abs(dxy - torus_distance(y, x)) <= 1e-12
    assert dxz <= dxy + dyz + 1e-12
    assert dxy <= math.sqrt(len(x)) / 2 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(points(d), points(d))))
def test_distance_matches_shift_enumeration(pair):
    x, y = pair
    assert abs(torus_distance(x, y) - shift_enum_distance(x, y)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(points(d), points(d), st.lists(coord, min_size=d, max_size=d))))
def test_shift_invariance(args):
    x, y, c = args
    xs = wrap(np.add(x, c)).coords
    ys = wrap(np.add(y, c)).coords
    assert abs(torus_distance(xs, ys) - torus_distance(x, y)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(points(d), points(d))))
def test_lift_pair_realizes_distance(pair):
    x, y = pair
    lp = lift_pair(x, y)
    diff = lp.y_rep - lp.x_rep
    assert np.all(diff >= -0.5) and np.all(diff <= 0.5)
    np.testing.assert_allclose(wrap_array(lp.y_rep), wrap_array(np.asarray(y)), atol=1e-12)
    assert abs(lp.distance - torus_distance(x, y)) <= 1e-12
    np.testing.assert_allclose(lift_offsets(np.asarray(x), np.asarray(y)), diff, atol=1e-15)


def test_coordinate_gaps_bounded(rng):
    x, y = rng.random((100, 3)), rng.random((100, 3))
    g = coordinate_gaps(x, y)
    assert np.all(g >= 0) and np.all(g <= 0.5)
