import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endolab.maps import LinearMap
from endolab.torus import (
    IntMatrix2,
    InvalidArgument,
    Torus,
    TorusPoint,
    homology_action,
    shortest_displacement,
    torus_distance,
    torus_distance_xy,
    wrap,
)

coord = st.floats(-50, 50, allow_nan=False)


def test_wrap_examples():
    assert wrap((1.25, -0.25)).xy.tolist() == [0.25, 0.75]
    assert wrap((0.0, 0.0)).xy.tolist() == [0.0, 0.0]
    p = wrap((2.4, 3.0), Torus(2.0))
    assert p.x == pytest.approx(0.4) and p.y == pytest.approx(1.0)


def test_torus_rejects_bad_side():
    with pytest.raises(InvalidArgument):
        Torus(0.0)


def test_distance_examples():
    o = TorusPoint(0.0, 0.0)
    assert torus_distance(o, TorusPoint(0.9, 0.0)) == pytest.approx(0.1)
    assert torus_distance(o, o) == 0.0
    assert torus_distance(o, TorusPoint(0.5, 0.5)) == pytest.approx(math.sqrt(0.5))


def test_displacement_examples():
    d = shortest_displacement(TorusPoint(0.0, 0.0), TorusPoint(0.9, 0.0))
    assert d.vector.v1 == pytest.approx(-0.1) and d.vector.v2 == 0 and not d.ambiguous
    d = shortest_displacement(TorusPoint(0.2, 0.2), TorusPoint(0.3, 0.2))
    assert d.vector.v1 == pytest.approx(0.1)
    d = shortest_displacement(TorusPoint(0.0, 0.0), TorusPoint(0.5, 0.0))
    assert d.vector.v1 == pytest.approx(0.5) and d.ambiguous


def test_mixed_tori_rejected():
    with pytest.raises(InvalidArgument):
        torus_distance(TorusPoint(0.1, 0.1), TorusPoint(0.1, 0.1, Torus(2.0)))


def test_matrix_properties():
    A = IntMatrix2(3, 1, 1, 1)
    assert A.det == 2
    lam, mu = A.eigenvalues()
    assert lam == pytest.approx(2 + math.sqrt(2)) and mu == pytest.approx(2 - math.sqrt(2))
    A.check_family_base()
    with pytest.raises(InvalidArgument):
        IntMatrix2(1, 0, 0, 1).check_family_base()


def test_homology_action_linear():
    assert homology_action(LinearMap(IntMatrix2(3, 0, 0, 2))) == IntMatrix2(3, 0, 0, 2)


@pytest.mark.parametrize("fixture", ["expanding", "saddle", "nonhyp"])
def test_homology_action_families(fixture, request):
    m = request.getfixturevalue(fixture)
    assert homology_action(m) == m.base


@settings(max_examples=300, deadline=None)
@given(coord, coord, coord, coord, coord, coord)
def test_distance_is_metric(a, b, c, d, e, f):
    p, q, r = wrap((a, b)), wrap((c, d)), wrap((e, f))
    dpq, dqp = torus_distance(p, q), torus_distance(q, p)
    assert dpq >= 0 and abs(dpq - dqp) < 1e-12
    assert torus_distance(p, p) == 0
    assert dpq <= torus_distance(p, r) + torus_distance(r, q) + 1e-12
    assert dpq <= math.sqrt(0.5) + 1e-12


@settings(max_examples=300, deadline=None)
@given(coord, coord, st.sampled_from([1.0, 2.0, 0.5]))
def test_wrap_idempotent(x, y, side):
    t = Torus(side)
    p = wrap((x, y), t)
    assert 0 <= p.x < side and 0 <= p.y < side
    assert wrap(p.xy, t).xy.tolist() == p.xy.tolist()


def test_vectorized_distance_matches_scalar(rng):
    P = rng.uniform(0, 2, (1000, 2))
    Q = rng.uniform(0, 2, (1000, 2))
    t = Torus(2.0)
    d = torus_distance_xy(P, Q, 2.0)
    for i in range(0, 1000, 97):
        assert d[i] == pytest.approx(torus_distance(TorusPoint(*P[i], t), TorusPoint(*Q[i], t)), abs=1e-14)
