import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endolab.maps import critical_set, fd_jacobian
from endolab.singularities import (
    CollapseMap,
    FlattenedChartMap,
    FlattenedFoldMap,
    NormalFormMap,
    TorusCollapseMap,
    c1_distance,
    classify_critical_point,
    collapse_counterexample,
    dense_critical_orbit_experiment,
    flatten_fold,
    quadratic_model,
)
from endolab.torus import InvalidArgument

FOLD, CUSP = NormalFormMap("fold"), NormalFormMap("cusp")


def test_fold_line():
    for x in np.linspace(-0.9, 0.9, 100):
        assert classify_critical_point(FOLD, (x, 0.0)).cls == "fold"


def test_cusp_origin():
    c = classify_critical_point(CUSP, (0.0, 0.0))
    assert c.cls == "cusp" and abs(c.contact) > 1


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.5), st.booleans())
def test_parabola_folds(t, neg):
    t = -t if neg else t
    assert classify_critical_point(CUSP, (3 * t * t, t)).cls == "fold"


def test_noncritical_point_rejected():
    with pytest.raises(InvalidArgument):
        classify_critical_point(FOLD, (0.2, 0.3))


def test_normal_form_jacobians():
    P = np.random.default_rng(0).uniform(-1, 1, (200, 2))
    for m in (FOLD, CUSP, quadratic_model()):
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            a, b = m.eval(*(P + e).T), m.eval(*(P - e).T)
            fd = np.column_stack([(a[0] - b[0]) / (2 * h), (a[1] - b[1]) / (2 * h)])
            assert np.allclose(fd, m.jac(*P.T)[:, :, j], atol=1e-6)


def test_c1_distance_self_zero():
    assert c1_distance(FOLD, FOLD) == 0.0
    assert c1_distance(FOLD, CUSP) > 0


def test_flatten_fold():
    g, cert = flatten_fold(0.1)
    assert cert.delta == pytest.approx(0.02)
    assert cert.c1_distance < 0.1 and cert.det_zero_on_ball and cert.passed
    assert 4 * cert.delta < 0.1


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1.0))
def test_flatten_fold_any_eps(eps):
    g, cert = flatten_fold(eps, resolution=60, samples=200)
    assert cert.passed


def test_flattened_fold_jacobian():
    g = FlattenedFoldMap(0.02)
    P = np.column_stack([np.random.default_rng(1).uniform(-1, 1, 500), np.random.default_rng(2).uniform(-0.05, 0.05, 500)])
    h = 1e-7
    fd_y = (np.array(g.eval(P[:, 0], P[:, 1] + h)) - np.array(g.eval(P[:, 0], P[:, 1] - h))) / (2 * h)
    assert np.allclose(fd_y.T, g.jac(P[:, 0], P[:, 1])[:, :, 1], atol=1e-4)


def test_collapse_planar():
    g, cert = collapse_counterexample()
    assert cert.image_diameter < 1e-12
    assert cert.c1_distance < 0.1
    assert cert.delta == pytest.approx(0.00625)
    assert cert.transitivity_status == "inconclusive"
    assert cert.passed


def test_collapse_map_is_constant_inside():
    g = CollapseMap(quadratic_model(), 0.01)
    rng = np.random.default_rng(0)
    r = 0.005 * np.sqrt(rng.uniform(0, 1, 500))
    a = rng.uniform(0, 2 * np.pi, 500)
    X, Y = g.eval(r * np.cos(a), r * np.sin(a))
    assert np.ptp(X) == 0 and np.ptp(Y) == 0
    assert np.all(g.jac(r * np.cos(a), r * np.sin(a)) == 0)


def test_torus_collapse_jacobian(expanding):
    g = TorusCollapseMap(expanding, (0.5, 0.0), 0.05)
    rng = np.random.default_rng(3)
    P = np.mod(np.array([0.5, 0.0]) + rng.uniform(-0.06, 0.06, (500, 2)), 1.0)
    err = np.abs(fd_jacobian(g, P, 1e-7) - g.jac_xy(P[:, 0], P[:, 1])).max()
    assert err < 1e-5


def test_flattened_chart_map():
    m = FlattenedChartMap()
    rng = np.random.default_rng(4)
    u = rng.uniform(-m.a, m.a, 1000)
    v = rng.uniform(-m.delta / 2, m.delta / 2, 1000)
    x, y = np.mod(m.z_c[0] + u, 1), np.mod(m.z_c[1] + v, 1)
    assert np.all(m.det_xy(x, y) == 0)
    assert m.in_critical_interior(x, y).all()
    # far from the chart the map is diag(3, 2)
    X, Y = m.eval_xy(np.array([0.9]), np.array([0.1]))
    assert X[0] == pytest.approx(0.7) and Y[0] == pytest.approx(0.2)
    P = rng.uniform(0, 1, (1000, 2))
    err = np.abs(fd_jacobian(m, P, 1e-7) - m.jac_xy(*P.T)).max()
    assert err < 1e-4
    for xy in rng.uniform(0, 1, (200, 2)):
        a = m.eval_scalar(*xy)
        b = m.eval_xy(xy[:1], xy[1:])
        assert a == pytest.approx((b[0][0], b[1][0]), abs=1e-12)


def test_flattened_chart_has_critical_interior():
    cs = critical_set(FlattenedChartMap(), 256)
    assert cs.sign_samples[0] == 0.0


def test_dense_critical_orbit():
    rep = dense_critical_orbit_experiment(N=200_000)
    assert rep.fraction == 1.0 and not rep.off_thesis
    assert dense_critical_orbit_experiment(N=1).fraction < 0.05
