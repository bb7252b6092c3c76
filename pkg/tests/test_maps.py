import math

import numpy as np
import pytest

from endolab.maps import (
    LinearMap,
    NotCertifiable,
    critical_set,
    fd_jacobian,
    fd_jacobian_local,
    fixed_points,
    perturb,
    persistence_certificate,
    preimages_batch,
    sample_off_support,
)
from endolab.torus import IntMatrix2, torus_distance_xy

L32 = LinearMap(IntMatrix2(3, 0, 0, 2))
FAMS = ["expanding", "saddle", "nonhyp"]


def test_linear_eval():
    p = L32.eval_xy(np.array([0.4]), np.array([0.7]))
    assert p[0][0] == pytest.approx(0.2) and p[1][0] == pytest.approx(0.4)


def test_linear_preimages_of_origin():
    P = L32.preimages_xy(0.0, 0.0)
    assert len(P) == 6
    got = sorted((round(x * 3) % 3, round(y * 2) % 2) for x, y in P)
    assert got == [(i, j) for i in range(3) for j in range(2)]


def test_saddle_base_has_two_preimages(rng):
    L = LinearMap(IntMatrix2(3, 1, 1, 1))
    for t in rng.uniform(0, 1, (20, 2)):
        assert len(L.preimages_xy(*t)) == 2


def test_linear_has_no_critical_set():
    assert critical_set(L32).empty
    with pytest.raises(NotCertifiable):
        persistence_certificate(L32)


def test_linear_fixed_points():
    fps = fixed_points(L32)
    # (A - I) p in Z^2 has |det(A - I)| = 2 solutions
    assert [f.point.xy.tolist() for f in fps] == [[0.0, 0.0], [0.5, 0.0]]
    assert all(f.cls == "repelling" for f in fps)


@pytest.mark.parametrize("fixture", FAMS)
def test_off_support_is_linear(fixture, request, rng):
    m = request.getfixturevalue(fixture)
    P = sample_off_support(m, 10_000, rng)
    X, Y = m.eval_xy(P[:, 0], P[:, 1])
    A = m.base.array
    lin = m.torus.wrap(P @ A.T)
    assert torus_distance_xy(np.column_stack([X, Y]), lin, m.side).max() < 1e-12
    assert np.allclose(m.det_xy(P[:, 0], P[:, 1]), m.base.det, atol=1e-9)


def _support_points(m, n, rng):
    fr = m.critical_frames()[0]
    U = rng.uniform(*fr.u_range, n)
    V = rng.uniform(*fr.v_range, n)
    X, Y = fr.to_xy(U, V)
    return m.torus.wrap(np.column_stack([X, Y]))


def test_nonhyp_jacobian_matches_fd(nonhyp, rng):
    m = nonhyp
    P = _support_points(m, 1000, rng)
    fr = m.critical_frames()[0]
    h = 1e-6 * (fr.v_range[1] - fr.v_range[0])
    Jf, Ja = fd_jacobian(m, P, h), m.jac_xy(P[:, 0], P[:, 1])
    err = np.abs(Jf - Ja).max(axis=(1, 2)) / np.abs(Ja).max(axis=(1, 2))
    assert err.max() < 1e-5


@pytest.mark.parametrize("fixture", ["expanding", "saddle"])
def test_bump_jacobian_matches_local_fd(fixture, request, rng):
    # the bump heights are ~1e-7, so differences are taken in offsets from the center
    m = request.getfixturevalue(fixture)
    th, d = m.params["theta"], m.params["delta"]
    U = np.column_stack([rng.uniform(-1.5 * th, 1.5 * th, 1000), rng.uniform(-0.2 * d, 1.2 * d, 1000)])
    D = U @ np.column_stack([m.E[:, 0], m.e_s]).T
    Jf = fd_jacobian_local(m, D)
    Ja = m.jac_xy(*m.torus.wrap(D + m.center).T)
    err = np.abs(Jf - Ja).max(axis=(1, 2)) / np.abs(Ja).max(axis=(1, 2))
    assert err.max() < 1e-5


def test_expanding_values_at_bump(expanding):
    d = expanding.params["delta"]
    X, Y = expanding.local_xy(np.array([0.0]), np.array([d / 2]))
    assert X[0] == 0.0
    # phi vanishes at the midpoint of its support for the quintic shape only; here check the Jacobian
    assert expanding.det_xy(np.array([0.0]), np.array([d / 2]))[0] == pytest.approx(-6.0, abs=1e-9)


def test_nonhyp_fixes_origin(nonhyp):
    X, Y = nonhyp.eval_xy(np.array([0.0]), np.array([0.0]))
    assert abs(X[0]) < 1e-15 and abs(Y[0]) < 1e-15


@pytest.mark.parametrize("fixture", FAMS)
def test_preimage_residuals(fixture, request, rng):
    m = request.getfixturevalue(fixture)
    T = rng.uniform(0, m.side, (1000, 2))
    P, src = preimages_batch(m, T)
    X, Y = m.eval_xy(P[:, 0], P[:, 1])
    assert torus_distance_xy(np.column_stack([X, Y]), T[src], m.side).max() < 1e-9
    counts = np.bincount(src, minlength=len(T))
    assert counts.min() >= abs(m.base.det)


def test_expanding_fiber_matches_linear(expanding):
    # a target far from the image of the bump strip has exactly the linear fiber
    P = expanding.preimages_xy(0.4, 0.3)
    Q = L32.preimages_xy(0.4, 0.3)
    assert len(P) == 6
    assert np.sort(P, axis=0) == pytest.approx(np.sort(Q, axis=0), abs=1e-12)


def test_expanding_critical_set_box(expanding):
    cs = critical_set(expanding, 256)
    assert not cs.empty
    th, d = expanding.params["theta"], expanding.params["delta"]
    pts = np.vstack(cs.polylines)
    c = expanding.torus.centered(pts)
    assert np.all(np.abs(c[:, 0]) <= 2 * th) and np.all((c[:, 1] >= 0) & (c[:, 1] <= d))


def test_saddle_critical_set_near_center(saddle):
    cs = critical_set(saddle, 256)
    assert not cs.empty
    pts = np.vstack(cs.polylines)
    assert torus_distance_xy(pts, saddle.center, 1.0).max() < saddle.params["r"]


@pytest.mark.parametrize("fixture", FAMS)
def test_persistence(fixture, request):
    m = request.getfixturevalue(fixture)
    cert = persistence_certificate(m)
    assert cert.det_minus < 0 < cert.det_plus
    assert cert.jacobian_bound > 0


def test_expanding_persistence_values(expanding):
    cert = persistence_certificate(expanding)
    assert cert.det_minus == pytest.approx(-6.0, abs=1e-9)
    assert cert.det_plus == pytest.approx(6.0, abs=1e-9)
    assert cert.margin == pytest.approx(3.0)


def test_saddle_persistence_value(saddle):
    cert = persistence_certificate(saddle)
    lam, mu = saddle.base.eigenvalues()
    th = saddle.params["theta"]
    assert cert.det_minus == pytest.approx(lam * (mu - (1 + th)), rel=1e-9)


def test_nonhyp_fixed_points(nonhyp):
    p = nonhyp.params
    # outside the strips the second coordinate is the identity, so x = 4/5, 6/5, 8/5 carry
    # vertical continua of nonhyperbolic fixed points; one representative each is reported
    allfps = fixed_points(nonhyp)
    fps = [f for f in allfps if np.any(nonhyp.strip_masks(np.array([f.point.x])))]
    assert {f.cls for f in allfps if f not in fps} <= {"nonhyperbolic"}
    expect = [((0.0, 0.0), "saddle"), ((0.0, p["x1"]), "repelling"), ((0.4, p["y0"]), "saddle"), ((0.4, p["y1"]), "repelling")]
    assert len(fps) == 4
    for (xy, cls), f in zip(sorted(expect), fps):
        assert torus_distance_xy(f.point.xy, np.array(xy), 2.0) < 1e-8
        assert f.cls == cls


def test_perturb_size(expanding):
    g = perturb(expanding, 1e-3, seed=1)
    P = np.random.default_rng(0).uniform(0, 1, (2000, 2))
    X0, Y0 = expanding.eval_xy(*P.T)
    X1, Y1 = g.eval_xy(*P.T)
    d = torus_distance_xy(np.column_stack([X0, Y0]), np.column_stack([X1, Y1]), 1.0)
    assert d.max() <= 1e-3 * math.sqrt(2) * (1 + 1e-12)
    dJ = np.abs(g.jac_xy(*P.T) - expanding.jac_xy(*P.T)).max()
    assert dJ <= 1e-3 * (1 + 1e-12)
