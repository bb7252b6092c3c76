import math

import pytest

from endolab.families import FAMILIES, build_family, canonical, check_homotopy
from endolab.maps import ConstructionError
from endolab.torus import IntMatrix2, InvalidArgument


def test_registry():
    assert {v[0] for v in FAMILIES.values()} == {"expanding", "saddle", "nonhyperbolic"}
    with pytest.raises(InvalidArgument):
        canonical("nope")


def test_expanding_defaults(expanding):
    p = expanding.params
    assert expanding.base == IntMatrix2(3, 0, 0, 2)
    assert p["r"] == 5e-6 and p["theta"] < p["r"] / 16
    assert 3**9 * 4 * p["r"] == pytest.approx(0.39366)
    assert p["delta"] < p["theta"]


def test_no_wrap_bound_rejected():
    with pytest.raises(ConstructionError, match="no-wrap"):
        build_family({"family": "expanding", "r": 1e-5, "theta": 5e-7})


def test_theta_bound_rejected():
    with pytest.raises(ConstructionError, match="U''"):
        build_family({"family": "expanding", "theta": 1e-6})


def test_expanding_needs_expanding_matrix():
    with pytest.raises(ConstructionError):
        build_family({"family": "expanding", "A": [3, 0, 0, 1]})


def test_saddle_constants(saddle):
    lam, mu = saddle.base.eigenvalues()
    assert lam == pytest.approx(3.41421356, abs=1e-8) and mu == pytest.approx(0.58578644, abs=1e-8)
    assert saddle.base.det == 2
    p = saddle.params
    assert p["delta"] < 2 * p["theta"] < p["r"]


def test_saddle_rejects_wide_bump():
    with pytest.raises(ConstructionError):
        build_family({"family": "saddle", "theta": 0.015})


def test_nonhyp_strip_contains_q0(nonhyp):
    p = nonhyp.params
    assert abs(2 / 5 - 2 / 6) <= p["half_width"]
    assert p["eps"] == pytest.approx(1 / 600)
    assert p["kappa"] < 1
    assert 0 < p["h0"] < p["x1"]


def test_nonhyp_requires_large_lambda():
    with pytest.raises(ConstructionError):
        build_family({"family": "nonhyperbolic", "lam": 5})


def test_unknown_parameter():
    with pytest.raises(InvalidArgument):
        build_family({"family": "expanding", "wobble": 1})


@pytest.mark.parametrize("fixture", ["expanding", "saddle", "nonhyp"])
def test_homotopic_to_base(fixture, request):
    m = request.getfixturevalue(fixture)
    assert check_homotopy(m) == m.base


@pytest.mark.parametrize("fixture", ["expanding", "saddle", "nonhyp"])
def test_cone_inequality_slack(fixture, request):
    m = request.getfixturevalue(fixture)
    assert m.cone.slack >= 0.5
    lam = abs(m.params["lam"])
    mu = m.params.get("mu", 1.0)
    lhs = m.cone.M_psi * m.cone.delta0 / lam + abs(mu) * m.cone.a0 / lam
    assert lhs < m.cone.a0
    assert m.cone.lambda_prime > 1


def test_expanding_lambda_prime(expanding):
    assert expanding.cone.lambda_prime == pytest.approx(math.sqrt(2))
    assert expanding.cone.a0 == 0.25
