import math

import numpy as np
import pytest

from endolab.cones import (
    ConeSpec,
    NoMargin,
    choose_unstable_params,
    cone_gap_aperture,
    cone_inequality_lhs,
    is_irrational_direction,
    robustness_margin,
    verify_cone_invariance,
    verify_expansion,
    verify_stable_cones,
    verify_unstable,
)
from endolab.maps import LinearMap
from endolab.profiles import BumpPsi
from endolab.torus import IntMatrix2, InvalidArgument

L32 = LinearMap(IntMatrix2(3, 0, 0, 2))
H = ConeSpec((1.0, 0.0), 0.25)


def test_choose_params_expanding():
    psi = BumpPsi(3e-7, 4.0)
    cp = choose_unstable_params(3, 2, psi, 0.5, math.sqrt(2))
    assert cp.a0 == 0.25
    assert cp.delta0 <= 0.125 / cp.M_psi
    assert cone_inequality_lhs(cp, 3, 2) < cp.a0
    assert cp.slack >= 0.5


def test_choose_params_rejects():
    psi = BumpPsi(0.1, 4.0)
    with pytest.raises(InvalidArgument):
        choose_unstable_params(2, 3, psi, 0.5, math.sqrt(2))
    with pytest.raises(InvalidArgument):
        choose_unstable_params(3, 2, psi, 0.5, 3.0)


def test_linear_invariance_margin():
    rep = verify_cone_invariance(L32, H, 64, 64)
    assert rep.inv_margin == pytest.approx(0.25 * (1 - 2 / 3), abs=1e-12)
    assert rep.passed


def test_wide_cone_still_invariant():
    assert verify_cone_invariance(L32, ConeSpec((1.0, 0.0), 10.0), 32, 32).passed


def test_axis_swap_breaks_invariance():
    swap = LinearMap(IntMatrix2(0, 1, 1, 0))
    assert not verify_cone_invariance(swap, H, 32, 32).passed


def test_linear_expansion():
    rep = verify_expansion(L32, ConeSpec((1.0, 0.0), 1e-9), math.sqrt(2), 32, 32)
    assert rep.exp_ratio == pytest.approx(3.0, abs=1e-6)
    bad = verify_expansion(L32, H, 3.5, 32, 32)
    assert not bad.passed and bad.exp_ratio < 3.01


def test_stable_cones_saddle(saddle):
    mu = 2 - math.sqrt(2)
    rep = verify_stable_cones(saddle, saddle.stable_cone_spec, 0.7, resolution=64)
    assert rep.passed
    assert rep.exp_ratio == pytest.approx(1 / mu, rel=1e-3)
    assert rep.linear_deviation < 1e-10
    assert verify_stable_cones(saddle, saddle.stable_cone_spec, 0.99, resolution=32).exp_margin > 0.5
    wrong = ConeSpec(saddle.cone_spec.w, saddle.cone_spec.a, "stable")
    assert not verify_stable_cones(saddle, wrong, 0.7, resolution=32).passed


def test_stable_cones_need_stable_sense(saddle):
    with pytest.raises(InvalidArgument):
        verify_stable_cones(saddle, saddle.cone_spec, 0.7)


def test_robustness_linear():
    rep = verify_cone_invariance(L32, H, 32, 32)
    rob = robustness_margin(rep)
    assert rob.rho == pytest.approx(0.25 / 3 / (2 * (1.25 + 3)), rel=1e-9)
    assert rob.rho == pytest.approx(0.0098, abs=1e-4)


def test_robustness_requires_pass():
    rep = verify_cone_invariance(LinearMap(IntMatrix2(0, 1, 1, 0)), H, 16, 16)
    with pytest.raises(NoMargin):
        robustness_margin(rep)


def test_robustness_trials_expanding(expanding):
    lp = expanding.params["lambda_prime"]
    rep = verify_unstable(expanding, expanding.cone_spec, lp, 512, 64)
    rob = robustness_margin(rep, expanding, expanding.cone_spec, trials=3, resolution=512, global_resolution=64)
    assert rob.passed_trials == 3


@pytest.mark.parametrize("fixture,res", [("expanding", 384), ("saddle", 64), ("nonhyp", 64)])
def test_grid_stability(fixture, res, request):
    m = request.getfixturevalue(fixture)
    lp = m.params["lambda_prime"]
    coarse = verify_unstable(m, m.cone_spec, lp, res, 32)
    assert coarse.passed
    fine = verify_unstable(m, m.cone_spec, lp, 4 * res, 128)
    assert fine.passed


def test_coarse_grid_is_not_trusted(expanding):
    # at 64^2 the Lipschitz budget swamps the margin; the sweep must say so
    rep = verify_unstable(expanding, expanding.cone_spec, math.sqrt(2), 64, 32)
    assert rep.lipschitz_budget > 0 and not rep.passed


def test_irrational_directions():
    assert is_irrational_direction((1.0, math.sqrt(2) - 1))
    assert not is_irrational_direction((1.0, 0.5))
    assert not is_irrational_direction((0.0, 1.0))


def test_gap_aperture(saddle):
    a1, info = cone_gap_aperture(saddle.E[:, 0], saddle.e_s, 0.02)
    assert 0 < a1 < math.tan(info["angle_w_w1"] / 2)
    with pytest.raises(InvalidArgument):
        cone_gap_aperture((1.0, 0.0), (0.0, 1.0), 0.02)
