import numpy as np
from scipy.integrate import simpson
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endolab.profiles import BumpPhi, BumpPsi, FoldCutoff, RadialCutoff, fd_derivative_error, profile_constraint_report


def test_psi_values():
    psi = BumpPsi(3e-7, 4.0)
    assert psi(0.0) == 4.0
    assert psi(3e-7) == 0.0 and psi(-3e-7) == 0.0
    t = np.random.default_rng(0).uniform(0, 3e-7, 100)
    assert np.max(np.abs(psi(t) - psi(-t))) == 0.0


def test_psi_report():
    rep = profile_constraint_report(BumpPsi(0.1, 2.0, center=0.3))
    assert rep.passed
    assert rep.values["M"] > 0


def test_flat_psi_has_no_unique_critical_point():
    rep = profile_constraint_report(BumpPsi(0.1, 0.0))
    assert not rep["unique critical point"].passed


@pytest.mark.parametrize("kind", ["peaked", "quintic"])
def test_phi_shape(kind):
    phi = BumpPhi(0.02, base=0.5, kind=kind)
    assert phi(0.5) == 0.0 and phi(0.52) == 0.0
    assert abs(phi.deriv(0.5)) < 1e-12 and abs(phi.deriv(0.52)) < 1e-12
    assert phi.deriv(0.51) == pytest.approx(1.0, abs=1e-12)
    rep = profile_constraint_report(phi)
    assert rep.passed, [c for c in rep.constraints if not c.passed]


def test_quintic_max_abs_against_scan():
    # independent oracle: scan of the polynomial 16 t^2 (1-t)^2 (t - 1/2)
    t = np.linspace(0, 1, 2_000_001)
    oracle = np.max(np.abs(16 * t**2 * (1 - t) ** 2 * (t - 0.5)))
    phi = BumpPhi(0.3, kind="quintic")
    assert phi.max_abs() / 0.3 == pytest.approx(oracle, rel=1e-6)
    assert oracle == pytest.approx(0.1431, abs=1e-3)
    rep = profile_constraint_report(phi)
    assert rep["max|phi| <= delta"].margin == pytest.approx(1 - oracle, rel=1e-4)


def test_phi_rejects_bad_args():
    with pytest.raises(ValueError):
        BumpPhi(0.0)
    with pytest.raises(ValueError):
        BumpPhi(1.0, kind="cubic")


def test_fold_cutoff():
    c = FoldCutoff(0.02)
    rep = profile_constraint_report(c)
    assert rep.passed
    assert rep.values["max_slope"] <= 2 / 0.02 * (1 + c.slope_excess) * (1 + 1e-9)
    assert c.slope_excess == pytest.approx(0.0526, abs=1e-4)
    assert c(0.0) == 0.0 and c(0.01) == 0.0 and c(0.02) == 1.0 and c(-0.5) == 1.0


def test_radial_cutoff():
    c = RadialCutoff(0.1)
    assert profile_constraint_report(c).passed
    assert c(0.0) == 0.0 and c(0.01) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 10.0), st.floats(-5.0, 5.0), st.integers(0, 10_000))
def test_fd_matches_analytic(scale, base, seed):
    pts = np.random.default_rng(seed).uniform(0.001, 0.999, 1000)
    base *= scale  # offsets of order 1 at tiny scales only measure cancellation
    psi = BumpPsi(scale, 1.0 + scale, center=base)
    assert fd_derivative_error(psi, psi.deriv, base + scale * (2 * pts - 1) * 0.95, 1e-6 * scale) < 1e-5
    phi = BumpPhi(scale, base)
    assert fd_derivative_error(phi, phi.deriv, base + scale * pts, 1e-6 * scale) < 1e-5


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 10.0))
def test_phi_integral_vanishes(delta):
    phi = BumpPhi(delta)
    y = np.linspace(0, delta, 200_001)
    d = phi.deriv(y)
    integral = simpson(d, x=y)
    assert abs(integral) / delta < 1e-10
