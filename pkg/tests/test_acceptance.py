"""Acceptance suite: twelve end-to-end criteria, each with its own tolerance and runtime bound.

Every test records a PASS/FAIL line; conftest prints them in the terminal summary.
Run `pytest tests/test_acceptance.py -v` to see them.
"""

import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import brentq

from endolab.cli import main
from endolab.cones import robustness_margin, verify_stable_cones, verify_unstable
from endolab.curves import TorusPolyline, annulus_avoidance_check, growth_certify
from endolab.maps import LinearMap, critical_set, fixed_points, perturb, persistence_certificate, sample_off_support
from endolab.singularities import NormalFormMap, classify_critical_point, collapse_counterexample, flatten_fold
from endolab.torus import IntMatrix2, torus_distance_xy
from endolab.transitivity import (
    covering_exponent,
    inverse_branch_avoiding,
    manifold_density,
    preorbit_density,
    saddle_constants,
    stable_segment_family,
    transitivity_experiment,
)

ROOT = Path(__file__).resolve().parent.parent
RESULTS: dict[int, str] = {}


@contextmanager
def criterion(n: int, title: str, seconds: float):
    t0 = time.perf_counter()
    try:
        yield
        wall = time.perf_counter() - t0
        assert wall < seconds, f"took {wall:.1f} s, bound {seconds} s"
    except BaseException as e:
        RESULTS[n] = f"criterion {n:2d} FAIL  {title} ({type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''})"
        raise
    if "FAIL" not in RESULTS.get(n, ""):
        RESULTS[n] = f"criterion {n:2d} PASS  {title} ({wall:.1f} s)"


def test_c01_determinant_values(expanding, rng):
    with criterion(1, "det Df = -6 inside the bump, +6 outside", 1.0):
        m = expanding
        d = m.params["delta"]
        inner = m.det_xy(np.array([0.0]), np.array([d / 2]))[0]
        assert abs(inner + 6) < 1e-9
        P = sample_off_support(m, 10_000, rng)
        assert np.abs(m.det_xy(P[:, 0], P[:, 1]) - 6).max() < 1e-9


@pytest.mark.parametrize("fam", ["expanding", "saddle", "nonhyp"])
def test_c02_identity_off_support(fam, request, rng):
    m = request.getfixturevalue(fam)
    with criterion(2, "f = A off the support (all families)", 1.0):
        P = sample_off_support(m, 10_000, rng)
        X, Y = m.eval_xy(P[:, 0], P[:, 1])
        L = (m.base.array.astype(float) @ P.T).T
        d = torus_distance_xy(np.column_stack([X, Y]), L, m.side)
        assert d.max() < 1e-12


def test_c03_cone_inequality_and_grid(expanding, saddle):
    with criterion(3, "cone inequality slack and grid verification", 30.0):
        for m, lp_min in ((expanding, math.sqrt(2)), (saddle, None)):
            c = m.cone
            lam, mu = abs(m.params["lam"]), abs(m.params.get("mu", 1.0))
            lhs = c.M_psi * c.delta0 / lam + mu * c.a0 / lam
            headroom = c.a0 - mu * c.a0 / lam
            assert lhs < c.a0 and (c.a0 - lhs) / headroom >= 0.5
            lp = m.params["lambda_prime"]
            if lp_min is not None:
                assert lp >= lp_min
            assert lp > 1
            rep = verify_unstable(m, m.cone_spec, lp, 1024, 256)
            assert rep.passed and rep.inv_margin > 0 and rep.exp_ratio >= lp
        st = verify_stable_cones(saddle, saddle.stable_cone_spec, saddle.params["mu1"], 256)
        assert st.passed


def test_c04_annulus_avoidance(expanding):
    with criterion(4, "annulus U \\ U' avoids U' for 9 iterates", 5.0):
        r = expanding.params["r"]
        rep = annulus_avoidance_check(expanding, r, steps=9, samples=10_000)
        assert rep.min_clearance > 0
        # exact-linear oracle, computed here: diag(3,2) stretches every vector by at least 2
        assert rep.oracle_ok
        np.testing.assert_allclose(rep.oracle_radii, [3 * r * 2**i for i in range(1, 10)], rtol=1e-12)


def test_c05_growth_to_10r(expanding, rng):
    with criterion(5, "cone curve of diameter r reaches 10r within 10 steps", 5.0):
        r = expanding.params["r"]
        for _ in range(3):
            ang = rng.uniform(0, 2 * math.pi)
            p = 3.5 * r * np.array([math.cos(ang), math.sin(ang)])
            seed = TorusPolyline.segment(p - (0.5 * r, 0.0), (1.0, 0.0), r, expanding.torus)
            cert = growth_certify(expanding, seed, math.sqrt(2), 10)
            k = cert.first_reaching(10 * r)
            assert k is not None and k <= 10
            assert min(cert.factors) >= math.sqrt(2) - 1e-9
        assert math.sqrt(2) ** 9 >= 10


def test_c06_covering(expanding):
    with criterion(6, "covering certificate for eps = r/4", 60.0):
        eps = expanding.params["r"] / 4
        c = covering_exponent(expanding.base, eps, grid=64)
        assert c.eps == eps and c.radius == pytest.approx(eps / 8)
        assert c.certified and c.grid == 64
        assert c.robust_delta16 == pytest.approx(c.delta_cert / 16) and c.robust_delta16 > 0


def test_c07_preorbit_density(expanding, rng):
    with criterion(7, "pre-orbit density (family depth 10, linear depth 5)", 120.0):
        for _ in range(5):
            rep = preorbit_density(expanding, rng.uniform(0, 1, 2), 10, 0.05, 32)
            assert rep.fraction == 1.0
        L = LinearMap(IntMatrix2(3, 0, 0, 2))
        assert 2.0**-5 < 0.05
        assert preorbit_density(L, (0.0, 0.0), 5, 0.05, 32, prune_res=None).fraction == 1.0


def _circle_fixed(m, x):
    """All roots of y -> second(x, y) - y on the circle, by sign-change scan and brentq."""
    s = m.side

    def gap(y):
        return (m.eval_scalar(x, y)[1] - y + s / 2) % s - s / 2

    ys = np.linspace(0, s, 40_001)
    g = np.array([gap(y) for y in ys])
    roots = []
    for i in np.nonzero(np.sign(g[:-1]) != np.sign(g[1:]))[0]:
        if abs(g[i]) + abs(g[i + 1]) < 0.1 * s:  # skip jumps from the wrap
            roots.append(ys[i] if g[i] == 0 else brentq(gap, ys[i], ys[i + 1], xtol=1e-15))
    return sorted({round(r % s, 12) for r in roots})


def test_c08_nonhyperbolic_fixed_points(nonhyp):
    with criterion(8, "non-hyperbolic fixed points and manifold density", 120.0):
        m, p = nonhyp, nonhyp.params
        # independent roots of y -> second(x, y) - y on each fixed vertical line
        (z, x1), (y0, y1) = _circle_fixed(m, 0.0), _circle_fixed(m, 0.4)
        oracle = [((0.0, z), "saddle"), ((0.0, x1), "repelling"), ((0.4, y0), "saddle"), ((0.4, y1), "repelling")]
        assert z == 0.0 and x1 == pytest.approx(p["x1"], abs=1e-10) and y0 == pytest.approx(p["y0"], abs=1e-10)
        fps = [f for f in fixed_points(m) if np.any(m.strip_masks(np.array([f.point.x])))]
        assert len(fps) == 4
        for xy, cls in oracle:
            best = min(fps, key=lambda f: torus_distance_xy(f.point.xy, np.array(xy), m.side))
            assert torus_distance_xy(best.point.xy, np.array(xy), m.side) < 1e-8
            assert best.cls == cls
        assert manifold_density(m, "unstable", 30, 0.05).fraction == 1.0
        assert manifold_density(m, "stable", 20, 0.05).fraction == 1.0


def test_c09_saddle_machinery(saddle, rng):
    with criterion(9, "saddle branches, stable family, intersection constants, transitivity", 300.0):
        m, r = saddle, saddle.params["r"]
        br = inverse_branch_avoiding(m, tuple(rng.uniform(0, 1, 2)), depth=100)
        assert len(br) == 101
        assert torus_distance_xy(np.array(br[1:]), m.center, 1.0).min() > 3 * r
        fam = stable_segment_family(m, (tuple(rng.uniform(0, 1, 2)), 0.1))
        assert fam.lengths[-1] > r
        ic = saddle_constants(m, samples=1000, seed=int(rng.integers(2**31)))
        assert ic.validated and ic.failures == 0
        for _ in range(5):
            V1, V2 = (tuple(rng.uniform(0, 1, 2)), 0.1), (tuple(rng.uniform(0, 1, 2)), 0.1)
            res = transitivity_experiment(m, V1, V2, seed=int(rng.integers(2**31)))
            assert res.status == "pass" and res.validated and res.witness is not None


def test_c10_singularities(rng):
    with criterion(10, "fold flattening, ball collapse, Whitney classification", 30.0):
        g, cert = flatten_fold(0.1)
        assert cert.delta == pytest.approx(0.02)
        assert cert.c1_distance < 0.1 and cert.det_zero_on_ball
        g, col = collapse_counterexample(eps=0.1)
        assert col.image_diameter < 1e-12 and col.c1_distance < 0.1
        fold, cusp = NormalFormMap("fold"), NormalFormMap("cusp")
        assert all(classify_critical_point(fold, (x, 0.0)).cls == "fold" for x in rng.uniform(-0.9, 0.9, 100))
        assert classify_critical_point(cusp, (0.0, 0.0)).cls == "cusp"
        ts = rng.uniform(0.01, 0.5, 100) * rng.choice([-1, 1], 100)
        assert all(classify_critical_point(cusp, (3 * t * t, t)).cls == "fold" for t in ts)


@pytest.mark.parametrize("fam,res", [("expanding", 1024), ("saddle", 256), ("nonhyp", 256)])
def test_c11_robustness(fam, res, request):
    m = request.getfixturevalue(fam)
    with criterion(11, "robustness under C1 perturbations of size rho/2", 120.0):
        lp = m.params["lambda_prime"]
        rep = verify_unstable(m, m.cone_spec, lp, res, 64)
        rob = robustness_margin(rep, m, m.cone_spec, trials=8, resolution=res, global_resolution=64)
        assert rob.rho > 0 and rob.passed_trials == 8
        for t in range(8):
            g = perturb(m, rob.rho / 2, seed=t)
            cert = persistence_certificate(g)
            assert cert.det_minus < 0 < cert.det_plus
            assert not critical_set(g, 128).empty


def test_c12_reproducibility(tmp_path):
    with criterion(12, "byte-identical CSVs from repeated canonical runs", 900.0):
        for name in ("expanding", "saddle", "nonhyp"):
            doc = json.loads((ROOT / "configs" / f"{name}.json").read_text())
            outs = []
            for k in range(2):
                doc["output"] = str(tmp_path / f"{name}-{k}")
                cfg = tmp_path / f"{name}-{k}.json"
                cfg.write_text(json.dumps(doc))
                assert main(["run", str(cfg)]) == 0
                outs.append(Path(doc["output"]))
            a = sorted(p.name for p in outs[0].glob("*.csv"))
            assert a and a == sorted(p.name for p in outs[1].glob("*.csv"))
            for f in a:
                assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
