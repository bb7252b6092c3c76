"""Constructors for the three canonical families, with their invariants re-checked on build."""

from __future__ import annotations

import functools
import math

import numpy as np

from .cones import ConeSpec, choose_unstable_params, cone_gap_aperture
from .maps import (
    CircleMap,
    ConstructionError,
    EigenBumpMap,
    EndoMap,
    NonHyperbolicMap,
    annulus_samples,
    coset_representatives,
)
from .profiles import BumpPhi, BumpPsi
from .torus import IntMatrix2, InconsistentLift, InvalidArgument, Torus, homology_action, torus_distance_xy

FAMILIES = {
    "expanding-3-2": ("expanding", "A = diag(3,2); both eigenvalues expanding; bump (3x, 2y - psi(x) phi(y)) at the origin"),
    "nonhyp-6": ("nonhyperbolic", "A = diag(6,1) on R^2/[-1,1]^2; strips A0/A1 with circle maps g, h plus a critical bump"),
    "saddle-3-1-1-1": ("saddle", "A = [[3,1],[1,1]]; eigenvalues 2 +- sqrt(2); bump along the stable eigenvector"),
}


def _require(cond: bool, what: str):
    if not cond:
        raise ConstructionError(f"violated: {what}")


def _as_matrix(A) -> IntMatrix2:
    if isinstance(A, IntMatrix2):
        return A
    A = list(np.asarray(A).ravel())
    if len(A) != 4 or any(int(v) != v for v in A):
        raise InvalidArgument(f"matrix needs four integer entries, got {A}")
    return IntMatrix2(*(int(v) for v in A))


def check_homotopy(m: EndoMap):
    M = homology_action(m)
    if M != m.base:
        raise InconsistentLift(f"{m.name}: homology action {M} differs from base {m.base}")
    return M


# ---------------------------------------------------------------------------
# expanding


def build_expanding(
    A=(3, 0, 0, 2),
    r: float = 5e-6,
    theta: float = 3e-7,
    a: float = 0.5,
    lambda_prime: float = math.sqrt(2),
    delta: float | None = None,
    phi_kind: str = "peaked",
    verify_samples: int = 10_000,
    seed: int = 0,
    name: str = "",
) -> EigenBumpMap:
    A = _as_matrix(A)
    A.check_family_base()
    _require(A.b == 0 and A.c == 0, "expanding constructor works in the diagonal frame (b = c = 0)")
    lam, mu = float(A.a), float(A.d)
    _require(abs(lam) > abs(mu) > 1, "|lambda| > |mu| > 1")
    side = 1.0
    _require(r > 0 and theta > 0, "r > 0 and theta > 0")
    _require(2 * theta < r / 8, "closure of B(0, 2 theta) inside U'' = B(0, r/8)")
    _require(abs(lam) ** 9 * 4 * r <= side / 2, "annulus no-wrap bound |lambda|^9 * 4r <= side/2")
    psi = BumpPsi(theta, 2 * mu)
    template = BumpPhi(1.0, kind=phi_kind)
    req = delta if delta is not None else theta / 2
    _require(req < theta, "delta < theta")
    cp = choose_unstable_params(lam, mu, psi, a, lambda_prime, delta_request=req, phi_template=template)
    phi = BumpPhi(cp.delta0, 0.0, 1.0, phi_kind)
    m = EigenBumpMap("expanding", A, (0.0, 0.0), (1.0, 0.0), (0.0, 1.0), psi, phi, r / 8, Torus(side), name or f"expanding-{A.a}-{A.d}")
    m.cone = cp
    m.params.update(r=r, theta=theta, delta=cp.delta0, U=4 * r, U1=3 * r, U2=r / 8, lam=lam, mu=mu, a=a, lambda_prime=lambda_prime, phi_kind=phi_kind)
    m.cone_spec = ConeSpec((1.0, 0.0), cp.a0)
    # sampled annulus avoidance for i = 1..9
    rng = np.random.default_rng(seed)
    P = annulus_samples((0.0, 0.0), 3 * r, 4 * r, verify_samples, rng)
    P = m.torus.wrap(P)
    for i in range(1, 10):
        X, Y = m.eval_xy(P[:, 0], P[:, 1])
        P = np.column_stack([X, Y])
        d = torus_distance_xy(P, np.zeros(2), side)
        _require(bool(np.all(d > 3 * r)), f"f^{i}(U minus U') avoids U' (sampled)")
    check_homotopy(m)
    return m


# ---------------------------------------------------------------------------
# saddle


def _unit_eigvec(M: np.ndarray, ev: float) -> np.ndarray:
    a, b, c, d = M.ravel()
    v = np.array([b, ev - a]) if abs(b) + abs(ev - a) > abs(ev - d) + abs(c) else np.array([ev - d, c])
    v = v / np.linalg.norm(v)
    return v if v[0] > 0 or (v[0] == 0 and v[1] > 0) else -v


def find_saddle_centers(A: IntMatrix2, r: float, grid: int = 8, side: float = 1.0):
    """Search targets t on a grid; accept the first coset pair (c, twin) of A^{-1}(t) meeting the separations."""
    Ainv = np.linalg.inv(A.array)
    reps = coset_representatives(A)
    norm = np.linalg.norm(A.array, 2)
    rng = np.random.default_rng(1)
    ang = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    rad = np.concatenate([np.full(256, 3 * r), 3 * r * np.sqrt(rng.uniform(0, 1, 256))])
    disk = np.column_stack([rad * np.cos(np.tile(ang, 2)), rad * np.sin(np.tile(ang, 2))])
    for i in range(grid):
        for j in range(grid):
            t = np.array([(i + 0.5) / grid, (j + 0.5) / grid]) * side
            pre = np.mod((Ainv @ (t[:, None] + side * reps.T)).T, side)
            for a_idx in range(len(pre)):
                c = pre[a_idx]
                Ac = np.mod(A.array @ c, side)
                if torus_distance_xy(Ac, c, side) <= 3 * r * (1 + norm):
                    continue
                img = np.mod((A.array @ (c + disk).T).T, side)
                if np.min(torus_distance_xy(img, c, side)) <= 3 * r:
                    continue
                for b_idx in range(len(pre)):
                    if b_idx == a_idx:
                        continue
                    twin = pre[b_idx]
                    if torus_distance_xy(twin, c, side) > 6 * r:
                        return c, twin, t
    raise ConstructionError("no saddle center found on the search grid")


def build_saddle(
    A=(3, 1, 1, 1),
    r: float = 0.02,
    theta: float = 0.005,
    lambda_prime: float = 2.0,
    mu1: float = 0.7,
    eps: float | None = None,
    delta: float | None = None,
    phi_kind: str = "peaked",
    center=None,
    twin=None,
    name: str = "",
) -> EigenBumpMap:
    A = _as_matrix(A)
    A.check_family_base()
    lam, mu = A.eigenvalues()
    _require(abs(lam) > 1 > abs(mu), "|lambda| > 1 > |mu|")
    _require(2 * theta < r, "2 theta < r")
    _require(abs(mu) < mu1 < 1, "mu1 in (|mu|, 1)")
    M = A.array
    e_u, e_s = _unit_eigvec(M, lam), _unit_eigvec(M, mu)
    if center is None:
        c, tw, _ = find_saddle_centers(A, r)
    else:
        c, tw = np.mod(np.asarray(center, float), 1.0), np.mod(np.asarray(twin, float), 1.0)
    Ac, Atw = np.mod(M @ c, 1.0), np.mod(M @ tw, 1.0)
    _require(torus_distance_xy(Ac, Atw, 1.0) < 1e-9, "A(x0, y0) = A(x1, y1)")
    _require(torus_distance_xy(Ac, c, 1.0) > 0, "A(x0, y0) != (x0, y0)")
    _require(torus_distance_xy(tw, c, 1.0) > 6 * r, "B(twin, 3r) and B(c, 3r) disjoint")
    eps = r if eps is None else eps
    a1, info = cone_gap_aperture(e_u, e_s, eps)
    psi = BumpPsi(theta, 1 + theta)
    template = BumpPhi(1.0, kind=phi_kind)
    req = delta if delta is not None else theta
    _require(req < 2 * theta, "delta < 2 theta")
    cp = choose_unstable_params(lam, mu, psi, a1, lambda_prime, delta_request=req, phi_template=template, mu1=mu1)
    phi = BumpPhi(cp.delta0, 0.0, 1.0, phi_kind)
    m = EigenBumpMap("saddle", A, c, e_u, e_s, psi, phi, r, Torus(1.0), name or f"saddle-{A.a}-{A.b}-{A.c}-{A.d}")
    m.cone = cp
    m.twin = np.asarray(tw)
    m.params.update(r=r, theta=theta, delta=cp.delta0, lam=lam, mu=mu, a1=a1, eps=eps, lambda_prime=lambda_prime, mu1=mu1, center=tuple(c), twin=tuple(tw), **info)
    m.cone_spec = ConeSpec(tuple(e_u), cp.a0)
    m.stable_cone_spec = ConeSpec(tuple(e_s), cp.a0, "stable")
    check_homotopy(m)
    return m


# ---------------------------------------------------------------------------
# non-hyperbolic


def build_nonhyperbolic(
    lam: int = 6,
    x1: float = 0.45,
    y0: float = 0.5,
    y1: float = 1.3,
    eta: float = 0.12,
    collar: float = 0.06,
    bump_center=(-0.6, 0.2),
    r: float = 0.1,
    theta: float = 0.04,
    lambda_prime: float = 2.0,
    delta: float | None = None,
    phi_kind: str = "peaked",
    name: str = "",
) -> NonHyperbolicMap:
    _require(int(lam) == lam and lam > 5, "integer lambda > 5")
    lam = int(lam)
    g, h = CircleMap(0.0, x1, eta), CircleMap(y0, y1, eta)
    _require(g.is_diffeomorphism() and h.is_diffeomorphism(), "circle maps are diffeomorphisms (eta * pi < 1)")
    _require(abs(float(g.deriv(0.0))) < 1 and abs(float(h.deriv(y0))) < 1, "0 and y0 attracting")
    _require(abs(float(g.deriv(x1))) > 1 and abs(float(h.deriv(y1))) > 1, "x1 and y1 repelling")
    _require(0 < x1 < y0, "repeller x1 of g lies in (0, y0)")
    h0 = float(h(0.0))
    _require(0 < h0 < x1, "0 < h(0) < x1")
    ginv_h0 = float(g.inverse(h0))
    kappa_g = g.max_contraction(0.0, ginv_h0)
    kappa_h = h.max_contraction(0.0, y0)
    kappa = max(kappa_g, kappa_h)
    _require(kappa < 1, "contraction kappa < 1 on [0, g^-1(h(0))] and [0, y0]")
    eps = 1.0 / (100 * lam)
    half = 1.0 / (2 * lam) + eps
    c1 = 2.0 / lam
    _require(2 * (half + collar) < c1, "collars of A0 and A1 disjoint")
    _require(c1 + half + collar < 1, "A1 collar inside the chart")
    bx, by = bump_center
    for c in (0.0, c1):
        dist = abs((bx - c + 1) % 2 - 1)
        _require(dist - r > half + collar, "critical ball disjoint from strips and collars")
    _require(2 * theta < r, "2 theta < r")
    psi = BumpPsi(theta, 1 + theta)
    # aperture from the collar blend: slope |J21| / (lam - J22) must be absorbed
    flat = NonHyperbolicMap(lam, g, h, collar, bump_center, r, BumpPsi(theta, 0.0), BumpPhi(theta))
    J21, J22 = [], []
    for fr in flat.cone_frames():
        u = np.linspace(*fr.u_range, 512)
        v = np.linspace(*fr.v_range, 512)
        U, V = np.meshgrid(u, v, indexing="ij")
        X, Y = fr.to_xy(U, V)
        J = flat.jac_xy(np.mod(X, 2), np.mod(Y, 2))
        J21.append(np.abs(J[..., 1, 0]).max())
        J22.append(np.abs(J[..., 1, 1]).max())
    a_need = max(J21) / (lam - max(J22))
    a = 4 * a_need
    template = BumpPhi(1.0, kind=phi_kind)
    req = delta if delta is not None else 0.9 * theta
    _require(req < 2 * theta, "delta < 2 theta")
    cp = choose_unstable_params(lam, 1.0, psi, a, lambda_prime, delta_request=req, phi_template=template)
    phi = BumpPhi(cp.delta0, 0.0, 1.0, phi_kind)
    m = NonHyperbolicMap(lam, g, h, collar, bump_center, r, psi, phi, name or f"nonhyp-{lam}")
    q0x = 2.0 / (lam - 1)
    _require(abs(q0x - c1) <= half, "q0 = (2/(lam-1), y0) lies in A1")
    m.cone = cp
    m.cone_spec = ConeSpec((1.0, 0.0), cp.a0)
    m.params.update(
        lam=lam, eps=eps, half_width=half, collar=collar, x1=x1, y0=y0, y1=y1, eta=eta, h0=h0, ginv_h0=ginv_h0,
        kappa=kappa, r=r, theta=theta, delta=cp.delta0, bump_center=tuple(bump_center), a=a, lambda_prime=lambda_prime,
        blend_J21=float(max(J21)), blend_J22=float(max(J22)),
    )
    check_homotopy(m)
    return m


# ---------------------------------------------------------------------------

_BUILDERS = {"expanding": build_expanding, "saddle": build_saddle, "nonhyperbolic": build_nonhyperbolic}


def build_family(config: dict) -> EndoMap:
    cfg = dict(config)
    fam = cfg.pop("family", None) or cfg.pop("name", None)
    if fam in FAMILIES:
        fam = FAMILIES[fam][0]
    if fam not in _BUILDERS:
        raise InvalidArgument(f"unknown family {fam!r}; expected one of {sorted(_BUILDERS)} or {sorted(FAMILIES)}")
    builder = _BUILDERS[fam]
    import inspect

    allowed = set(inspect.signature(builder).parameters)
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidArgument(f"unknown parameters for {fam}: {sorted(unknown)}")
    return builder(**cfg)


@functools.lru_cache(maxsize=None)
def canonical(name: str) -> EndoMap:
    if name not in FAMILIES:
        raise InvalidArgument(f"unknown canonical family {name!r}")
    return build_family({"family": name})
