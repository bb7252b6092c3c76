"""Cone-tangent polylines on the torus: refinement, mapping, diameters, growth and escape points."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .cones import ConeSpec
from .maps import EigenBumpMap, EndoMap, LinearMap, annulus_samples
from .torus import InvalidArgument, Torus, TorusPoint, torus_distance_xy


class DegenerateSegment(InvalidArgument):
    pass


class RefinementOverflow(RuntimeError):
    """The refinement policy asks for more vertices than its cap."""


class GrowthViolated(RuntimeError):
    pass


class EscapeInvalid(RuntimeError):
    def __init__(self, msg: str, step: int):
        super().__init__(msg)
        self.step = step


class NoGrowth(RuntimeError):
    pass


class PreconditionViolated(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# polylines


@dataclass
class TorusPolyline:
    """Vertices stored as one continuous lift; consecutive lift differences are the minimal displacements."""

    lift: np.ndarray
    torus: Torus = field(default_factory=Torus)
    params: np.ndarray | None = None

    def __post_init__(self):
        self.lift = np.asarray(self.lift, dtype=float).reshape(-1, 2)
        if len(self.lift) < 2:
            raise InvalidArgument("a polyline needs at least two vertices")
        seg = np.linalg.norm(np.diff(self.lift, axis=0), axis=1)
        if np.any(seg >= self.torus.side / 4):
            raise InvalidArgument(f"segment of length {seg.max():.3g} is not lift-unambiguous (needs < side/4)")
        if self.params is not None:
            self.params = np.asarray(self.params, dtype=float)
            if self.params.shape != (len(self.lift),):
                raise InvalidArgument("params must have one value per vertex")

    @classmethod
    def from_points(cls, points, torus: Torus = Torus(), params=None) -> "TorusPolyline":
        P = np.array([p.xy if isinstance(p, TorusPoint) else p for p in points], dtype=float)
        d = torus.centered(np.diff(P, axis=0))
        lift = np.vstack([P[:1], P[:1] + np.cumsum(d, axis=0)])
        return cls(lift, torus, params)

    @classmethod
    def segment(cls, start, direction, length: float, torus: Torus = Torus(), n: int = 2) -> "TorusPolyline":
        """Straight curve start + t * length * direction, t in [0, 1], with n vertices."""
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        t = np.linspace(0.0, 1.0, n)
        lift = np.asarray(start, dtype=float) + np.outer(t * length, u)
        return cls(lift, torus, t)

    @property
    def vertices(self) -> np.ndarray:
        return self.torus.wrap(self.lift)

    @property
    def points(self) -> list[TorusPoint]:
        return [TorusPoint(float(x), float(y), self.torus) for x, y in self.vertices]

    @property
    def offsets(self) -> np.ndarray:
        """Per-segment lattice offsets: lift difference minus wrapped difference."""
        V = self.vertices
        return np.diff(self.lift, axis=0) - np.diff(V, axis=0)

    @property
    def chords(self) -> np.ndarray:
        return np.diff(self.lift, axis=0)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.chords, axis=1).sum())

    def __len__(self):
        return len(self.lift)


@dataclass(frozen=True)
class RefinementPolicy:
    h_max: float
    cap: int = 400_000
    tol: float = 1e-9
    h_far: float | None = None  # segment bound where the map is affine

    def __post_init__(self):
        if not self.h_max > 0:
            raise InvalidArgument("h_max must be positive")
        if self.cap < 2:
            raise InvalidArgument("vertex cap must be at least 2")

    @classmethod
    def for_map(cls, m: EndoMap, **kw) -> "RefinementPolicy":
        side = m.side
        theta = m.params.get("theta")
        h = 1e-3 * side if theta is None else min(theta / 10, 1e-3 * side)
        norm = float(np.linalg.norm(m.base.array, 2))
        kw.setdefault("h_far", side / (8 * max(norm, 1.0)))
        return cls(h, **kw)


def verify_tangent_cone(curve: TorusPolyline, cone: ConeSpec, tol: float = 1e-9):
    """All chords inside the closed cone shrunk by tol; returns (ok, worst slope)."""
    d = curve.chords
    if np.any(np.linalg.norm(d, axis=1) == 0):
        raise DegenerateSegment("zero-length segment")
    s = cone.slope(d)
    worst = float(np.max(s))
    return bool(worst <= cone.a - tol), worst


def _affine_segments(m: EndoMap, lift: np.ndarray) -> np.ndarray:
    """Segments on which m is known to act as the base matrix."""
    n = len(lift) - 1
    if isinstance(m, LinearMap):
        return np.ones(n, dtype=bool)
    if isinstance(m, EigenBumpMap):
        side = m.side
        q = m.torus.centered(lift[:-1] - m.center)
        d = np.diff(lift, axis=0)
        dd = np.einsum("ij,ij->i", d, d)
        t = np.clip(-np.einsum("ij,ij->i", q, d) / np.where(dd > 0, dd, 1), 0, 1)
        closest = np.linalg.norm(q + t[:, None] * d, axis=1)
        return (closest > m.support_radius * 1.001) & (np.linalg.norm(d, axis=1) < side / 4)
    return np.zeros(n, dtype=bool)


def refine(m: EndoMap, curve: TorusPolyline, policy: RefinementPolicy) -> TorusPolyline:
    L = curve.lift
    seg = np.linalg.norm(np.diff(L, axis=0), axis=1)
    h = np.full(len(seg), policy.h_max)
    if policy.h_far is not None:
        h = np.where(_affine_segments(m, L), max(policy.h_far, policy.h_max), h)
    k = np.maximum(1, np.ceil(seg / h).astype(np.int64))
    total = int(k.sum()) + 1
    if total > policy.cap:
        raise RefinementOverflow(f"refinement needs {total} vertices, cap {policy.cap}")
    idx = np.repeat(np.arange(len(seg)), k)
    frac = np.arange(total - 1) - np.repeat(np.cumsum(k) - k, k)
    frac = frac / np.repeat(k, k)
    new = L[idx] + frac[:, None] * (L[idx + 1] - L[idx])
    new = np.vstack([new, L[-1:]])
    params = None
    if curve.params is not None:
        p = curve.params
        params = np.concatenate([p[idx] + frac * (p[idx + 1] - p[idx]), p[-1:]])
    return TorusPolyline(new, curve.torus, params)


def map_curve(m: EndoMap, curve: TorusPolyline, policy: RefinementPolicy | None = None) -> TorusPolyline:
    policy = policy or RefinementPolicy.for_map(m)
    c = refine(m, curve, policy)
    V = c.vertices
    X, Y = m.eval_xy(V[:, 0], V[:, 1])
    img = np.column_stack([X, Y])
    d = m.torus.centered(np.diff(img, axis=0))
    if np.any(np.linalg.norm(d, axis=1) >= m.side / 4):
        raise RefinementOverflow("image segment not lift-unambiguous; lower h_max or h_far")
    lift = np.vstack([img[:1], img[:1] + np.cumsum(d, axis=0)])
    return TorusPolyline(lift, m.torus, c.params)


def diameter(curve: TorusPolyline) -> float:
    """Diameter of the lifted vertex set; compare against side/2 for saturation."""
    P = curve.lift
    if len(P) <= 3:
        D = P[:, None, :] - P[None, :, :]
        return float(np.sqrt((D**2).sum(-1)).max())
    try:
        H = P[ConvexHull(P).vertices]
    except QhullError:
        # collinear: extremes along the principal direction
        c = P - P.mean(axis=0)
        _, _, vt = np.linalg.svd(c, full_matrices=False)
        s = c @ vt[0]
        H = P[[int(np.argmin(s)), int(np.argmax(s))]]
    D = H[:, None, :] - H[None, :, :]
    return float(np.sqrt((D**2).sum(-1)).max())


def is_saturated(curve: TorusPolyline) -> bool:
    return diameter(curve) >= curve.torus.side / 2


@dataclass
class GrowthCertificate:
    diameters: list
    lambda_prime: float
    passed: bool
    policy: RefinementPolicy
    factors: list = field(default_factory=list)
    saturated: bool = False
    curve: TorusPolyline | None = field(default=None, repr=False)

    def first_reaching(self, target: float) -> int | None:
        for k, d in enumerate(self.diameters):
            if d >= target:
                return k
        return None

    def rows(self):
        out = [(0, self.diameters[0], float("nan"))]
        for k in range(1, len(self.diameters)):
            f = self.factors[k - 1] if k - 1 < len(self.factors) else float("nan")
            out.append((k, self.diameters[k], f))
        return out


def default_cone(m: EndoMap) -> ConeSpec:
    spec = getattr(m, "cone_spec", None)
    if spec is not None:
        return spec
    lam, _ = m.base.eigenvalues()
    A = m.base.array.astype(float)
    w, V = np.linalg.eig(A)
    v = np.real(V[:, int(np.argmax(np.abs(w)))])
    return ConeSpec(tuple(v), 0.5)


def growth_certify(
    m: EndoMap,
    curve: TorusPolyline,
    lambda_prime: float,
    n: int,
    policy: RefinementPolicy | None = None,
    cone: ConeSpec | None = None,
    stop_at: float | None = None,
) -> GrowthCertificate:
    policy = policy or RefinementPolicy.for_map(m)
    cone = cone or default_cone(m)
    ok, worst = verify_tangent_cone(curve, cone)
    if not ok:
        raise InvalidArgument(f"seed curve leaves the cone (worst chord slope {worst:.3g} vs aperture {cone.a:.3g})")
    half = m.side / 2
    diams = [diameter(curve)]
    factors = []
    saturated = diams[0] >= half
    c = curve
    for _ in range(n):
        if saturated or (stop_at is not None and diams[-1] >= stop_at):
            break
        c = map_curve(m, c, policy)
        d = diameter(c)
        diams.append(d)
        if d >= half:
            saturated = True
            break
        factors.append(d / diams[-2])
    passed = all(f >= lambda_prime - policy.tol for f in factors)
    return GrowthCertificate(diams, lambda_prime, bool(passed), policy, factors, saturated, c)


# ---------------------------------------------------------------------------
# annulus avoidance


@dataclass
class AnnulusReport:
    min_clearance: float
    per_step: list  # min distance to the center after each step
    oracle_radii: list  # inner radius of the linear image annulus
    oracle_ok: bool
    samples: int

    @property
    def passed(self) -> bool:
        return self.min_clearance > 0 and self.oracle_ok


def annulus_avoidance_check(
    m: EndoMap, r: float | None = None, steps: int = 9, samples: int = 10_000, seed: int = 0, center=None
) -> AnnulusReport:
    r = m.params["r"] if r is None else r
    c = np.asarray(center if center is not None else getattr(m, "center", (0.0, 0.0)), dtype=float)
    rng = np.random.default_rng(seed)
    P = m.torus.wrap(annulus_samples(c, 3 * r, 4 * r, samples, rng))
    mu = min(abs(e) for e in m.base.eigenvalues())
    per_step, radii = [], []
    for i in range(1, steps + 1):
        X, Y = m.eval_xy(P[:, 0], P[:, 1])
        P = np.column_stack([X, Y])
        per_step.append(float(torus_distance_xy(P, c, m.side).min()))
        radii.append(3 * r * mu**i)
    # the sample contains inner-boundary points along the weak axis, so the minimum is attained
    oracle_ok = all(d >= rad * (1 - 1e-9) for d, rad in zip(per_step, radii))
    return AnnulusReport(min(per_step) - 3 * r, per_step, radii, bool(oracle_ok), samples)


# ---------------------------------------------------------------------------
# escape points


@dataclass
class EscapeResult:
    point: TorusPoint
    point_mp: tuple = field(repr=False)
    n0: int = 0
    validated: bool = False
    budget: int = 0
    prec: int = 0
    trims: int = 0
    diameters: list = field(default_factory=list, repr=False)
    min_clearance: float = float("nan")


def _mp_mod(v, side):
    return v - side * mpmath.floor(v / side)


def _linear_mp(A, x, y, side):
    return _mp_mod(A.a * x + A.b * y, side), _mp_mod(A.c * x + A.d * y, side)


def _precision_for(m: EndoMap, steps: int) -> int:
    grow = max(abs(m.base.a) + abs(m.base.b), abs(m.base.c) + abs(m.base.d))
    return int(steps * math.log2(max(grow, 2))) + 200


def escape_point(
    m: EndoMap,
    seed: TorusPolyline,
    forbidden_radius: float | None = None,
    budget: int = 10_000,
    r: float | None = None,
    V: tuple | None = None,
) -> EscapeResult:
    """A seed point whose forward orbit stays out of B(center, forbidden_radius) once the tracked piece is long.

    The tracked piece is a straight sub-segment of the seed, carried forward exactly by the base matrix
    (it never meets the forbidden ball, which contains the support of the perturbation). When an image
    meets the ball, the longer remaining part is kept; long pieces are cut back to 20r.
    """
    if not isinstance(m, (EigenBumpMap, LinearMap)):
        raise InvalidArgument("escape_point needs a map that is linear off a single ball")
    r = m.params.get("r") if r is None else r
    if r is None:
        raise InvalidArgument("radius r required")
    R1 = 3 * r if forbidden_radius is None else forbidden_radius
    c = np.asarray(getattr(m, "center", (0.0, 0.0)), dtype=float)
    support = getattr(m, "support_radius", 0.0)
    if support >= R1:
        raise PreconditionViolated("forbidden ball must contain the support of the perturbation")
    side = m.side
    L = seed.lift
    start, stop = L[0], L[-1]
    if V is not None:
        vc, vr = np.asarray(V[0], float), V[1]
        if torus_distance_xy(np.stack([start, stop]), vc, side).max() >= vr:
            raise InvalidArgument("seed curve is not inside V")
    ok, worst = verify_tangent_cone(TorusPolyline(np.stack([start, stop]), seed.torus), default_cone(m))
    if not ok:
        raise InvalidArgument(f"seed chord leaves the cone (slope {worst:.3g})")
    A = m.base
    prec = _precision_for(m, budget)
    R1s = R1 * (1 + 1e-9)
    diams, n0, trims = [], None, 0
    with mpmath.workprec(prec):
        sd = mpmath.mpf(side)
        X = [_mp_mod(mpmath.mpf(float(start[0])), sd), _mp_mod(mpmath.mpf(float(start[1])), sd)]
        D = [mpmath.mpf(float(stop[0] - start[0])), mpmath.mpf(float(stop[1] - start[1]))]
        s, t = mpmath.mpf(0), mpmath.mpf(1)
        cx, cy = mpmath.mpf(float(c[0])), mpmath.mpf(float(c[1]))
        for k in range(budget + 1):
            ax, ay = X[0] + s * D[0] - cx, X[1] + s * D[1] - cy
            bx, by = X[0] + t * D[0] - cx, X[1] + t * D[1] - cy
            kx = mpmath.nint((ax + bx) / (2 * sd))
            ky = mpmath.nint((ay + by) / (2 * sd))
            qa = np.array([float(ax - kx * sd), float(ay - ky * sd)])
            qb = np.array([float(bx - kx * sd), float(by - ky * sd)])
            d = qb - qa
            length = float(np.hypot(*d))
            tt = np.clip(-(qa @ d) / (d @ d), 0.0, 1.0)
            if np.hypot(*(qa + tt * d)) < R1s:
                # roots of |qa + tau d| = R1s
                A2, B2, C2 = d @ d, 2 * (qa @ d), qa @ qa - R1s**2
                disc = max(B2 * B2 - 4 * A2 * C2, 0.0)
                t1, t2 = (-B2 - math.sqrt(disc)) / (2 * A2), (-B2 + math.sqrt(disc)) / (2 * A2)
                left = max(t1, 0.0) * (1 - 1e-9)
                right = min(t2, 1.0)
                right = right + (1 - right) * 1e-9
                if left >= 1 - right:
                    lo, hi = 0.0, left
                else:
                    lo, hi = right, 1.0
                piece = (hi - lo) * length
                if piece <= 0 or (n0 is not None and piece < r):
                    raise GrowthViolated(f"step {k}: piece outside the forbidden ball has length {piece:.3g} < r")
                s, t = s + lo * (t - s), s + hi * (t - s)
                length = piece
                trims += 1
            if length > 40 * r:
                f = 10 * r / length
                s, t = s + (0.5 - f) * (t - s), s + (0.5 + f) * (t - s)
                length = 20 * r
            diams.append(length)
            if n0 is None and length >= 10 * r:
                n0 = k
            if k == budget:
                break
            X = list(_linear_mp(A, X[0], X[1], sd))
            D = [A.a * D[0] + A.b * D[1], A.c * D[0] + A.d * D[1]]
        if n0 is None:
            raise GrowthViolated(f"piece never reached diameter 10r within {budget} steps")
        mid = (s + t) / 2
        y = (_mp_mod(mpmath.mpf(float(start[0])) + mid * mpmath.mpf(float(stop[0] - start[0])), sd),
             _mp_mod(mpmath.mpf(float(start[1])) + mid * mpmath.mpf(float(stop[1] - start[1])), sd))
    res = EscapeResult(TorusPoint(float(y[0]) % side, float(y[1]) % side, m.torus), y, n0, False, budget, prec, trims, diams)
    if budget > 0:
        clear = validate_avoidance(m, y, c, R1, n0, budget, prec)
        res.validated = True
        res.min_clearance = clear
    return res


def mp_orbit(m: EndoMap, p, steps: int, prec: int):
    """Orbit of p in mpmath; linear steps off the support ball, full evaluation near it."""
    A, side = m.base, m.side
    c = np.asarray(getattr(m, "center", (0.0, 0.0)), dtype=float)
    R = getattr(m, "support_radius", 0.0)
    with mpmath.workprec(prec):
        sd = mpmath.mpf(side)
        x, y = mpmath.mpf(p[0]), mpmath.mpf(p[1])
        out = [(x, y)]
        for _ in range(steps):
            q = np.array([float(x), float(y)])
            if R > 0 and torus_distance_xy(q, c, side) < R * 1.01 + 1e-12:
                x, y = m.eval_mp(x, y)
                x, y = _mp_mod(x, sd), _mp_mod(y, sd)
            else:
                x, y = _linear_mp(A, x, y, sd)
            out.append((x, y))
    return out


def validate_avoidance(m: EndoMap, y, c, radius: float, n0: int, budget: int, prec: int) -> float:
    """Forward-iterate y and check it avoids B(c, radius) for n0 <= n <= budget; returns min clearance."""
    orbit = mp_orbit(m, y, budget, prec)
    P = np.array([[float(a), float(b)] for a, b in orbit[n0:]])
    dist = torus_distance_xy(P, np.asarray(c, float), m.side)
    bad = np.nonzero(dist <= radius)[0]
    if len(bad):
        raise EscapeInvalid(f"orbit enters the forbidden ball at step {n0 + int(bad[0])}", n0 + int(bad[0]))
    return float(dist.min() - radius)


# ---------------------------------------------------------------------------
# internal radius


@dataclass
class RadiusGrowth:
    n_nu: int
    budget: int
    pullback_radii: np.ndarray = field(repr=False)


def internal_radius_growth(m: EndoMap, y, V: tuple, r: float, budget: int = 100, forbidden_radius: float | None = None, prec: int | None = None) -> RadiusGrowth:
    """First n_nu with B(g^n y, r) inside g^n(V) for all n in [n_nu, budget].

    The ball is pulled back along the orbit of y. Off the support ball every inverse step is the linear
    inverse branch, so the pullback of B(g^n y, r) is y + A^{-n} B(0, r); it lies in V as soon as
    |y - v| + r ||A^{-n}|| < radius(V). The orbit must keep distance > support + r from the support center.
    """
    vc, vr = np.asarray(V[0], float), float(V[1])
    yf = np.array([float(y[0]), float(y[1])])
    if torus_distance_xy(yf, vc, m.side) >= vr:
        raise InvalidArgument("y is not inside V")
    c = np.asarray(getattr(m, "center", (0.0, 0.0)), dtype=float)
    R = getattr(m, "support_radius", 0.0)
    guard = R + r if forbidden_radius is None else max(forbidden_radius, R + r)
    if R > 0:
        prec = prec or _precision_for(m, budget)
        orbit = mp_orbit(m, y, budget, prec)
        P = np.array([[float(a), float(b)] for a, b in orbit])
        dist = torus_distance_xy(P, c, m.side)
        bad = np.nonzero(dist <= guard)[0]
        if len(bad):
            raise PreconditionViolated(f"orbit enters B(center, {guard:.3g}) at step {int(bad[0])}")
    Ainv = np.linalg.inv(m.base.array.astype(float))
    gap = vr - float(torus_distance_xy(yf, vc, m.side))
    radii = np.empty(budget + 1)
    M = np.eye(2)
    for n in range(budget + 1):
        radii[n] = r * np.linalg.norm(M, 2)
        M = Ainv @ M
    good = radii < gap
    if not good[-1]:
        raise NoGrowth(f"pullback of B(g^n y, r) still has radius {radii[-1]:.3g} >= {gap:.3g} at n = {budget}")
    bad = np.nonzero(~good)[0]
    n_nu = 0 if len(bad) == 0 else int(bad[-1]) + 1
    return RadiusGrowth(n_nu, budget, radii)
