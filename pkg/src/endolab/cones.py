"""Constant-aperture cone fields: parameter choice and grid verification with Lipschitz budgets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .maps import CriticalFrame, EndoMap, perturb
from .profiles import BumpPhi, BumpPsi
from .torus import InvalidArgument, torus_distance_xy


class InfeasibleParameters(ValueError):
    pass


class NoMargin(ValueError):
    pass


@dataclass(frozen=True)
class ConeSpec:
    w: tuple[float, float]
    a: float
    sense: str = "unstable"

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidArgument("cone aperture must be positive")
        n = math.hypot(*self.w)
        if abs(n - 1) > 1e-12:
            object.__setattr__(self, "w", (self.w[0] / n, self.w[1] / n))
        if self.sense not in ("unstable", "stable"):
            raise InvalidArgument(f"unknown cone sense {self.sense!r}")

    @property
    def w_perp(self):
        return (-self.w[1], self.w[0])

    @property
    def frame(self) -> np.ndarray:
        return np.column_stack([self.w, self.w_perp])

    def coords(self, v):
        """Components of v (..., 2) along w and w_perp."""
        v = np.asarray(v, dtype=float)
        return v @ np.asarray(self.w), v @ np.asarray(self.w_perp)

    def slope(self, v):
        c1, c2 = self.coords(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(c2) / np.abs(c1)

    def contains(self, v) -> np.ndarray:
        return self.slope(v) < self.a

    def rays(self, n: int = 2) -> np.ndarray:
        """Unit vectors with cone slopes spread over [-a, a]; n=2 gives the two boundary rays."""
        s = np.linspace(-self.a, self.a, n)
        v = np.outer(np.ones(n), self.w) + np.outer(s, self.w_perp)
        return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class ConeParams:
    a0: float
    delta0: float
    lambda_prime: float
    mu1: float | None
    M_psi: float
    Lambda: float
    slack: float
    halvings: int = 0


@dataclass
class VerificationReport:
    resolution: int
    inv_margin: float | None = None
    exp_ratio: float | None = None
    lambda_prime: float | None = None
    worst_point: tuple | None = None
    lipschitz_budget: float = 0.0
    jac_norm: float = 0.0
    a0: float = 0.0
    skipped: int = 0
    linear_deviation: float | None = None
    samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def exp_margin(self):
        if self.exp_ratio is None:
            return None
        return self.exp_ratio - self.lambda_prime

    @property
    def passed(self) -> bool:
        ok = True
        if self.inv_margin is not None:
            ok &= self.inv_margin > 0
        if self.exp_ratio is not None:
            ok &= self.exp_margin > 0
        return bool(ok)


# ---------------------------------------------------------------------------
# parameter choice


def _phi_slope_range(phi_template: BumpPhi | None):
    t = phi_template or BumpPhi(1.0)
    lo, hi = BumpPhi(1.0, 0.0, 1.0, t.kind, t.peak_width).slope_range()
    return lo, hi


def effective_vertical_rate(mu: float, height: float, phi_template: BumpPhi | None = None) -> float:
    """max |mu - H phi'| over the support, with phi' normalised to 1 at the midpoint."""
    lo, hi = _phi_slope_range(phi_template)
    return max(abs(mu), abs(mu - height * hi), abs(mu - height * lo))


def choose_unstable_params(
    lam: float,
    mu: float,
    psi: BumpPsi,
    a: float,
    lambda_prime: float,
    delta_request: float | None = None,
    phi_template: BumpPhi | None = None,
    mu1: float | None = None,
    grid: int = 256,
) -> ConeParams:
    lam_abs = abs(lam)
    if not lam_abs > abs(mu):
        raise InvalidArgument("need |lambda| > |mu|")
    if not lambda_prime < lam_abs:
        raise InvalidArgument("need lambda' < |lambda|")
    if abs(mu) > 1 and lambda_prime < math.sqrt(2):
        raise InvalidArgument("expanding case needs lambda' >= sqrt(2)")
    if lambda_prime <= 1:
        raise InvalidArgument("need lambda' > 1")
    Lam = effective_vertical_rate(mu, psi.height, phi_template)
    if Lam >= lam_abs:
        raise InfeasibleParameters(f"bump vertical rate {Lam:.4g} is not dominated by |lambda| = {lam_abs}")
    a0 = a / 2
    M = psi.max_slope()
    delta0 = 0.5 * a0 * (lam_abs - Lam) / M
    if delta_request is not None:
        delta0 = min(delta0, delta_request)
    kind = phi_template.kind if phi_template else "peaked"
    pw = phi_template.peak_width if phi_template else 0.05
    halvings = 0
    while delta0 > 1e-300:
        phi = BumpPhi(delta0, 0.0, 1.0, kind, pw)
        x = psi.center + psi.theta * np.linspace(-1, 1, grid)
        y = np.linspace(0, delta0, grid)
        X, Y = np.meshgrid(x, y, indexing="ij")
        p1 = -psi.deriv(X) * phi(Y)
        p2 = mu - psi(X) * phi.deriv(Y)
        worst = np.inf
        for s in (-a0, a0):
            r2 = (lam**2 + (p1 + p2 * s) ** 2) / (lambda_prime**2 * (1 + s * s))
            worst = min(worst, float(r2.min()))
        if worst > 1:
            break
        delta0 /= 2
        halvings += 1
    else:
        raise InfeasibleParameters("no delta0 satisfies the expansion bound; lambda' too close to |lambda|")
    headroom = a0 - abs(mu) * a0 / lam_abs
    used = M * delta0 / lam_abs
    slack = 1 - used / headroom
    return ConeParams(a0, delta0, lambda_prime, mu1, M, Lam, slack, halvings)


def cone_inequality_lhs(p: ConeParams, lam: float, mu: float) -> float:
    return p.M_psi * p.delta0 / abs(lam) + abs(mu) * p.a0 / abs(lam)


# ---------------------------------------------------------------------------
# grids


def _frame_grid(fr: CriticalFrame, n: int):
    u = np.linspace(*fr.u_range, n)
    v = np.linspace(*fr.v_range, n)
    U, V = np.meshgrid(u, v, indexing="ij")
    return fr.to_xy(U, V)


def support_frames(m: EndoMap) -> list[CriticalFrame]:
    frames = list(m.critical_frames())
    extra = getattr(m, "cone_frames", None)
    if callable(extra):
        frames += extra()
    base = getattr(m, "base_map", None)
    if base is not None and callable(getattr(base, "cone_frames", None)):
        frames += base.cone_frames()
    return frames


def _grids(m: EndoMap, resolution: int, global_resolution: int):
    s = m.side
    out = []
    for fr in support_frames(m):
        X, Y = _frame_grid(fr, resolution)
        out.append((m.torus.wrap(X), m.torus.wrap(Y)))
    g = (np.arange(global_resolution) + 0.5) / global_resolution * s
    X, Y = np.meshgrid(g, g, indexing="ij")
    out.append((X, Y))
    return out


def _neighbor_budget(F: np.ndarray) -> float:
    b = 0.0
    if F.shape[0] > 1:
        b = max(b, float(np.nanmax(np.abs(np.diff(F, axis=0)))))
    if F.shape[1] > 1:
        b = max(b, float(np.nanmax(np.abs(np.diff(F, axis=1)))))
    return b


def _sweep(m: EndoMap, cone: ConeSpec, resolution: int, global_resolution: int, fn):
    worst_val, worst_pt, budget, jn = np.inf, None, 0.0, 0.0
    samples = []
    for X, Y in _grids(m, resolution, global_resolution):
        J = m.jac_xy(X, Y)
        val = fn(J)
        jn = max(jn, float(np.max(np.linalg.norm(J, ord=2, axis=(-2, -1)))))
        k = np.unravel_index(int(np.nanargmin(val)), val.shape)
        if val[k] < worst_val:
            worst_val, worst_pt = float(val[k]), (float(X[k]), float(Y[k]))
        budget = max(budget, _neighbor_budget(val))
        stride = max(1, X.shape[0] // 64)
        samples.append(np.column_stack([X[::stride, ::stride].ravel(), Y[::stride, ::stride].ravel(), val[::stride, ::stride].ravel()]))
    return worst_val, worst_pt, budget, jn, np.vstack(samples)


def _inv_margin_fn(cone: ConeSpec):
    W = cone.frame
    rays_c = np.array([[1.0, cone.a], [1.0, -cone.a]])

    def fn(J):
        Jc = np.einsum("ji,...jk,kl->...il", W, J, W)
        out = np.full(J.shape[:-2], np.inf)
        for v in rays_c:
            img = Jc @ v
            with np.errstate(divide="ignore", invalid="ignore"):
                sl = np.where(img[..., 0] != 0, np.abs(img[..., 1]) / np.abs(img[..., 0]), np.inf)
            out = np.minimum(out, cone.a - sl)
        return out

    return fn


def _exp_ratio_fn(cone: ConeSpec, ndir: int = 16):
    rays = cone.rays(ndir)

    def fn(J):
        out = np.full(J.shape[:-2], np.inf)
        for v in rays:
            out = np.minimum(out, np.linalg.norm(J @ v, axis=-1))
        return out

    return fn


def verify_cone_invariance(m: EndoMap, cone: ConeSpec, resolution: int = 1024, global_resolution: int = 256) -> VerificationReport:
    if cone.sense != "unstable":
        raise InvalidArgument("invariance sweep is for unstable cones")
    val, pt, budget, jn, samples = _sweep(m, cone, resolution, global_resolution, _inv_margin_fn(cone))
    return VerificationReport(resolution, inv_margin=val - budget, worst_point=pt, lipschitz_budget=budget, jac_norm=jn, a0=cone.a, samples=samples)


def verify_expansion(m: EndoMap, cone: ConeSpec, lambda_prime: float, resolution: int = 1024, global_resolution: int = 256) -> VerificationReport:
    val, pt, budget, jn, samples = _sweep(m, cone, resolution, global_resolution, _exp_ratio_fn(cone))
    return VerificationReport(
        resolution, exp_ratio=val - budget, lambda_prime=lambda_prime, worst_point=pt, lipschitz_budget=budget, jac_norm=jn, a0=cone.a, samples=samples
    )


def verify_unstable(m: EndoMap, cone: ConeSpec, lambda_prime: float, resolution: int = 1024, global_resolution: int = 256) -> VerificationReport:
    """Invariance and expansion in one sweep; samples columns are x, y, inv_margin, exp_ratio."""
    inv = verify_cone_invariance(m, cone, resolution, global_resolution)
    exp = verify_expansion(m, cone, lambda_prime, resolution, global_resolution)
    rep = VerificationReport(
        resolution,
        inv_margin=inv.inv_margin,
        exp_ratio=exp.exp_ratio,
        lambda_prime=lambda_prime,
        worst_point=inv.worst_point if inv.inv_margin <= exp.exp_margin else exp.worst_point,
        lipschitz_budget=max(inv.lipschitz_budget, exp.lipschitz_budget),
        jac_norm=inv.jac_norm,
        a0=cone.a,
    )
    rep.samples = np.column_stack([inv.samples, exp.samples[:, 2]])
    return rep


def verify_stable_cones(m: EndoMap, cone: ConeSpec, mu1: float, resolution: int = 256, ndir: int = 16) -> VerificationReport:
    """Inverse-branch cone checks at grid points q, on preimages outside the support ball."""
    if cone.sense != "stable":
        raise InvalidArgument("stable cone expected")
    if not 0 < mu1 < 1:
        raise InvalidArgument("mu1 must lie in (0, 1)")
    s = m.side
    g = (np.arange(resolution) + 0.5) / resolution * s
    X, Y = np.meshgrid(g, g, indexing="ij")
    Q = np.column_stack([X.ravel(), Y.ravel()])
    Ainv = np.linalg.inv(m.base.array)
    from .maps import coset_representatives

    reps = coset_representatives(m.base)
    center = getattr(m, "center", None)
    radius = getattr(m, "support_radius", 0.0)
    W = cone.frame
    rays = cone.rays(ndir)
    bnd = cone.rays(2)
    inv_worst, exp_worst, skipped, dev = np.inf, np.inf, 0, 0.0
    worst_pt = None
    for k in reps:
        P = m.torus.wrap((Ainv @ (Q.T + s * k[:, None])).T)
        if center is not None:
            keep = torus_distance_xy(P, center, s) >= radius
            skipped += int((~keep).sum())
            P = P[keep]
        J = m.jac_xy(P[:, 0], P[:, 1])
        Jinv = np.linalg.inv(J)
        dev = max(dev, float(np.max(np.abs(Jinv - Ainv))))
        inv_m = np.full(len(P), np.inf)
        for v in bnd:
            img = Jinv @ v
            c1, c2 = img @ W[:, 0], img @ W[:, 1]
            inv_m = np.minimum(inv_m, cone.a - np.abs(c2) / np.abs(c1))
        grow = np.full(len(P), np.inf)
        for v in rays:
            grow = np.minimum(grow, np.linalg.norm(Jinv @ v, axis=-1))
        i = int(np.argmin(inv_m))
        if inv_m[i] < inv_worst:
            inv_worst, worst_pt = float(inv_m[i]), tuple(P[i])
        exp_worst = min(exp_worst, float(grow.min()))
    return VerificationReport(
        resolution,
        inv_margin=inv_worst,
        exp_ratio=exp_worst,
        lambda_prime=1 / mu1,
        worst_point=worst_pt,
        a0=cone.a,
        skipped=skipped,
        linear_deviation=dev,
    )


@dataclass
class RobustnessResult:
    rho: float
    trials: list
    passed_trials: int


def robustness_margin(report: VerificationReport, m: EndoMap | None = None, cone: ConeSpec | None = None, trials: int = 8, seed: int = 0, resolution: int | None = None, global_resolution: int = 256):
    """rho = min(margins) / (2 (1 + a0 + |Df|)); optionally re-verify `trials` perturbed maps at size rho/2."""
    if not report.passed:
        raise NoMargin("report did not pass; no robustness margin")
    margins = [x for x in (report.inv_margin, report.exp_margin) if x is not None]
    rho = min(margins) / (2 * (1 + report.a0 + report.jac_norm))
    results = []
    if m is not None and cone is not None and trials > 0:
        res = resolution or report.resolution
        for t in range(trials):
            g = perturb(m, rho / 2, seed=seed + t)
            r = verify_unstable(g, cone, report.lambda_prime, res, global_resolution)
            results.append(r)
    return RobustnessResult(rho, results, sum(r.passed for r in results))


# ---------------------------------------------------------------------------
# lattice directions


def is_irrational_direction(w, depth: int = 20, tol: float = 1e-12) -> bool:
    """Continued-fraction test: a rational slope terminates within `depth` terms."""
    w1, w2 = float(w[0]), float(w[1])
    if abs(w1) < tol or abs(w2) < tol:
        return False
    x = abs(w2 / w1)
    for _ in range(depth):
        frac = x - math.floor(x)
        if frac < tol or frac > 1 - tol:
            return False
        x = 1 / frac
    return True


def nearest_lattice_direction(w, max_norm: float):
    """Smallest angle between w and a primitive lattice direction of norm <= max_norm."""
    ang_w = math.atan2(w[1], w[0]) % math.pi
    best, best_k = math.pi, None
    n = int(math.floor(max_norm))
    for q in range(0, n + 1):
        for p in range(-n, n + 1):
            if (q, p) == (0, 0) or math.gcd(q, abs(p)) != 1 or math.hypot(q, p) > max_norm:
                continue
            d = abs(math.atan2(p, q) % math.pi - ang_w)
            d = min(d, math.pi - d)
            if d < best:
                best, best_k = d, (q, p)
    return best, best_k


def cone_gap_aperture(w, w1, eps: float, a0: float | None = None) -> tuple[float, dict]:
    """Aperture a1 keeping u-cones around w clear of every lattice direction whose closed geodesics
    leave gaps wider than ~eps, and disjoint from s-cones around w1."""
    if not is_irrational_direction(w):
        raise InvalidArgument(f"direction {tuple(w)} is rational")
    n_max = math.ceil(1 / (0.9 * eps))
    gap, k = nearest_lattice_direction(w, n_max)
    ang = abs(math.atan2(w[1], w[0]) - math.atan2(w1[1], w1[0])) % math.pi
    ang = min(ang, math.pi - ang)
    if ang < 1e-9:
        raise InvalidArgument("w and w1 are parallel")
    a1 = min(math.tan(gap / 2), math.tan(ang / 2))
    if a0 is not None:
        a1 = min(a1, 0.99 * a0)
    return a1, {"nearest_lattice_direction": k, "angle_to_lattice": gap, "angle_w_w1": ang, "max_norm": n_max}
