"""Fold and cusp normal forms, numeric critical-point classification, fold flattening and ball collapse."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .maps import EndoMap, fixed_points
from .profiles import FoldCutoff, RadialCutoff
from .torus import InvalidArgument, IntMatrix2, Torus, TorusPoint, torus_distance_xy


class DeltaSearchError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# planar maps


class PlanarMap:
    """A smooth map of (a box in) the plane given by value and Jacobian callables."""

    kind = "planar"

    def __init__(self, f, df, name: str = ""):
        self._f, self._df = f, df
        self.name = name or self.kind

    def eval(self, x, y):
        return self._f(np.asarray(x, float), np.asarray(y, float))

    def jac(self, x, y):
        return self._df(np.asarray(x, float), np.asarray(y, float))

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


def _stack_jac(a, b, c, d):
    a, b, c, d = np.broadcast_arrays(a, b, c, d)
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)


class NormalFormMap(PlanarMap):
    def __init__(self, kind: str, box=((-1.0, 1.0), (-1.0, 1.0))):
        if kind not in ("fold", "cusp"):
            raise InvalidArgument("kind must be 'fold' or 'cusp'")
        self.kind, self.box = kind, box
        self.name = kind

    def eval(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        if self.kind == "fold":
            return x, y * y
        return x, -x * y + y**3

    def jac(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        zero, one = np.zeros_like(x * y), np.ones_like(x * y)
        if self.kind == "fold":
            return _stack_jac(one, zero, zero, 2 * y + zero)
        return _stack_jac(one, zero, -y + zero, -x + 3 * y * y)


def quadratic_model() -> PlanarMap:
    """f(x, y) = (x^2 + y^2, xy): both partial derivatives vanish at the origin."""
    return PlanarMap(
        lambda x, y: (x * x + y * y, x * y),
        lambda x, y: _stack_jac(2 * x, 2 * y, y + 0 * x, x + 0 * y),
        "quadratic",
    )


def _eval(m, x, y):
    return m.eval_xy(x, y) if isinstance(m, EndoMap) else m.eval(x, y)


def _jac(m, x, y):
    return m.jac_xy(x, y) if isinstance(m, EndoMap) else m.jac(x, y)


def _det(m, x, y):
    J = _jac(m, x, y)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


# ---------------------------------------------------------------------------
# classification


@dataclass
class CriticalPointClass:
    cls: str  # fold | cusp | degenerate
    det_grad_norm: float
    angle: float
    kernel: np.ndarray = field(repr=False)
    tangent: np.ndarray = field(repr=False)
    contact: float = float("nan")


def classify_critical_point(m, p, tol: float = 1e-6, angle_tol: float = 1e-3, h: float = 1e-6) -> CriticalPointClass:
    """Fold when the kernel of Df is transverse to the critical curve, cusp at a first-order tangency."""
    x, y = (p.x, p.y) if isinstance(p, TorusPoint) else (float(p[0]), float(p[1]))
    X, Y = np.array([x]), np.array([y])
    if abs(_det(m, X, Y)[0]) >= tol:
        raise InvalidArgument(f"point {(x, y)} is not critical (det {_det(m, X, Y)[0]:.3g})")

    def grad(px, py):
        gx = (_det(m, px + h, py) - _det(m, px - h, py)) / (2 * h)
        gy = (_det(m, px, py + h) - _det(m, px, py - h)) / (2 * h)
        return np.stack([gx, gy], -1)

    def kernel(px, py):
        _, _, Vt = np.linalg.svd(_jac(m, px, py))
        return Vt[..., -1, :]

    g = grad(X, Y)[0]
    gn = float(np.linalg.norm(g))
    k = kernel(X, Y)[0]
    if gn < tol:
        return CriticalPointClass("degenerate", gn, float("nan"), k, np.full(2, np.nan))
    t = np.array([-g[1], g[0]]) / gn
    angle = float(np.arccos(min(1.0, abs(float(k @ t)))))
    if angle > angle_tol:
        return CriticalPointClass("fold", gn, angle, k, t)
    # cusp: the pairing of the kernel with grad det must change at first order along the curve
    s = 1e-3
    P = np.array([x, y]) + np.outer([-s, s], t)
    G, K = grad(P[:, 0], P[:, 1]), kernel(P[:, 0], P[:, 1])
    K *= np.sign(K @ k)[:, None]
    pair = np.einsum("ij,ij->i", G, K)
    contact = float((pair[1] - pair[0]) / (2 * s))
    cls = "cusp" if abs(contact) > tol else "degenerate"
    return CriticalPointClass(cls, gn, angle, k, t, contact)


# ---------------------------------------------------------------------------
# C1 distance


def c1_distance(m1, m2, chart=((-1.0, 1.0), (-1.0, 1.0)), resolution: int = 100) -> float:
    """Max over a chart grid of value distance plus entrywise max Jacobian distance."""
    (x0, x1), (y0, y1) = chart
    gx, gy = np.meshgrid(np.linspace(x0, x1, resolution), np.linspace(y0, y1, resolution), indexing="ij")
    x, y = gx.ravel(), gy.ravel()
    A, B = _eval(m1, x, y), _eval(m2, x, y)
    dv = np.column_stack([A[0] - B[0], A[1] - B[1]])
    side = next((m.side for m in (m1, m2) if isinstance(m, EndoMap)), None)
    if side is not None:
        dv = (dv + side / 2) % side - side / 2
    dj = np.abs(_jac(m1, x, y) - _jac(m2, x, y)).reshape(len(x), 4).max(axis=1)
    return float((np.linalg.norm(dv, axis=1) + dj).max())


# ---------------------------------------------------------------------------
# fold flattening


class FlattenedFoldMap(PlanarMap):
    kind = "flattened-fold"

    def __init__(self, delta: float, cutoff: FoldCutoff | None = None, box=((-1.0, 1.0), (-1.0, 1.0))):
        self.delta = delta
        self.cutoff = cutoff or FoldCutoff(delta)
        self.box = box
        self.name = self.kind

    def eval(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return x + 0 * y, self.cutoff(y) * y * y + 0 * x

    def jac(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        c, dc = self.cutoff(y), self.cutoff.deriv(y)
        zero = np.zeros_like(x * y)
        return _stack_jac(1 + zero, zero, zero, dc * y * y + 2 * c * y + zero)


@dataclass
class FlattenCertificate:
    eps: float
    delta: float
    inequalities: bool  # 4 delta < eps and delta^2 < eps
    c0_distance: float
    c1_distance: float
    derivative_bound: float
    det_zero_on_ball: bool
    samples: int

    @property
    def passed(self) -> bool:
        return self.inequalities and self.c1_distance < self.eps and self.det_zero_on_ball


def flatten_fold(eps: float, resolution: int = 100, samples: int = 1000, seed: int = 0):
    if eps <= 0:
        raise InvalidArgument("eps must be positive")
    delta = min(eps / 5, math.sqrt(eps / 2))
    g = FlattenedFoldMap(delta)
    f = NormalFormMap("fold")
    chart = ((-1.0, 1.0), (-2 * delta, 2 * delta))
    gx, gy = np.meshgrid(np.linspace(-1, 1, resolution), np.linspace(-2 * delta, 2 * delta, resolution), indexing="ij")
    c0 = float(np.abs(g.eval(gx, gy)[1] - f.eval(gx, gy)[1]).max())
    c1 = c1_distance(g, f, chart, resolution)
    rng = np.random.default_rng(seed)
    rad = 0.5 * delta * np.sqrt(rng.uniform(0, 1, samples))
    ang = rng.uniform(0, 2 * np.pi, samples)
    px, py = rad * np.cos(ang), rad * np.sin(ang)
    J = g.jac(px, py)
    det_zero = bool(np.all(J[:, 1, :] == 0.0) and np.all(_det(g, px, py) == 0.0))
    bound = 4 * delta * (1 + g.cutoff.slope_excess) + delta**2
    cert = FlattenCertificate(eps, delta, 4 * delta < eps and delta**2 < eps, c0, c1, bound, det_zero, samples)
    return g, cert


# ---------------------------------------------------------------------------
# ball collapse


class CollapseMap(PlanarMap):
    """g = f(0) + phi(x^2 + y^2) (f - f(0)): equal to f off B(0, delta), constant on B(0, delta/2)."""

    kind = "collapse"

    def __init__(self, f: PlanarMap, delta: float, cutoff: RadialCutoff | None = None):
        self.f, self.delta = f, delta
        self.cutoff = cutoff or RadialCutoff(delta)
        f0 = f.eval(np.zeros(1), np.zeros(1))
        self.f0 = np.array([float(f0[0][0]), float(f0[1][0])])
        self.name = f"collapse({f.name})"

    def eval(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        F = self.f.eval(x, y)
        w = self.cutoff(x * x + y * y)
        return self.f0[0] + w * (F[0] - self.f0[0]), self.f0[1] + w * (F[1] - self.f0[1])

    def jac(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        F, J = self.f.eval(x, y), self.f.jac(x, y)
        s = x * x + y * y
        w, dw = self.cutoff(s), self.cutoff.deriv(s)
        D = np.stack([F[0] - self.f0[0], F[1] - self.f0[1]], -1)
        grad_w = np.stack([2 * x * dw, 2 * y * dw], -1)
        return w[..., None, None] * J + D[..., :, None] * grad_w[..., None, :]


class TorusCollapseMap(EndoMap):
    """Collapse of a torus map on a small ball around `center`."""

    variant = "collapse"

    def __init__(self, base_map: EndoMap, center, delta: float, cutoff: RadialCutoff | None = None):
        super().__init__(base_map.base, base_map.torus, f"collapse({base_map.name})")
        self.base_map = base_map
        self.center = np.mod(np.asarray(center, float), base_map.side)
        self.delta = delta
        self.cutoff = cutoff or RadialCutoff(delta)
        F0 = base_map.eval_xy(self.center[:1], self.center[1:])
        self.f0 = np.array([float(F0[0][0]), float(F0[1][0])])

    def _parts(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        dx, dy = self.torus.centered(x - self.center[0]), self.torus.centered(y - self.center[1])
        F = self.base_map.eval_xy(x, y)
        D = np.stack([self.torus.centered(F[0] - self.f0[0]), self.torus.centered(F[1] - self.f0[1])], -1)
        return dx, dy, D

    def eval_xy(self, x, y):
        dx, dy, D = self._parts(x, y)
        w = self.cutoff(dx * dx + dy * dy)
        return self.torus.wrap(self.f0[0] + w * D[..., 0]), self.torus.wrap(self.f0[1] + w * D[..., 1])

    def jac_xy(self, x, y):
        dx, dy, D = self._parts(x, y)
        s = dx * dx + dy * dy
        w, dw = self.cutoff(s), self.cutoff.deriv(s)
        J = self.base_map.jac_xy(np.asarray(x, float), np.asarray(y, float))
        grad_w = np.stack([2 * dx * dw, 2 * dy * dw], -1)
        return w[..., None, None] * J + D[..., :, None] * grad_w[..., None, :]


@dataclass
class CollapseCertificate:
    eps: float
    delta: float
    value_spread: float  # sup |f - f(0)| on B(0, delta)
    partial_max: float  # sup |partial f_i| on B(0, delta)
    image_diameter: float
    c1_distance: float
    transitivity_status: str
    torus_delta: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.image_diameter < 1e-12 and self.c1_distance < self.eps and self.transitivity_status != "pass"


def _disk_samples(delta, n, rng):
    rad = delta * np.sqrt(rng.uniform(0, 1, n))
    ang = rng.uniform(0, 2 * np.pi, n)
    return rad * np.cos(ang), rad * np.sin(ang)


def collapse_counterexample(f: PlanarMap | None = None, eps: float = 0.1, torus_map: EndoMap | None = None, samples: int = 4000, seed: int = 0, budget: int = 60):
    """Build the collapse map and its certificate.

    delta is halved from eps/2 until f(B(0, delta)) lies in B(f(0), eps/5) and the partials of f are below
    eps/5 on the ball. The non-transitivity witness runs on a torus map collapsed around one of its fixed
    points off the perturbation support.
    """
    from .transitivity import transitivity_experiment

    f = f or quadratic_model()
    rng = np.random.default_rng(seed)
    delta = eps / 2
    while True:
        if delta < 1e-8:
            raise DeltaSearchError("no admissible delta above 1e-8")
        x, y = _disk_samples(delta, samples, rng)
        x, y = np.append(x, delta * np.cos(np.linspace(0, 2 * np.pi, 256))), np.append(y, delta * np.sin(np.linspace(0, 2 * np.pi, 256)))
        F = f.eval(x, y)
        f0 = f.eval(np.zeros(1), np.zeros(1))
        spread = float(np.hypot(F[0] - f0[0][0], F[1] - f0[1][0]).max())
        partial = float(np.abs(f.jac(x, y)).max())
        if spread < eps / 5 and partial < eps / 5:
            break
        delta /= 2
    g = CollapseMap(f, delta)
    x, y = _disk_samples(delta / 2, samples, rng)
    G = g.eval(x, y)
    diam = float(max(np.ptp(G[0]), np.ptp(G[1])))
    c1 = c1_distance(g, f, ((-2 * delta, 2 * delta), (-2 * delta, 2 * delta)), 101)

    if torus_map is None:
        from .families import canonical

        torus_map = canonical("expanding-3-2")
    fp = _far_fixed_point(torus_map)
    tdelta = min(delta, 0.05)
    tg = TorusCollapseMap(torus_map, fp, tdelta)
    side = torus_map.side
    V1 = (tuple(fp), tdelta / 4)
    V2 = (tuple(np.mod(fp + side * np.array([0.5, 0.5]) + 0.0123, side)), 1e-3)
    res = transitivity_experiment(tg, V1, V2, budget=budget, samples=1024)
    cert = CollapseCertificate(eps, delta, spread, partial, diam, c1, res.status, tdelta, {"fixed_point": tuple(fp), "V2": V2[0], "route": res.route})
    return g, cert


def _far_fixed_point(m: EndoMap) -> np.ndarray:
    """A fixed point of m far from the perturbation support."""
    c = np.asarray(getattr(m, "center", m.params.get("center", (0.0, 0.0))), float)
    best, best_d = None, -1.0
    for fp in fixed_points(m):
        d = float(torus_distance_xy(fp.point.xy, c, m.side))
        if d > best_d:
            best, best_d = fp.point.xy, d
    if best is None:
        raise DeltaSearchError("map has no fixed point to collapse around")
    return np.asarray(best, float)


# ---------------------------------------------------------------------------
# interior critical set inside an expanding map


class FlattenedChartMap(EndoMap):
    """The linear map A with its second coordinate flattened on a chart around z_c.

    In chart coordinates (u, v) = p - z_c the second image coordinate is (A p)_2 scaled by
    1 - w(u) (1 - c(v)), where c is the fold cutoff in v and w a collar weight in u. On |u| <= a,
    |v| <= delta/2 the second row of Df vanishes, so the critical set has interior.
    """

    variant = "flattened-chart"

    def __init__(self, A: IntMatrix2 = IntMatrix2(3, 0, 0, 2), z_c=(0.37, 0.61), delta: float = 0.02, a: float = 0.05, collar: float = 0.05, torus: Torus = Torus()):
        if A.b != 0 or A.c != 0:
            raise InvalidArgument("chart flattening expects a diagonal matrix")
        super().__init__(A, torus)
        self.z_c = np.mod(np.asarray(z_c, float), torus.side)
        self.delta, self.a, self.collar = delta, a, collar
        self.cutoff = FoldCutoff(delta)
        self.params = {"delta": delta, "a": a, "collar": collar, "z_c": tuple(self.z_c)}

    def _w(self, u):
        t = np.clip((self.a + self.collar - np.abs(u)) / self.collar, 0.0, 1.0)
        return t * t * (3 - 2 * t)

    def _dw(self, u):
        t = (self.a + self.collar - np.abs(u)) / self.collar
        inside = (t > 0) & (t < 1)
        return np.where(inside, -np.sign(u) * 6 * t * (1 - t) / self.collar, 0.0)

    def _uv(self, x, y):
        return self.torus.centered(np.asarray(x, float) - self.z_c[0]), self.torus.centered(np.asarray(y, float) - self.z_c[1])

    def eval_xy(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        u, v = self._uv(x, y)
        d = float(self.base.d)
        k = 1 - self._w(u) * (1 - self.cutoff(v))
        Y = d * self.z_c[1] + d * v * k
        return self.torus.wrap(self.base.a * x), self.torus.wrap(Y)

    def eval_scalar(self, x, y):
        s = self.torus.side
        u = (x - self.z_c[0] + s / 2) % s - s / 2
        v = (y - self.z_c[1] + s / 2) % s - s / 2
        if abs(u) < self.a + self.collar and abs(v) < self.delta:
            X, Y = self.eval_xy(np.array([x]), np.array([y]))
            return float(X[0]), float(Y[0])
        return (self.base.a * x) % s, (self.base.d * y) % s

    def jac_xy(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        u, v = self._uv(x, y)
        d = float(self.base.d)
        c, dc = self.cutoff(v), self.cutoff.deriv(v)
        w, dw = self._w(u), self._dw(u)
        k = 1 - w * (1 - c)
        Yu = d * v * (-dw * (1 - c))
        Yv = d * (k + v * w * dc)
        zero = np.zeros_like(u * v)
        return _stack_jac(float(self.base.a) + zero, zero, Yu + zero, Yv + zero)

    def in_critical_interior(self, x, y) -> np.ndarray:
        u, v = self._uv(x, y)
        return (np.abs(u) <= self.a) & (np.abs(v) <= self.delta / 2)


def dense_critical_orbit_experiment(m: FlattenedChartMap | None = None, N: int = 1_000_000, eps: float = 0.05, grid_res: int = 32, start=None, jitter: float = 1e-12, seed: int = 0):
    from .transitivity import orbit_density

    m = m or FlattenedChartMap()
    if start is None:
        start = m.z_c + np.array([0.3 * m.a, 0.1 * m.delta])
    start = np.mod(np.asarray(start, float), m.side)
    rep = orbit_density(m, start, N, eps, grid_res, jitter=jitter, seed=seed)
    inside = bool(m.in_critical_interior(start[:1], start[1:])[0])
    rep.note += "; start in the interior of the critical set" if inside else "; start outside the critical set (off-thesis)"
    rep.off_thesis = not inside
    return rep
