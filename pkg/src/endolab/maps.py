"""Torus endomorphism families: evaluation, Jacobians, preimages, critical sets, fixed points."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import NamedTuple

import mpmath
import numpy as np
from skimage import measure

from .profiles import BumpPhi, BumpPsi, _smooth_ramp
from .torus import IntMatrix2, InvalidArgument, Torus, TorusPoint, torus_distance_xy, wrap


class ConstructionError(InvalidArgument):
    """A family parameter violates one of the construction inequalities."""


class UnresolvedFiber(RuntimeError):
    pass


class NotCertifiable(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def coset_representatives(A: IntMatrix2) -> np.ndarray:
    """Integer vectors k, one per class of Z^2 / A Z^2, lying in A [0,1)^2."""
    M = A.array
    corners = M @ np.array([[0, 1, 0, 1], [0, 0, 1, 1]], dtype=float)
    lo, hi = np.floor(corners.min(axis=1)).astype(int), np.ceil(corners.max(axis=1)).astype(int)
    Minv = np.linalg.inv(M)
    reps = []
    for k1 in range(lo[0], hi[0] + 1):
        for k2 in range(lo[1], hi[1] + 1):
            s = Minv @ np.array([k1, k2], dtype=float)
            s = np.where(np.abs(s) < 1e-12, 0.0, s)
            if np.all(s >= 0) and np.all(s < 1 - 1e-12):
                reps.append((k1, k2))
    reps = np.array(reps, dtype=float)
    if len(reps) != abs(A.det):
        raise RuntimeError(f"found {len(reps)} coset representatives, expected {abs(A.det)}")
    return reps


def _bisect_roots(F, grid: np.ndarray, side: float | None, iters: int = 64) -> np.ndarray:
    """Roots of a scalar function by sign scan on `grid` then vectorised bisection.

    With `side` set, F is a wrapped difference and jumps of size ~side are not roots.
    """
    vals = F(grid)
    s0, s1 = vals[:-1], vals[1:]
    change = (np.sign(s0) != np.sign(s1)) | (s0 == 0)
    if side is not None:
        change &= (np.abs(s0) < side / 4) & (np.abs(s1) < side / 4)
    idx = np.nonzero(change)[0]
    if len(idx) == 0:
        return np.empty(0)
    a, b = grid[idx].copy(), grid[idx + 1].copy()
    fa = F(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = F(m)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, m, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, m)
    roots = 0.5 * (a + b)
    # merge duplicates produced by exact zeros on grid nodes
    roots = np.sort(roots)
    if len(roots) > 1:
        keep = np.concatenate([[True], np.diff(roots) > 1e-14 * max(1.0, abs(roots).max())])
        roots = roots[keep]
    return roots


@dataclass(frozen=True)
class CriticalFrame:
    """Rectangle [u0,u1] x [v0,v1] in the affine frame origin + E (u, v)."""

    origin: tuple[float, float]
    basis: tuple[tuple[float, float], tuple[float, float]]  # columns
    u_range: tuple[float, float]
    v_range: tuple[float, float]

    def to_xy(self, u, v):
        E = np.array(self.basis, dtype=float).T
        return self.origin[0] + E[0, 0] * u + E[0, 1] * v, self.origin[1] + E[1, 0] * u + E[1, 1] * v


class CriticalSetGeometry(NamedTuple):
    polylines: list  # each an (n, 2) array of lift coordinates
    resolution: int
    sign_samples: tuple  # (min det, max det) on the grid
    coarse: bool

    @property
    def empty(self) -> bool:
        return len(self.polylines) == 0


class FixedPoint(NamedTuple):
    point: TorusPoint
    eigenvalues: tuple
    cls: str


class PersistenceCertificate(NamedTuple):
    p_minus: TorusPoint
    p_plus: TorusPoint
    det_minus: float
    det_plus: float
    margin: float
    jacobian_bound: float


# ---------------------------------------------------------------------------
# base class


class EndoMap:
    variant = "abstract"

    def __init__(self, base: IntMatrix2, torus: Torus | None, name: str = ""):
        self.base = base
        self.torus = torus
        self.name = name or self.variant
        self.params: dict = {}
        self.cone = None

    # -- to implement
    def eval_xy(self, x, y):
        raise NotImplementedError

    def jac_xy(self, x, y):
        raise NotImplementedError

    # -- optional hooks
    def eval_scalar(self, x: float, y: float):
        X, Y = self.eval_xy(np.array([x]), np.array([y]))
        return float(X[0]), float(Y[0])

    def eval_mp(self, x, y):
        raise NotImplementedError(f"{self.variant} has no high-precision evaluation")

    def off_support_mask(self, x, y):
        """True where the map is guaranteed to coincide with the base matrix."""
        return np.ones(np.shape(x), dtype=bool)

    def critical_frames(self) -> list[CriticalFrame]:
        return []

    def det_negative_point(self):
        return None

    @property
    def side(self) -> float:
        return self.torus.side if self.torus is not None else 1.0

    # -- common API
    def eval(self, p: TorusPoint) -> TorusPoint:
        X, Y = self.eval_xy(np.array([p.x]), np.array([p.y]))
        return wrap((X[0], Y[0]), self.torus)

    def jacobian(self, p) -> np.ndarray:
        x, y = (p.x, p.y) if isinstance(p, TorusPoint) else p
        return self.jac_xy(np.array([x]), np.array([y]))[0]

    def det_xy(self, x, y):
        J = self.jac_xy(x, y)
        return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]

    def linear_xy(self, x, y):
        A = self.base
        X, Y = A.a * x + A.b * y, A.c * x + A.d * y
        if self.torus is not None:
            X, Y = self.torus.wrap(X), self.torus.wrap(Y)
        return X, Y

    def preimages(self, t: TorusPoint) -> list[TorusPoint]:
        P = self.preimages_xy(t.x, t.y)
        return [TorusPoint(float(a), float(b), self.torus) for a, b in P]

    def preimages_xy(self, tx: float, ty: float) -> np.ndarray:
        raise NotImplementedError

    def residual(self, P: np.ndarray, tx: float, ty: float) -> np.ndarray:
        X, Y = self.eval_xy(P[:, 0], P[:, 1])
        return torus_distance_xy(np.stack([X, Y], -1), np.array([tx, ty]), self.side)

    def _check_fiber(self, P, tx, ty, tol=1e-10):
        if len(P) == 0:
            return P
        res = self.residual(P, tx, ty)
        if np.any(res > tol):
            bad = int(np.argmax(res))
            raise UnresolvedFiber(f"{self.name}: branch {bad} at {P[bad].tolist()} misses target by {res[bad]:.3e}")
        return P

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


def _dedupe_points(P: np.ndarray, side: float, tol: float = 1e-9) -> np.ndarray:
    out = []
    for p in P:
        if not out or np.all(torus_distance_xy(np.array(out), p, side) > tol):
            out.append(p)
    return np.array(out).reshape(-1, 2)


# ---------------------------------------------------------------------------
# linear maps


class LinearMap(EndoMap):
    variant = "linear"

    def __init__(self, A: IntMatrix2, torus: Torus = Torus(), name: str = ""):
        super().__init__(A, torus, name or f"linear-{A.a}-{A.b}-{A.c}-{A.d}")
        self._reps = coset_representatives(A) if A.det != 0 else None
        self._Ainv = np.linalg.inv(A.array) if A.det != 0 else None

    def eval_xy(self, x, y):
        return self.linear_xy(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def eval_scalar(self, x, y):
        A, s = self.base, self.side
        return (A.a * x + A.b * y) % s, (A.c * x + A.d * y) % s

    def eval_mp(self, x, y):
        A, s = self.base, self.side
        return mpmath.fmod(A.a * x + A.b * y, s) % s, mpmath.fmod(A.c * x + A.d * y, s) % s

    def jac_xy(self, x, y):
        shape = np.shape(x)
        return np.broadcast_to(self.base.array, shape + (2, 2)).copy()

    def preimages_xy(self, tx, ty):
        s = self.side
        P = (self._Ainv @ (np.array([tx, ty])[:, None] + s * self._reps.T)).T
        return self.torus.wrap(P)


# ---------------------------------------------------------------------------
# eigen-frame bump maps (expanding and saddle families)


def _mp_exp_bump(u):
    if abs(u) >= 1:
        return mpmath.mpf(0)
    return mpmath.exp(1 - 1 / (1 - u * u))


def _mp_quartic_int(u):
    u = max(min(u, mpmath.mpf(1)), mpmath.mpf(-1))
    return u - 2 * u**3 / 3 + u**5 / 5 + mpmath.mpf(8) / 15


def _mp_phi(phi: BumpPhi, y):
    t = (y - phi.base) / phi.delta
    if t <= 0 or t >= 1:
        return mpmath.mpf(0)
    if phi.kind == "quintic":
        shape = 16 * t**2 * (1 - t) ** 2 * (t - mpmath.mpf(1) / 2)
    else:
        w = mpmath.mpf(phi.peak_width)
        k = 2 * w / (1 - 2 * w)
        shape = (1 + k) * w * _mp_quartic_int((t - mpmath.mpf(1) / 2) / w) - k / 2 * _mp_quartic_int(2 * t - 1)
    return phi.midslope * phi.delta * shape


class EigenBumpMap(EndoMap):
    """p -> A p - psi(u) phi(v) e_s, with (u, v) the eigen-frame coordinates of the minimal lift of p - c.

    With the identity frame and diagonal A this is (lam x, mu y - psi(x) phi(y)) around c.
    """

    def __init__(
        self,
        variant: str,
        A: IntMatrix2,
        center,
        e_u,
        e_s,
        psi: BumpPsi,
        phi: BumpPhi,
        support_radius: float,
        torus: Torus = Torus(),
        name: str = "",
    ):
        self.variant = variant
        super().__init__(A, torus, name)
        self.center = np.array(center, dtype=float)
        self.E = np.column_stack([np.asarray(e_u, dtype=float), np.asarray(e_s, dtype=float)])
        self.Einv = np.linalg.inv(self.E)
        self.e_s = self.E[:, 1].copy()
        self.psi, self.phi = psi, phi
        self.support_radius = float(support_radius)
        self._reps = coset_representatives(A)
        self._Ainv = np.linalg.inv(A.array)
        lam_u = self.Einv @ A.array @ self.E
        self.lam, self.mu = float(lam_u[0, 0]), float(lam_u[1, 1])
        # corners of the bump support, to bound the fast path box
        us = np.array([-psi.theta, psi.theta, -psi.theta, psi.theta])
        vs = np.array([phi.base, phi.base, phi.base + phi.delta, phi.base + phi.delta])
        corners = self.E @ np.vstack([us, vs])
        self._box = float(np.abs(corners).max()) * (1 + 1e-9)
        if self._box >= support_radius:
            raise ConstructionError("bump support box does not fit inside the support ball")

    def _uv(self, x, y):
        s = self.torus.side
        dx = self.torus.centered(np.asarray(x, dtype=float) - self.center[0])
        dy = self.torus.centered(np.asarray(y, dtype=float) - self.center[1])
        Ei = self.Einv
        return Ei[0, 0] * dx + Ei[0, 1] * dy, Ei[1, 0] * dx + Ei[1, 1] * dy

    def bump(self, x, y):
        u, v = self._uv(x, y)
        return self.psi(u) * self.phi(v)

    def local_xy(self, dx, dy):
        """Image offset from A c of the point c + (dx, dy), without wrapping (small offsets only)."""
        dx, dy = np.asarray(dx, dtype=float), np.asarray(dy, dtype=float)
        Ei, A = self.Einv, self.base
        u, v = Ei[0, 0] * dx + Ei[0, 1] * dy, Ei[1, 0] * dx + Ei[1, 1] * dy
        b = self.psi(u) * self.phi(v)
        return A.a * dx + A.b * dy - b * self.e_s[0], A.c * dx + A.d * dy - b * self.e_s[1]

    def eval_xy(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        A = self.base
        b = self.bump(x, y)
        X = A.a * x + A.b * y - b * self.e_s[0]
        Y = A.c * x + A.d * y - b * self.e_s[1]
        return self.torus.wrap(X), self.torus.wrap(Y)

    def eval_scalar(self, x, y):
        A, s = self.base, self.torus.side
        X = A.a * x + A.b * y
        Y = A.c * x + A.d * y
        dx = x - self.center[0]
        dx -= s * math.floor(dx / s + 0.5)
        dy = y - self.center[1]
        dy -= s * math.floor(dy / s + 0.5)
        if abs(dx) < self._box and abs(dy) < self._box:
            b = float(self.bump(x, y))
            X -= b * self.e_s[0]
            Y -= b * self.e_s[1]
        return X % s, Y % s

    def eval_mp(self, x, y):
        A, s = self.base, self.torus.side
        X = A.a * x + A.b * y
        Y = A.c * x + A.d * y
        dx = x - self.center[0]
        dx -= s * mpmath.floor(dx / s + mpmath.mpf(1) / 2)
        dy = y - self.center[1]
        dy -= s * mpmath.floor(dy / s + mpmath.mpf(1) / 2)
        if abs(dx) < self._box and abs(dy) < self._box:
            Ei = self.Einv
            u = Ei[0, 0] * dx + Ei[0, 1] * dy
            v = Ei[1, 0] * dx + Ei[1, 1] * dy
            b = self.psi.height * _mp_exp_bump((u - self.psi.center) / self.psi.theta) * _mp_phi(self.phi, v)
            X -= b * self.e_s[0]
            Y -= b * self.e_s[1]
        return X % s, Y % s

    def jac_xy(self, x, y):
        u, v = self._uv(x, y)
        gu = self.psi.deriv(u) * self.phi(v)
        gv = self.psi(u) * self.phi.deriv(v)
        Ei = self.Einv
        grad = np.stack([gu * Ei[0, 0] + gv * Ei[1, 0], gu * Ei[0, 1] + gv * Ei[1, 1]], axis=-1)
        J = np.broadcast_to(self.base.array, np.shape(u) + (2, 2)).copy()
        J -= self.e_s[:, None] * grad[..., None, :]
        return J

    def off_support_mask(self, x, y):
        d = torus_distance_xy(np.stack([np.asarray(x, float), np.asarray(y, float)], -1), self.center, self.torus.side)
        return d >= self.support_radius

    def critical_frames(self):
        th, d = self.psi.theta, self.phi.delta
        pad = 0.05 * d
        return [
            CriticalFrame(
                tuple(self.center),
                (tuple(self.E[:, 0]), tuple(self.E[:, 1])),
                (-2 * th, 2 * th),
                (self.phi.base - pad, self.phi.base + d + pad),
            )
        ]

    def det_negative_point(self):
        p = self.center + self.E @ np.array([self.psi.center, self.phi.base + self.phi.delta / 2])
        return self.torus.wrap(p)

    def preimages_xy(self, tx, ty):
        s = self.torus.side
        cand = (self._Ainv @ (np.array([tx, ty])[:, None] + s * self._reps.T)).T
        cand = self.torus.wrap(cand)
        near = torus_distance_xy(cand, self.center, s) < 2 * self._box + 1e-12
        out = [cand[~near]]
        for p in cand[near]:
            out.append(self._local_preimages(p))
        P = np.concatenate(out, axis=0) if out else np.empty((0, 2))
        return self._check_fiber(_dedupe_points(P, s, 1e-13), tx, ty)

    def _local_preimages(self, p_lin):
        """All solutions near the center whose linear candidate is p_lin."""
        s = self.torus.side
        d = self.torus.centered(p_lin - self.center)
        U, V = self.Einv @ (self.base.array @ d)
        u = U / self.lam
        psi_u = float(self.psi(u))
        mu = self.mu
        roots = []
        v_lin = V / mu
        if float(self.phi(v_lin)) == 0.0 or psi_u == 0.0:
            roots.append(v_lin)
        if psi_u != 0.0:
            lo, hi = self.phi.base, self.phi.base + self.phi.delta
            grid = np.linspace(lo, hi, 4097)
            F = lambda v: mu * v - psi_u * self.phi(v) - V  # noqa: E731
            for v in _bisect_roots(F, grid, None):
                if lo < v < hi:
                    roots.append(float(v))
        pts = [self.center + self.E @ np.array([u, v]) for v in roots]
        return self.torus.wrap(np.array(pts).reshape(-1, 2))


# ---------------------------------------------------------------------------
# non-hyperbolic family


@dataclass(frozen=True)
class CircleMap:
    """y -> y - eta (cos(k (y - m)) - cos(k d)) on a circle of length `period`, k = 2 pi / period.

    Fixed points are `attract` and `repel`; `attract` is attracting and `repel` repelling.
    """

    attract: float
    repel: float
    eta: float
    period: float = 2.0

    @property
    def _k(self):
        return 2 * math.pi / self.period

    @property
    def _arc(self):
        return (self.repel - self.attract) % self.period

    @property
    def _m(self):
        return self.attract + self._arc / 2

    def __call__(self, y):
        k = self._k
        return np.asarray(y, dtype=float) - self.eta * (np.cos(k * (np.asarray(y, dtype=float) - self._m)) - math.cos(k * self._arc / 2))

    def deriv(self, y):
        return 1.0 + self.eta * self._k * np.sin(self._k * (np.asarray(y, dtype=float) - self._m))

    def mp(self, y):
        k = 2 * mpmath.pi / self.period
        return y - self.eta * (mpmath.cos(k * (y - self._m)) - mpmath.cos(k * self._arc / 2))

    def inverse(self, t, tol=1e-14):
        """Inverse of the lift, by Newton from t (derivative stays in [1-eta k, 1+eta k])."""
        t = np.asarray(t, dtype=float)
        y = t.copy()
        for _ in range(60):
            step = (self(y) - t) / self.deriv(y)
            y = y - step
            if np.max(np.abs(step)) < tol:
                break
        return y

    def max_contraction(self, lo: float, hi: float, n: int = 20001) -> float:
        y = np.linspace(lo, hi, n)
        return float(np.max(np.abs(self.deriv(y))))

    def is_diffeomorphism(self) -> bool:
        return self.eta * self._k < 1


class NonHyperbolicMap(EndoMap):
    """Strip construction over diag(lam, 1) on R^2 / [-1,1]^2.

    Points are stored in [0, 2)^2; chart coordinates in [-1, 1) are recovered by centering.
    On A0 the map is (lam x, g(y)), on A1 (lam x - 2, h(y)); collars blend g, h into the
    identity, and a bump (lam x, y - psi phi) sits in a ball away from the strips.
    """

    variant = "nonhyperbolic"

    def __init__(self, lam: int, g: CircleMap, h: CircleMap, collar: float, bump_center, bump_radius: float, psi: BumpPsi, phi: BumpPhi, name: str = ""):
        super().__init__(IntMatrix2(lam, 0, 0, 1), Torus(2.0), name or f"nonhyp-{lam}")
        self.lam = lam
        self.eps = 1.0 / (100 * lam)
        self.half = 1.0 / (2 * lam) + self.eps
        self.strip_centers = (0.0, 2.0 / lam)  # A0 center 0, A1 center (3/2 + 5/2)/(2 lam)
        self.g, self.h = g, h
        self.collar = float(collar)
        self.bump_center = np.array(bump_center, dtype=float)  # chart coordinates
        self.bump_radius = float(bump_radius)
        self.psi, self.phi = psi, phi
        self._reps = coset_representatives(self.base)

    # strip weights in chart x
    def _weight(self, xc, center):
        dist = np.abs(np.asarray(xc, dtype=float) - center)
        t = (self.half + self.collar - dist) / self.collar
        val, der = _smooth_ramp(t, 0.05)
        inside = (t > 0) & (t < 1)
        dw = np.where(inside, der / self.collar * -np.sign(np.asarray(xc, dtype=float) - center), 0.0)
        return val, dw

    def chart(self, v):
        return self.torus.centered(v)

    def strip_masks(self, x):
        xc = self.chart(x)
        return np.abs(xc - self.strip_centers[0]) <= self.half, np.abs(xc - self.strip_centers[1]) <= self.half

    def _bump_uv(self, x, y):
        u = self.torus.centered(np.asarray(x, dtype=float) - self.bump_center[0])
        v = self.torus.centered(np.asarray(y, dtype=float) - self.bump_center[1])
        return u, v

    def second(self, x, y):
        """Second coordinate before wrapping, and its partials."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        xc = self.chart(x)
        w0, dw0 = self._weight(xc, self.strip_centers[0])
        w1, dw1 = self._weight(xc, self.strip_centers[1])
        gy, hy = self.g(y), self.h(y)
        u, v = self._bump_uv(x, y)
        ps, ph = self.psi(u), self.phi(v)
        Y = y + w0 * (gy - y) + w1 * (hy - y) - ps * ph
        Yx = dw0 * (gy - y) + dw1 * (hy - y) - self.psi.deriv(u) * ph
        Yy = 1 + w0 * (self.g.deriv(y) - 1) + w1 * (self.h.deriv(y) - 1) - ps * self.phi.deriv(v)
        return Y, Yx, Yy

    def eval_xy(self, x, y):
        x = np.asarray(x, dtype=float)
        Y = self.second(x, y)[0]
        return self.torus.wrap(self.lam * x), self.torus.wrap(Y)

    def jac_xy(self, x, y):
        _, Yx, Yy = self.second(x, y)
        J = np.zeros(np.shape(Yx) + (2, 2))
        J[..., 0, 0] = self.lam
        J[..., 1, 0] = Yx
        J[..., 1, 1] = Yy
        return J

    def eval_scalar(self, x, y):
        s = 2.0
        u = (x - self.bump_center[0] + 1.0) % s - 1.0
        v = (y - self.bump_center[1] + 1.0) % s - 1.0
        if abs(u) < self.psi.theta and 0.0 < v < self.phi.delta:
            X, Y = self.eval_xy(np.array([x]), np.array([y]))
            return float(X[0]), float(Y[0])
        xc = (x + 1.0) % s - 1.0
        Y = y
        for c, circ in zip(self.strip_centers, (self.g, self.h)):
            t = (self.half + self.collar - abs(xc - c)) / self.collar
            if t <= 0.0:
                continue
            w = 1.0 if t >= 1.0 else float(_smooth_ramp(t, 0.05)[0])
            k = 2 * math.pi / circ.period
            Y += w * -circ.eta * (math.cos(k * (y - circ._m)) - math.cos(k * circ._arc / 2))
        return (self.lam * x) % s, Y % s

    def eval_mp(self, x, y):
        s = 2
        xc = x - s * mpmath.floor(x / s + mpmath.mpf(1) / 2)
        Y = y
        for c, circ in zip(self.strip_centers, (self.g, self.h)):
            dist = abs(xc - c)
            t = (self.half + self.collar - dist) / self.collar
            if t <= 0:
                continue
            w = mpmath.mpf(float(_smooth_ramp(float(t), 0.05)[0])) if t < 1 else mpmath.mpf(1)
            Y = Y + w * (circ.mp(y) - y)
        u = x - self.bump_center[0]
        u -= s * mpmath.floor(u / s + mpmath.mpf(1) / 2)
        v = y - self.bump_center[1]
        v -= s * mpmath.floor(v / s + mpmath.mpf(1) / 2)
        if abs(u) < self.psi.theta and 0 < v < self.phi.delta:
            Y -= self.psi.height * _mp_exp_bump(u / self.psi.theta) * _mp_phi(self.phi, v)
        return (self.lam * x) % s, Y % s

    def off_support_mask(self, x, y):
        xc = self.chart(np.asarray(x, dtype=float))
        far0 = np.abs(xc - self.strip_centers[0]) >= self.half + self.collar
        far1 = np.abs(xc - self.strip_centers[1]) >= self.half + self.collar
        u, v = self._bump_uv(x, y)
        far_b = np.hypot(u, v) >= self.bump_radius
        return far0 & far1 & far_b

    def critical_frames(self):
        th, d = self.psi.theta, self.phi.delta
        pad = 0.05 * d
        return [CriticalFrame(tuple(self.torus.wrap(self.bump_center)), ((1.0, 0.0), (0.0, 1.0)), (-2 * th, 2 * th), (-pad, d + pad))]

    def det_negative_point(self):
        return self.torus.wrap(self.bump_center + np.array([0.0, self.phi.delta / 2]))

    def cone_frames(self):
        w = self.half + self.collar
        return [CriticalFrame((c, 0.0), ((1.0, 0.0), (0.0, 1.0)), (-w, w), (0.0, 2.0)) for c in self.strip_centers]

    def x_branches(self, tx):
        return self.torus.wrap((tx + 2.0 * np.arange(self.lam)) / self.lam)

    def _solve_monotone(self, x: float, ty: float):
        """Unique root of the blended second coordinate on a branch away from the bump."""
        xs = np.array([x])
        y = np.array([ty])
        for _ in range(60):
            Y, _, Yy = self.second(xs, y)
            step = self.torus.centered(Y - ty) / Yy
            y = y - step
            if abs(step[0]) < 1e-15:
                break
        return float(self.torus.wrap(y)[0])

    def preimages_xy(self, tx, ty):
        out = []
        grid0 = np.linspace(0.0, 2.0, 4097)
        for x in self.x_branches(tx):
            xs = float(x)
            u = float(self.torus.centered(x - self.bump_center[0]))
            if abs(u) >= self.psi.theta:
                out.append((xs, self._solve_monotone(xs, ty)))
                continue
            lo = float(self.torus.wrap(self.bump_center[1]))
            grid = np.union1d(grid0, lo + np.linspace(0, self.phi.delta, 2049))
            F = lambda yy: self.torus.centered(self.second(np.full_like(yy, xs), yy)[0] - ty)  # noqa: E731
            for y in _bisect_roots(F, grid, 2.0):
                out.append((xs, float(self.torus.wrap(y))))
        P = _dedupe_points(np.array(out).reshape(-1, 2), 2.0, 1e-13)
        return self._check_fiber(P, tx, ty)


# ---------------------------------------------------------------------------
# perturbations


class PerturbedMap(EndoMap):
    """f + P with P a small periodic trigonometric field (so the homotopy class is unchanged)."""

    variant = "perturbed"

    def __init__(self, base_map: EndoMap, modes: np.ndarray, name: str = ""):
        super().__init__(base_map.base, base_map.torus, name or f"{base_map.name}+perturbation")
        self.base_map = base_map
        # rows: (component, k1, k2, amplitude, phase)
        self.modes = np.asarray(modes, dtype=float)
        self.params = dict(base_map.params)
        self.cone = base_map.cone

    def field(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        w = 2 * np.pi / self.side
        P = [np.zeros_like(x), np.zeros_like(x)]
        dP = np.zeros(np.shape(x) + (2, 2))
        for comp, k1, k2, amp, ph in self.modes:
            arg = w * (k1 * x + k2 * y) + ph
            c = int(comp)
            P[c] = P[c] + amp * np.sin(arg)
            co = amp * np.cos(arg) * w
            dP[..., c, 0] += co * k1
            dP[..., c, 1] += co * k2
        return P[0], P[1], dP

    def eval_xy(self, x, y):
        X, Y = self.base_map.eval_xy(x, y)
        p0, p1, _ = self.field(x, y)
        return self.torus.wrap(X + p0), self.torus.wrap(Y + p1)

    def jac_xy(self, x, y):
        return self.base_map.jac_xy(x, y) + self.field(x, y)[2]

    def off_support_mask(self, x, y):
        return np.zeros(np.shape(x), dtype=bool)

    def critical_frames(self):
        return self.base_map.critical_frames()

    def det_negative_point(self):
        return self.base_map.det_negative_point()

    def preimages_xy(self, tx, ty):
        seeds = self.base_map.preimages_xy(tx, ty)
        out = []
        for p in seeds:
            q = newton_solve(self, p, np.array([tx, ty]))
            if q is not None:
                out.append(q)
        P = _dedupe_points(np.array(out).reshape(-1, 2), self.side, 1e-12)
        return self._check_fiber(P, tx, ty)


def newton_solve(m: EndoMap, p0, target, iters: int = 50, tol: float = 1e-14):
    p = np.array(p0, dtype=float)
    s = m.side
    for _ in range(iters):
        X, Y = m.eval_xy(p[:1], p[1:])
        r = m.torus.centered(np.array([X[0], Y[0]]) - target)
        if np.max(np.abs(r)) < tol:
            return m.torus.wrap(p)
        J = m.jac_xy(p[:1], p[1:])[0]
        p = p - np.linalg.pinv(J) @ r
    X, Y = m.eval_xy(p[:1], p[1:])
    r = m.torus.centered(np.array([X[0], Y[0]]) - target)
    return m.torus.wrap(p) if np.max(np.abs(r)) < 1e-11 * s else None


def perturb(m: EndoMap, size: float, seed: int = 0, kmax: int = 2) -> PerturbedMap:
    """Random periodic perturbation whose C^1 size (max of sup|P| and sup of Jacobian entries) is `size`."""
    rng = np.random.default_rng(seed)
    modes = []
    for comp in (0, 1):
        for k1, k2 in product(range(-kmax, kmax + 1), repeat=2):
            if (k1, k2) == (0, 0):
                continue
            modes.append((comp, k1, k2, rng.normal(), rng.uniform(0, 2 * np.pi)))
    modes = np.array(modes)
    w = 2 * np.pi / m.side
    c0 = max(np.abs(modes[modes[:, 0] == c, 3]).sum() for c in (0, 1))
    c1 = max(
        (np.abs(modes[modes[:, 0] == c, 3]) * np.abs(modes[modes[:, 0] == c, 1 + j]) * w).sum() for c in (0, 1) for j in (0, 1)
    )
    modes[:, 3] *= size / max(c0, c1)
    return PerturbedMap(m, modes)


# ---------------------------------------------------------------------------
# generic analysis


def critical_set(m: EndoMap, resolution: int = 256) -> CriticalSetGeometry:
    """Zero contour of det Df on grids over the map's critical frames (or the whole torus)."""
    if resolution < 64:
        raise InvalidArgument("critical_set needs resolution >= 64")
    frames = m.critical_frames()
    if not frames:
        s = m.side
        frames = [CriticalFrame((0.0, 0.0), ((1.0, 0.0), (0.0, 1.0)), (0.0, s), (0.0, s))]
    polylines = []
    lo, hi = np.inf, -np.inf
    coarse = False
    for fr in frames:
        u = np.linspace(*fr.u_range, resolution)
        v = np.linspace(*fr.v_range, resolution)
        U, V = np.meshgrid(u, v, indexing="ij")
        X, Y = fr.to_xy(U, V)
        D = m.det_xy(X, Y)
        lo, hi = min(lo, D.min()), max(hi, D.max())
        if D.min() < 0 < D.max():
            for c in measure.find_contours(D, 0.0):
                cu = np.interp(c[:, 0], np.arange(resolution), u)
                cv = np.interp(c[:, 1], np.arange(resolution), v)
                px, py = fr.to_xy(cu, cv)
                polylines.append(np.column_stack([px, py]))
        # the bump support is half the frame in u; flag grids with too few cells across it
        coarse |= resolution < 32
    return CriticalSetGeometry(polylines, resolution, (float(lo), float(hi)), coarse)


def persistence_certificate(m: EndoMap, margin: float | None = None, far_point=None) -> PersistenceCertificate:
    pm = m.det_negative_point()
    if pm is None:
        raise NotCertifiable(f"{m.name}: no point with negative Jacobian determinant known")
    dm = float(m.det_xy(np.array([pm[0]]), np.array([pm[1]]))[0])
    s = m.side
    if far_point is None:
        # a point far from the support: opposite corner of the torus relative to the bump
        far_point = m.torus.wrap(np.asarray(pm) + np.array([0.5 * s, 0.5 * s]) + 0.0123 * s)
    pp = np.asarray(far_point, dtype=float)
    dp = float(m.det_xy(np.array([pp[0]]), np.array([pp[1]]))[0])
    if margin is None:
        margin = min(abs(m.base.det), abs(dm)) / 2
    if not (dm <= -margin and dp >= margin):
        raise NotCertifiable(f"{m.name}: det values {dm:.4g}, {dp:.4g} do not straddle +-{margin:.4g}")
    J1 = m.jacobian(tuple(pm))
    J2 = m.jacobian(tuple(pp))
    norm = max(np.linalg.norm(J1, 2), np.linalg.norm(J2, 2))
    return PersistenceCertificate(
        TorusPoint(float(pm[0]), float(pm[1]), m.torus),
        TorusPoint(float(pp[0]), float(pp[1]), m.torus),
        dm,
        dp,
        float(margin),
        float(margin / (2 * (norm + 1))),
    )


def classify_eigenvalues(ev, tol: float = 1e-8) -> str:
    mods = np.abs(ev)
    if np.any(np.abs(mods - 1) <= tol):
        return "nonhyperbolic"
    if np.all(mods > 1):
        return "repelling"
    if np.all(mods < 1):
        return "attracting"
    return "saddle"


def fixed_points(m: EndoMap, seeds: int = 48, extra_seeds=None) -> list[FixedPoint]:
    s = m.side
    if isinstance(m, LinearMap):
        return _linear_fixed_points(m)
    g = (np.arange(seeds) + 0.5) / seeds * s
    X, Y = np.meshgrid(g, g, indexing="ij")
    P = np.column_stack([X.ravel(), Y.ravel()])
    if extra_seeds is not None:
        P = np.vstack([P, np.asarray(extra_seeds, dtype=float).reshape(-1, 2)])
    for fr in m.critical_frames():
        u = np.linspace(*fr.u_range, 7)
        v = np.linspace(*fr.v_range, 7)
        U, V = np.meshgrid(u, v)
        fx, fy = fr.to_xy(U.ravel(), V.ravel())
        P = np.vstack([P, np.column_stack([fx, fy])])
    P = m.torus.wrap(P)
    skipped = 0
    for _ in range(60):
        FX, FY = m.eval_xy(P[:, 0], P[:, 1])
        r = m.torus.centered(np.column_stack([FX, FY]) - P)
        J = m.jac_xy(P[:, 0], P[:, 1]) - np.eye(2)
        step = np.einsum("nij,nj->ni", np.linalg.pinv(J), r)
        step = np.clip(step, -0.1 * s, 0.1 * s)
        P = m.torus.wrap(P - step)
        if np.max(np.abs(step)) < 1e-15:
            break
    FX, FY = m.eval_xy(P[:, 0], P[:, 1])
    res = torus_distance_xy(np.column_stack([FX, FY]), P, s)
    ok = res < 1e-12
    skipped = int((~ok).sum())
    P = P[ok]
    found: list[FixedPoint] = []
    kept = []
    for p in P:
        if kept and np.any(torus_distance_xy(np.array(kept), p, s) < 1e-8):
            continue
        J = m.jacobian(tuple(p))
        ev = np.linalg.eigvals(J)
        ev = ev[np.argsort(-np.abs(ev))]
        cls = classify_eigenvalues(ev)
        if cls == "nonhyperbolic" and _on_known_continuum(m, found, p, J):
            continue
        kept.append(p)
        evt = tuple(float(e.real) if abs(e.imag) < 1e-12 else complex(e) for e in ev)
        found.append(FixedPoint(TorusPoint(float(p[0]), float(p[1]), m.torus), evt, cls))
    m.params.setdefault("fixed_point_seeds_skipped", skipped)
    found.sort(key=lambda f: (f.point.x, f.point.y))
    return found


def _on_known_continuum(m, found, p, J) -> bool:
    """A nonhyperbolic point lying on the 1-eigenline through an already reported one."""
    w, V = np.linalg.eig(J)
    k = int(np.argmin(np.abs(np.abs(w) - 1)))
    null = np.real(V[:, k])
    null /= np.linalg.norm(null)
    for f in found:
        if f.cls != "nonhyperbolic":
            continue
        d = m.torus.centered(p - f.point.xy)
        if abs(d[0] * null[1] - d[1] * null[0]) < 1e-6:
            return True
    return False


def _linear_fixed_points(m: LinearMap) -> list[FixedPoint]:
    B = m.base.array - np.eye(2)
    s = m.side
    if abs(np.linalg.det(B)) < 0.5:
        raise InvalidArgument("A - I is singular: fixed points form a continuum")
    Bi = IntMatrix2.from_array(np.rint(B).astype(int))
    reps = coset_representatives(Bi)
    P = m.torus.wrap((np.linalg.inv(B) @ (s * reps.T)).T)
    ev = np.linalg.eigvals(m.base.array)
    ev = tuple(float(e) for e in ev[np.argsort(-np.abs(ev))])
    cls = classify_eigenvalues(np.array(ev))
    out = [FixedPoint(TorusPoint(float(p[0]), float(p[1]), m.torus), ev, cls) for p in _dedupe_points(P, s)]
    out.sort(key=lambda f: (f.point.x, f.point.y))
    return out


def sample_off_support(m: EndoMap, n: int, rng: np.random.Generator) -> np.ndarray:
    s = m.side
    out = np.empty((0, 2))
    while len(out) < n:
        P = rng.uniform(0, s, size=(2 * n, 2))
        P = P[m.off_support_mask(P[:, 0], P[:, 1])]
        out = np.vstack([out, P])
    return out[:n]


def annulus_samples(center, r_in: float, r_out: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform samples of the closed annulus r_in <= |p - center| <= r_out."""
    rad = np.sqrt(rng.uniform(r_in**2, r_out**2, n))
    ang = rng.uniform(0, 2 * np.pi, n)
    rad[: min(n, 64)] = r_in  # include inner boundary points, the worst case
    return np.asarray(center) + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def fd_jacobian(m: EndoMap, P: np.ndarray, h: float) -> np.ndarray:
    out = np.empty((len(P), 2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        Xp, Yp = m.eval_xy(P[:, 0] + e[0], P[:, 1] + e[1])
        Xm, Ym = m.eval_xy(P[:, 0] - e[0], P[:, 1] - e[1])
        if m.torus is not None:
            dX, dY = m.torus.centered(Xp - Xm), m.torus.centered(Yp - Ym)
        else:
            dX, dY = Xp - Xm, Yp - Ym
        out[:, 0, j] = dX / (2 * h)
        out[:, 1, j] = dY / (2 * h)
    return out


def fd_jacobian_local(m: "EigenBumpMap", D: np.ndarray, h: float | None = None) -> np.ndarray:
    """Central differences in offsets from the bump center; avoids wrap cancellation at tiny scales."""
    if h is None:
        h = 1e-4 * m.phi.delta * min(1.0, getattr(m.phi, "peak_width", 1.0))
    out = np.empty((len(D), 2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        Xp, Yp = m.local_xy(D[:, 0] + e[0], D[:, 1] + e[1])
        Xm, Ym = m.local_xy(D[:, 0] - e[0], D[:, 1] - e[1])
        out[:, 0, j] = (Xp - Xm) / (2 * h)
        out[:, 1, j] = (Yp - Ym) / (2 * h)
    return out


def preimages_batch(m: EndoMap, T: np.ndarray):
    """Preimages of many targets at once; returns (points, index of the target each came from)."""
    T = np.asarray(T, dtype=float).reshape(-1, 2)
    s = m.side
    if isinstance(m, (LinearMap, EigenBumpMap)):
        reps = m._reps
        n, k = len(T), len(reps)
        cand = np.einsum("ij,nkj->nki", m._Ainv, T[:, None, :] + s * reps[None, :, :])
        cand = m.torus.wrap(cand)
        src = np.repeat(np.arange(n), k)
        cand = cand.reshape(-1, 2)
        if isinstance(m, LinearMap):
            return cand, src
        near = torus_distance_xy(cand, m.center, s) < 2 * m._box + 1e-12
        slow = np.zeros(n, dtype=bool)
        slow[src[near]] = True
        keep = ~slow[src]
        P, S = [cand[keep]], [src[keep]]
        for i in np.nonzero(slow)[0]:
            Q = m.preimages_xy(*T[i])
            P.append(Q)
            S.append(np.full(len(Q), i))
        return np.concatenate(P), np.concatenate(S)
    if isinstance(m, NonHyperbolicMap):
        n, lam = len(T), m.lam
        X = m.torus.wrap((T[:, :1] + 2.0 * np.arange(lam)[None, :]) / lam)
        ty = np.repeat(T[:, 1], lam)
        X = X.ravel()
        src = np.repeat(np.arange(n), lam)
        u = m.torus.centered(X - m.bump_center[0])
        fast = np.abs(u) >= m.psi.theta
        y = ty[fast].copy()
        xf = X[fast]
        for _ in range(60):
            Y, _, Yy = m.second(xf, y)
            step = m.torus.centered(Y - ty[fast]) / Yy
            y = y - step
            if np.max(np.abs(step), initial=0.0) < 1e-15:
                break
        P = [np.column_stack([xf, m.torus.wrap(y)])]
        S = [src[fast]]
        # bump branches: strips and collars are inactive there, so Y - by = v - psi(u) phi(v)
        xb, sb = X[~fast], src[~fast]
        if len(xb):
            by = m.bump_center[1]
            V = m.torus.centered(ty[~fast] - by)
            ps = m.psi(u[~fast])
            lin = (m.phi(V) == 0) | (ps == 0)
            P.append(np.column_stack([xb[lin], m.torus.wrap(by + V[lin])]))
            S.append(sb[lin])
            grid = np.linspace(0.0, m.phi.delta, 1025)
            F = grid[None, :] - ps[:, None] * m.phi(grid)[None, :] - V[:, None]
            i, j = np.nonzero(np.sign(F[:, :-1]) != np.sign(F[:, 1:]))
            if len(i):
                a, b = grid[j], grid[j + 1]
                fa = F[i, j]
                for _ in range(60):
                    mid = 0.5 * (a + b)
                    fm = mid - ps[i] * m.phi(mid) - V[i]
                    left = np.sign(fm) == np.sign(fa)
                    a, fa, b = np.where(left, mid, a), np.where(left, fm, fa), np.where(left, b, mid)
                    v = 0.5 * (a + b)
                inside = (v > 0) & (v < m.phi.delta)
                P.append(np.column_stack([xb[i][inside], m.torus.wrap(by + v[inside])]))
                S.append(sb[i][inside])
        P, S = np.concatenate(P), np.concatenate(S)
        order = np.argsort(S, kind="stable")
        return P[order], S[order]
    P, S = [], []
    for i, t in enumerate(T):
        Q = m.preimages_xy(*t)
        P.append(Q)
        S.append(np.full(len(Q), i))
    return np.concatenate(P) if P else np.empty((0, 2)), np.concatenate(S) if S else np.empty(0, int)
