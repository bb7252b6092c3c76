"""Transitivity evidence: preimage trees, orbit density, covering exponents, avoiding branches and
curve intersections for the three families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.spatial import cKDTree

from .cones import cone_gap_aperture
from .curves import (
    EscapeResult,
    RefinementPolicy,
    TorusPolyline,
    _mp_mod,
    default_cone,
    escape_point,
    internal_radius_growth,
    map_curve,
    mp_orbit,
)
from .maps import EigenBumpMap, EndoMap, LinearMap, NonHyperbolicMap, fixed_points, preimages_batch
from .torus import IntMatrix2, InvalidArgument, TorusPoint, torus_distance_xy


class ConstructionViolated(RuntimeError):
    pass


class GeometryViolated(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# density


@dataclass
class DensityReport:
    eps: float
    grid_res: int
    fraction: float
    max_empty_distance: float
    samples: int
    inconclusive: bool = False
    hits: np.ndarray | None = field(default=None, repr=False)
    side: float = 1.0
    note: str = ""

    def rows(self):
        h = self.side / self.grid_res
        out = []
        for i in range(self.grid_res):
            for j in range(self.grid_res):
                out.append(((i + 0.5) * h, (j + 0.5) * h, int(self.hits[i, j])))
        return out


def density_report(points, side: float, eps: float, grid_res: int = 32, **kw) -> DensityReport:
    """Fraction of reference cell centers within eps (torus metric) of the point set."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    g = (np.arange(grid_res) + 0.5) / grid_res * side
    C = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    if len(P) == 0:
        d = np.full(len(C), np.inf)
    else:
        W = np.mod(P, side)
        W[W >= side] = 0.0
        d, _ = cKDTree(W, boxsize=side).query(C)
    hits = (d <= eps).reshape(grid_res, grid_res)
    return DensityReport(eps, grid_res, float(hits.mean()), float(d.max()), len(P), hits=hits, side=side, **kw)


# ---------------------------------------------------------------------------
# preimage trees


@dataclass
class InverseBranchTree:
    root: np.ndarray
    points: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)
    parent: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    depth_limit: int = 0
    inconclusive: bool = False

    def __len__(self):
        return len(self.points)

    @property
    def max_residual(self) -> float:
        return float(self.residual.max(initial=0.0))


def _cells(P: np.ndarray, side: float, res: int) -> np.ndarray:
    ij = np.clip(np.floor(P / side * res).astype(np.int64), 0, res - 1)
    return ij[:, 0] * res + ij[:, 1]


def preimage_tree(m: EndoMap, target, depth: int, prune_res: int | None = 128, node_cap: int = 1_000_000) -> InverseBranchTree:
    """Breadth-first preimage tree. With prune_res set, a node is kept only if its prune cell is new."""
    if depth < 1:
        raise InvalidArgument("depth must be at least 1")
    side = m.side
    root = np.mod(np.asarray(target.xy if isinstance(target, TorusPoint) else target, dtype=float), side)
    pts, dep, par = [root[None, :]], [np.zeros(1, int)], [np.full(1, -1)]
    visited = np.zeros(prune_res * prune_res, dtype=bool) if prune_res else None
    if visited is not None:
        visited[_cells(root[None, :], side, prune_res)] = True
    frontier = np.array([0])
    frontier_pts = root[None, :]
    total, inconclusive = 1, False
    for d in range(1, depth + 1):
        P, S = preimages_batch(m, frontier_pts)
        if visited is not None and len(P):
            cells = _cells(P, side, prune_res)
            fresh = ~visited[cells]
            _, first = np.unique(cells[fresh], return_index=True)
            keep = np.sort(np.nonzero(fresh)[0][first])
            visited[cells[keep]] = True
            P, S = P[keep], S[keep]
        if total + len(P) > node_cap:
            inconclusive = True
            P, S = P[: node_cap - total], S[: node_cap - total]
        ids = np.arange(total, total + len(P))
        pts.append(P)
        dep.append(np.full(len(P), d))
        par.append(frontier[S])
        total += len(P)
        frontier, frontier_pts = ids, P
        if inconclusive or len(P) == 0:
            break
    points, depth_arr, parent = np.concatenate(pts), np.concatenate(dep), np.concatenate(par)
    residual = np.zeros(len(points))
    child = parent >= 0
    if child.any():
        X, Y = m.eval_xy(points[child, 0], points[child, 1])
        residual[child] = torus_distance_xy(np.column_stack([X, Y]), points[parent[child]], side)
    if residual.max() >= 1e-9:
        raise ConstructionViolated(f"tree node misses its parent by {residual.max():.3e}")
    return InverseBranchTree(root, points, depth_arr, parent, residual, depth, inconclusive)


def preorbit_density(m: EndoMap, target, depth: int, eps: float = 0.05, grid_res: int = 32, prune_res: int | None = 128, node_cap: int = 1_000_000) -> DensityReport:
    tree = preimage_tree(m, target, depth, prune_res, node_cap)
    rep = density_report(tree.points, m.side, eps, grid_res, inconclusive=tree.inconclusive)
    rep.tree = tree
    return rep


# ---------------------------------------------------------------------------
# forward orbits


def orbit_points(m: EndoMap, start, N: int, jitter: float = 1e-12, seed: int = 0) -> np.ndarray:
    """Orbit of `start` under m; jitter adds a uniform kick of that size each step (pseudo-orbit)."""
    side = m.side
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-jitter, jitter, (N, 2)) if jitter and N > 0 else None
    out = np.empty((N + 1, 2))
    x, y = (float(v) for v in (start.xy if isinstance(start, TorusPoint) else start))
    out[0] = x, y
    A = m.base
    a, b, c, d = float(A.a), float(A.b), float(A.c), float(A.d)
    if isinstance(m, (LinearMap, EigenBumpMap)):
        box = getattr(m, "_box", -1.0) * 1.001
        cx, cy = (float(v) for v in getattr(m, "center", (0.0, 0.0)))
        half = side / 2
        for n in range(N):
            dx = (x - cx + half) % side - half
            dy = (y - cy + half) % side - half
            if abs(dx) < box and abs(dy) < box:
                x, y = m.eval_scalar(x, y)
            else:
                x, y = (a * x + b * y) % side, (c * x + d * y) % side
            if noise is not None:
                x, y = (x + noise[n, 0]) % side, (y + noise[n, 1]) % side
            out[n + 1] = x, y
        return out
    ev = getattr(m, "eval_scalar", None)
    for n in range(N):
        x, y = ev(x, y)
        if noise is not None:
            x, y = (x + noise[n, 0]) % side, (y + noise[n, 1]) % side
        out[n + 1] = x, y
    return out


def orbit_density(m: EndoMap, start, N: int, eps: float = 0.05, grid_res: int = 32, jitter: float = 1e-12, seed: int = 0) -> DensityReport:
    if N < 0:
        raise InvalidArgument("N must be non-negative")
    P = orbit_points(m, start, N, jitter, seed)
    rep = density_report(P, m.side, eps, grid_res, note="statistical evidence" + (f", jitter {jitter:g}" if jitter else ""))
    rep.points = P
    return rep


# ---------------------------------------------------------------------------
# covering


def _ipow(A: IntMatrix2, n: int):
    """Exact integer power as a nested tuple of Python ints."""
    r = ((1, 0), (0, 1))
    a = ((A.a, A.b), (A.c, A.d))

    def mul(p, q):
        return (
            (p[0][0] * q[0][0] + p[0][1] * q[1][0], p[0][0] * q[0][1] + p[0][1] * q[1][1]),
            (p[1][0] * q[0][0] + p[1][1] * q[1][0], p[1][0] * q[0][1] + p[1][1] * q[1][1]),
        )

    while n:
        if n & 1:
            r = mul(r, a)
        a = mul(a, a)
        n >>= 1
    return r


def _gauss_reduce(b1: np.ndarray, b2: np.ndarray):
    if b1 @ b1 > b2 @ b2:
        b1, b2 = b2, b1
    for _ in range(200):
        mu = round(float(b1 @ b2) / float(b1 @ b1))
        b2 = b2 - mu * b1
        if b2 @ b2 >= b1 @ b1:
            break
        b1, b2 = b2, b1
    return b1, b2


def _closest_lattice_distance(B: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Distance from each row of T to the lattice spanned by the columns of B (reduced basis, Babai +- 1)."""
    Binv = np.linalg.inv(B)
    c0 = np.round(T @ Binv.T)
    best = np.full(len(T), np.inf)
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            c = c0 + np.array([i, j])
            best = np.minimum(best, np.linalg.norm(T - c @ B.T, axis=1))
    return best


@dataclass
class CoveringCertificate:
    A: IntMatrix2
    eps: float
    radius: float
    m: int
    m_formula: int
    spacing: float  # hexagonal grid of disk centers
    disk_count: int
    flags: list
    delta_cert: float
    worst_distance: float
    grid: int
    sample_fraction: float | None = None

    @property
    def certified(self) -> bool:
        return bool(self.flags) and all(self.flags)

    @property
    def robust_delta8(self) -> float:
        return self.delta_cert / 8

    @property
    def robust_delta16(self) -> float:
        return self.delta_cert / 16

    def center(self, i: int, j: int, side: float = 1.0):
        x = (i + 0.5 * (j % 2)) * self.spacing
        y = j * self.spacing * math.sqrt(3) / 2
        return x % side, y % side


def _cover_check(A: IntMatrix2, m: int, rho: float, side: float, grid: int):
    P = _ipow(A, m)
    M = np.array(P, dtype=float)
    Minv = np.linalg.inv(M)
    b1, b2 = _gauss_reduce(Minv[:, 0] * side, Minv[:, 1] * side)
    B = np.column_stack([b1, b2])
    g = np.arange(grid) / grid * side
    Z = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    dist = _closest_lattice_distance(B, -(Z @ Minv.T))
    smin = float(np.linalg.svd(M, compute_uv=False).min())
    # image of B(p, rho - |p|) contains B(A^m p, smin (rho - |p|)); cells have half-diagonal h / sqrt(2)
    slack = smin * (rho - dist)
    delta = float(slack.min() - side / grid / math.sqrt(2))
    return bool(np.all(dist < rho)), delta, float(dist.max())


def covering_exponent(A: IntMatrix2, eps: float, side: float = 1.0, grid: int = 64, sample: int = 200_000, seed: int = 0, max_extra: int = 30) -> CoveringCertificate:
    """Smallest m (from the weak-eigenvalue formula upward) whose m-th image of an eps/8 disk covers the torus.

    A grid point z is covered iff the translated lattice A^{-m}(z + Z^2) meets the disk, which is checked
    exactly with a reduced basis; a random sample of the disk mapped m times must also hit every grid cell.
    Coverage is translation invariant, so one disk certifies every center of the hexagonal grid.
    """
    ev = A.eigenvalues()
    if min(abs(e) for e in ev) <= 1:
        raise InvalidArgument(f"covering needs an expanding matrix, eigenvalues {ev}")
    rho = eps / 8
    mu = min(abs(e) for e in ev)
    m0 = max(0, math.ceil(math.log((side / 2) / rho) / math.log(mu) - 1e-12))
    for m in range(m0, m0 + max_extra + 1):
        ok, delta, worst = _cover_check(A, m, rho, side, grid)
        frac = _sample_cover(A, m, rho, side, grid, sample, seed) if sample else None
        if ok and delta > 0 and (frac is None or frac == 1.0):
            break
    else:
        raise ConstructionViolated(f"no covering exponent found up to {m0 + max_extra}")
    spacing = rho * math.sqrt(3)
    count = math.ceil(side / spacing) * math.ceil(side / (spacing * math.sqrt(3) / 2))
    return CoveringCertificate(A, eps, rho, m, m0, spacing, count, [True], delta, worst, grid, frac)


def _sample_cover(A: IntMatrix2, m: int, rho: float, side: float, grid: int, n: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    rad = rho * np.sqrt(rng.uniform(0, 1, n))
    ang = rng.uniform(0, 2 * np.pi, n)
    P = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    M = np.array(_ipow(A, m), dtype=float)
    Q = np.mod(P @ M.T, side)
    hit = np.zeros((grid, grid), dtype=bool)
    ij = np.clip((Q / side * grid).astype(int), 0, grid - 1)
    hit[ij[:, 0], ij[:, 1]] = True
    return float(hit.mean())


# ---------------------------------------------------------------------------
# saddle machinery


def inverse_branch_avoiding(m: EndoMap, p, radius: float | None = None, depth: int = 100, center=None) -> list:
    """p_0 = p, p_{-1}, ... with every p_n (n < 0) outside B(center, radius); first admissible preimage wins."""
    c = np.asarray(center if center is not None else m.center, dtype=float)
    radius = 3 * m.params["r"] if radius is None else radius
    cur = np.mod(np.asarray(p.xy if isinstance(p, TorusPoint) else p, dtype=float), m.side)
    out = [cur]
    for n in range(depth):
        P = m.preimages_xy(*cur)
        ok = torus_distance_xy(P, c, m.side) > radius
        if not ok.any():
            raise ConstructionViolated(f"no preimage outside the ball at step {n + 1}")
        nxt = P[int(np.argmax(ok))]
        X, Y = m.eval_xy(nxt[:1], nxt[1:])
        if torus_distance_xy(np.array([X[0], Y[0]]), cur, m.side) >= 1e-9:
            raise ConstructionViolated("chosen preimage fails the forward check")
        out.append(nxt)
        cur = nxt
    return out


@dataclass
class IntersectionConstants:
    a1: float
    M_len: float
    eps: float
    w: tuple
    w1: tuple
    validated: bool
    failures: int
    samples: int
    levels: list = field(default_factory=list)
    infeasible: bool = False


def _rotate(w, ang):
    c, s = np.cos(ang), np.sin(ang)
    return np.column_stack([c * w[0] - s * w[1], s * w[0] + c * w[1]])


def segment_pairs_intersect(P, du, Q, ds, L: float, eps: float, side: float = 1.0) -> np.ndarray:
    """For each row: does P + s du (0 <= s <= L) meet Q + t ds (0 <= t <= eps) on the torus?"""
    P, du, Q, ds = (np.asarray(v, dtype=float) for v in (P, du, Q, ds))
    # lifts are enumerated along the coordinate in which the u-segment advances least
    j = 0 if np.abs(du[:, 0]).mean() < np.abs(du[:, 1]).mean() else 1
    if np.abs(du[:, j]).min() < 1e-9:
        j = 1 - j
    i = 1 - j
    c = np.mod(Q - P, side)
    rho = du[:, i] / du[:, j]
    kappa = ds[:, j] * rho - ds[:, i]
    kappa = np.where(kappa == 0, np.finfo(float).tiny, kappa)  # parallel pairs never cross
    lo = np.minimum(0, L * du[:, j]) - c[:, j] - eps * np.abs(ds[:, j])
    hi = np.maximum(0, L * du[:, j]) - c[:, j] + eps * np.abs(ds[:, j])
    kmin, kmax = np.floor(lo / side).astype(np.int64), np.ceil(hi / side).astype(np.int64)
    tlo, thi = np.minimum(0, kappa * eps), np.maximum(0, kappa * eps)
    hit = np.zeros(len(P), dtype=bool)
    for k in range(int(kmin.min()), int(kmax.max()) + 1):
        act = np.nonzero(~hit & (k >= kmin) & (k <= kmax))[0]
        if len(act) == 0:
            continue
        base = c[act, i] - (k * side + c[act, j]) * rho[act]
        ki = np.ceil((tlo[act] - base) / side)
        val = base + ki * side
        ok = val <= thi[act]
        t = val / kappa[act]
        s = (k * side + c[act, j] + t * ds[act, j]) / du[act, j]
        ok &= (s >= 0) & (s <= L)
        hit[act[ok]] = True
    return hit


def _validate_length(w, w1, a1, eps, L, n, rng, side=1.0) -> int:
    """Failures among n x n (u-segment, s-segment) pairs with random anchors and cone directions."""
    ang = math.atan(a1)
    P = rng.uniform(0, side, (n, 2))
    Q = rng.uniform(0, side, (n, 2))
    du = _rotate(w, rng.uniform(-ang, ang, n))
    ds = _rotate(w1, rng.uniform(-ang, ang, n))
    fails = 0
    for a in range(n):
        hit = segment_pairs_intersect(np.broadcast_to(P[a], (n, 2)), np.broadcast_to(du[a], (n, 2)), Q, ds, L, eps, side)
        fails += int((~hit).sum())
    return fails


def intersection_constants(w, w1, eps: float, a0: float | None = None, samples: int = 1000, seed: int = 0, L0: float = 1.0, max_L: float = 1e6) -> IntersectionConstants:
    """Aperture a1 and a doubling-validated length M_len such that long u-curves meet eps-long s-curves."""
    w = np.asarray(w, dtype=float) / np.linalg.norm(w)
    w1 = np.asarray(w1, dtype=float) / np.linalg.norm(w1)
    a1, _ = cone_gap_aperture(w, w1, eps, a0)
    rng = np.random.default_rng(seed)
    levels = []
    L = L0
    while L <= max_L:
        fails = _validate_length(w, w1, a1, eps, L, samples, rng)
        levels.append((L, fails))
        if fails == 0:
            recheck = _validate_length(w, w1, a1, eps, L, samples, rng)
            levels.append((L, recheck))
            if recheck == 0:
                return IntersectionConstants(a1, L, eps, tuple(w), tuple(w1), True, 0, samples, levels)
        L *= 2
    return IntersectionConstants(a1, float("inf"), eps, tuple(w), tuple(w1), False, levels[-1][1], samples, levels, infeasible=True)


@dataclass
class StableFamily:
    points: list  # q_0, q_{-1}, ..., q_{-m}
    intervals: list  # (t_lo, t_hi) along e_s at each point
    truncated: list
    direction: np.ndarray
    p: np.ndarray
    m: int

    @property
    def lengths(self):
        return [b - a for a, b in self.intervals]

    def curve(self, i: int = -1):
        q, (a, b) = self.points[i], self.intervals[i]
        return q, a, b


def _ball_cut(q, d, lo, hi, c, r, side):
    """Shrink [lo, hi] to the part of q + t d outside B(c, r) that contains t = 0."""
    o = (q - c + side / 2) % side - side / 2
    B, C = 2 * (o @ d), o @ o - r * r
    disc = B * B - 4 * C
    if disc <= 0:
        return lo, hi, False
    t1, t2 = (-B - math.sqrt(disc)) / 2, (-B + math.sqrt(disc)) / 2
    cut = False
    if t1 > 0 and t1 < hi:
        hi, cut = t1, True
    if t2 < 0 and t2 > lo:
        lo, cut = t2, True
    return lo, hi, cut


def stable_segment_family(m: EigenBumpMap, V2: tuple, depth: int = 200, beta0_len: float | None = None) -> StableFamily:
    r = m.params["r"]
    c, side = m.center, m.side
    pc, prad = np.asarray(V2[0], float) % side, float(V2[1])
    Q = m.preimages_xy(*pc)
    ok = torus_distance_xy(Q, c, side) > 3 * r
    if not ok.any():
        raise ConstructionViolated("no preimage of the target outside B(c, 3r)")
    q = Q[int(np.argmax(ok))]
    es = m.e_s / np.linalg.norm(m.e_s)
    A = m.base.array.astype(float)
    mu = float(es @ A @ es)
    wr = min(0.5 * prad / np.linalg.norm(A, 2), r)
    half = (beta0_len if beta0_len is not None else min(1e-3, wr)) / 2
    points, intervals, truncated = [q], [(-half, half)], [False]
    branch = inverse_branch_avoiding(m, q, 3 * r, depth)
    lo, hi = -half, half
    k = 0
    while hi - lo <= r:
        k += 1
        if k > depth:
            raise GeometryViolated(f"stable curve still shorter than r after {depth} pullbacks")
        qk = branch[k]
        lo, hi = sorted((lo / mu, hi / mu))
        lo, hi, cut = _ball_cut(qk, es, lo, hi, c, r, side)
        if cut and hi - lo <= r:
            raise GeometryViolated(f"pullback {k} meets B(c, r) but has length {hi - lo:.3g} <= r")
        # forward check: g maps the new curve into the previous one
        t = np.linspace(lo, hi, 33)
        X, Y = m.eval_xy(np.mod(qk[0] + t * es[0], side), np.mod(qk[1] + t * es[1], side))
        prev_q, (plo, phi) = points[-1], intervals[-1]
        off = (np.column_stack([X, Y]) - prev_q + side / 2) % side - side / 2
        along = off @ es
        perp = np.abs(off @ np.array([-es[1], es[0]]))
        if perp.max() > 1e-9 or along.min() < plo - 1e-9 or along.max() > phi + 1e-9:
            raise GeometryViolated(f"pullback {k} does not map into the previous curve")
        points.append(qk)
        intervals.append((lo, hi))
        truncated.append(cut)
    return StableFamily(points, intervals, truncated, es, pc, k)


# ---------------------------------------------------------------------------
# transitivity experiments


@dataclass
class TransitivityResult:
    status: str  # pass | inconclusive
    route: str
    n0: int | None = None
    witness: TorusPoint | None = None
    witness_mp: tuple | None = field(default=None, repr=False)
    validated: bool = False
    details: dict = field(default_factory=dict)


def _in_ball(p, V, side) -> float:
    return float(torus_distance_xy(np.array([float(p[0]), float(p[1])]), np.asarray(V[0], float), side))


def _validate_witness(m: EndoMap, w, n0: int, V1, V2, prec: int) -> tuple[bool, float]:
    side = m.side
    if _in_ball(w, V1, side) >= V1[1]:
        return False, float("inf")
    if isinstance(m, (EigenBumpMap, LinearMap)):
        orbit = mp_orbit(m, w, n0, prec)
        end = orbit[-1]
    else:
        with mpmath.workprec(prec):
            x, y = mpmath.mpf(w[0]), mpmath.mpf(w[1])
            for _ in range(n0):
                x, y = m.eval_mp(x, y)
                x, y = _mp_mod(x, side), _mp_mod(y, side)
            end = (x, y)
    d = _in_ball(end, V2, side)
    return d < V2[1], d


def _expanding_route(m: EndoMap, V1, V2, budget: int, escape_budget: int) -> TransitivityResult:
    side = m.side
    A = m.base
    linear = isinstance(m, LinearMap)
    r = m.params.get("r", 0.25 * V1[1]) if not linear else 0.25 * V1[1]
    c1, rad1 = np.asarray(V1[0], float) % side, float(V1[1])
    cone = default_cone(m)
    length = min(rad1 / 2, 20 * r)
    w = np.asarray(cone.w)
    seed = TorusPolyline.segment(c1 - 0.5 * length * w, w, length, m.torus)
    details = {}
    if linear:
        with mpmath.workprec(256):
            y = (mpmath.mpf(float(c1[0])), mpmath.mpf(float(c1[1])))
        esc = EscapeResult(TorusPoint(*c1, m.torus), y, 0, True, 0, 256)
    else:
        esc = escape_point(m, seed, budget=escape_budget, r=r)
    details.update(n0_escape=esc.n0, escape_trims=esc.trims)
    rg = internal_radius_growth(m, esc.point_mp, (c1, rad1), r, budget=min(budget, escape_budget) if not linear else budget, prec=esc.prec)
    n2 = max(esc.n0, rg.n_nu)
    details.update(n_nu=rg.n_nu, n2=n2)
    cov = covering_exponent(A, 8 * 0.9 * r, side)
    details.update(covering_m=cov.m, delta_cert=cov.delta_cert)
    grow = max(abs(A.a) + abs(A.b), abs(A.c) + abs(A.d))
    center = np.asarray(getattr(m, "center", (0.0, 0.0)), float)
    R = getattr(m, "support_radius", 0.0)
    z = np.asarray(V2[0], float) % side
    for mm in range(cov.m, cov.m + 12):
        n0 = n2 + mm
        if n0 > budget:
            break
        prec = max(esc.prec, int(n0 * math.log2(max(grow, 2))) + 200)
        with mpmath.workprec(prec):
            x = mp_orbit(m, esc.point_mp, n2, prec)[-1]
            M = _ipow(A, mm)
            det = M[0][0] * M[1][1] - M[0][1] * M[1][0]
            adj = ((M[1][1], -M[0][1]), (-M[1][0], M[0][0]))
            zx, zy = mpmath.mpf(float(z[0])), mpmath.mpf(float(z[1]))
            kx0 = int(mpmath.nint(M[0][0] * x[0] + M[0][1] * x[1] - zx))
            ky0 = int(mpmath.nint(M[1][0] * x[0] + M[1][1] * x[1] - zy))
            found = None
            for dkx in (0, -1, 1):
                for dky in (0, -1, 1):
                    tx, ty = zx + (kx0 + dkx) * side, zy + (ky0 + dky) * side
                    dx = (adj[0][0] * tx + adj[0][1] * ty) / det - x[0]
                    dy = (adj[1][0] * tx + adj[1][1] * ty) / det - x[1]
                    if mpmath.sqrt(dx * dx + dy * dy) >= 0.9 * r:
                        continue
                    # the A-orbit of x + d must stay off the support ball
                    px, py = x[0] + dx, x[1] + dy
                    clear = True
                    for _ in range(mm):
                        if R > 0 and torus_distance_xy(np.array([float(px), float(py)]), center, side) <= R * 1.01:
                            clear = False
                            break
                        px, py = _mp_mod(A.a * px + A.b * py, side), _mp_mod(A.c * px + A.d * py, side)
                    if clear:
                        found = (dx, dy)
                        break
                if found:
                    break
            if not found:
                continue
            P = _ipow(A, n2)
            detp = P[0][0] * P[1][1] - P[0][1] * P[1][0]
            adjp = ((P[1][1], -P[0][1]), (-P[1][0], P[0][0]))
            dx, dy = found
            wx = _mp_mod(esc.point_mp[0] + (adjp[0][0] * dx + adjp[0][1] * dy) / detp, side)
            wy = _mp_mod(esc.point_mp[1] + (adjp[1][0] * dx + adjp[1][1] * dy) / detp, side)
        ok, dist = _validate_witness(m, (wx, wy), n0, (c1, rad1), (z, V2[1]), prec)
        details.update(final_distance=dist, prec=prec)
        if ok:
            wt = TorusPoint(float(wx) % side, float(wy) % side, m.torus)
            return TransitivityResult("pass", "expanding", n0, wt, (wx, wy), True, details)
    return TransitivityResult("inconclusive", "expanding", details=details)


_IC_CACHE: dict = {}


def saddle_constants(m: EigenBumpMap, samples: int = 1000, seed: int = 0) -> IntersectionConstants:
    key = (tuple(m.E[:, 0]), tuple(m.e_s), m.params["r"], samples, seed)
    if key not in _IC_CACHE:
        _IC_CACHE[key] = intersection_constants(m.E[:, 0], m.e_s, m.params["r"], samples=samples, seed=seed)
    return _IC_CACHE[key]


def _polyline_hits(curve: TorusPolyline, q, es, lo, hi, side):
    """Segments of `curve` crossing the straight curve q + t es, t in [lo, hi]; returns (index, s, t)."""
    L = curve.lift
    P = np.mod(L[:-1], side)
    D = np.diff(L, axis=0)
    o = (P - q + side / 2) % side - side / 2
    n = np.array([-es[1], es[0]])
    a0 = o @ n
    a1 = (o + D) @ n
    cand = np.nonzero(np.sign(a0) != np.sign(a1))[0]
    out = []
    for i in cand:
        s = a0[i] / (a0[i] - a1[i])
        t = float((o[i] + s * D[i]) @ es)
        if lo <= t <= hi:
            out.append((int(i), float(s), t))
    return out


def _saddle_route(m: EigenBumpMap, V1, V2, budget: int, samples: int) -> TransitivityResult:
    side = m.side
    ic = saddle_constants(m, samples=samples)
    details = {"a1": ic.a1, "M_len": ic.M_len}
    if not ic.validated:
        return TransitivityResult("inconclusive", "saddle", details=details)
    fam = stable_segment_family(m, V2)
    details["m"] = fam.m
    c1, rad1 = np.asarray(V1[0], float) % side, float(V1[1])
    w = np.asarray(m.cone_spec.w)
    length = rad1 / 2
    curve = TorusPolyline.segment(c1 - 0.5 * length * w, w, length, m.torus)
    seed_curve = curve
    policy = RefinementPolicy.for_map(m, cap=2_000_000)
    n1 = 0
    while curve.length <= ic.M_len:
        if n1 >= budget:
            return TransitivityResult("inconclusive", "saddle", details=details)
        curve = map_curve(m, curve, policy)
        n1 += 1
    details["n1"] = n1
    q, lo, hi = fam.curve(-1)
    hits = _polyline_hits(curve, q, fam.direction, lo, hi, side)
    details["crossings"] = len(hits)
    n0 = n1 + fam.m + 1
    es = fam.direction
    nrm = np.array([-es[1], es[0]])
    for i, s, _t in hits:
        p = curve.params
        tau_a, tau_b = p[i], p[i + 1]

        def F(tau):
            pts = seed_curve.lift[0] + np.outer(np.atleast_1d(tau), seed_curve.lift[-1] - seed_curve.lift[0])
            X, Y = np.mod(pts[:, 0], side), np.mod(pts[:, 1], side)
            for _ in range(n1):
                X, Y = m.eval_xy(X, Y)
            o = (np.column_stack([X, Y]) - q + side / 2) % side - side / 2
            return o @ nrm

        fa, fb = F(tau_a)[0], F(tau_b)[0]
        if np.sign(fa) == np.sign(fb):
            continue
        for _ in range(80):
            mid = 0.5 * (tau_a + tau_b)
            fm = F(mid)[0]
            if np.sign(fm) == np.sign(fa):
                tau_a, fa = mid, fm
            else:
                tau_b = mid
        tau = 0.5 * (tau_a + tau_b)
        wpt = np.mod(seed_curve.lift[0] + tau * (seed_curve.lift[-1] - seed_curve.lift[0]), side)
        prec = 200 + int(n0 * 2)
        with mpmath.workprec(prec):
            wm = (mpmath.mpf(float(wpt[0])), mpmath.mpf(float(wpt[1])))
        ok, dist = _validate_witness(m, wm, n0, (c1, rad1), V2, prec)
        details["final_distance"] = dist
        if ok:
            return TransitivityResult("pass", "saddle", n0, TorusPoint(float(wpt[0]), float(wpt[1]), m.torus), wm, True, details)
    return TransitivityResult("inconclusive", "saddle", details=details)


def _forward_route(m: EndoMap, V1, V2, budget: int, samples: int, seed: int) -> TransitivityResult:
    side = m.side
    rng = np.random.default_rng(seed)
    c1, rad1 = np.asarray(V1[0], float) % side, float(V1[1])
    c2, rad2 = np.asarray(V2[0], float) % side, float(V2[1])
    rad = 0.95 * rad1 * np.sqrt(rng.uniform(0, 1, samples))
    ang = rng.uniform(0, 2 * np.pi, samples)
    P0 = np.mod(c1 + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]), side)
    X, Y = P0[:, 0].copy(), P0[:, 1].copy()
    for n in range(1, budget + 1):
        X, Y = m.eval_xy(X, Y)
        d = torus_distance_xy(np.column_stack([X, Y]), c2, side)
        idx = np.nonzero(d < 0.9 * rad2)[0]
        for i in idx[:8]:
            prec = 200 + int(n * math.log2(max(abs(m.base.a) + abs(m.base.b), abs(m.base.c) + abs(m.base.d), 2)))
            with mpmath.workprec(prec):
                wm = (mpmath.mpf(float(P0[i, 0])), mpmath.mpf(float(P0[i, 1])))
            try:
                ok, dist = _validate_witness(m, wm, n, (c1, rad1), (c2, rad2), prec)
            except NotImplementedError:
                # no high-precision evaluation: re-check the float orbit
                x, y = P0[i:i + 1, 0], P0[i:i + 1, 1]
                for _ in range(n):
                    x, y = m.eval_xy(x, y)
                dist = float(torus_distance_xy(np.array([x[0], y[0]]), c2, side))
                ok = dist < rad2
            if ok:
                return TransitivityResult("pass", "forward-search", n, TorusPoint(*P0[i], m.torus), wm, True, {"final_distance": dist})
    return TransitivityResult("inconclusive", "forward-search", details={"samples": samples, "budget": budget})


def _mp_chain(m: EndoMap, chain: np.ndarray, prec: int, iters: int = 60):
    """Re-solve an inverse branch root -> node in high precision (Newton with the float Jacobian)."""
    side = m.side
    with mpmath.workprec(prec):
        sd = mpmath.mpf(side)
        tol = mpmath.mpf(2) ** (-prec + 40)
        cx, cy = mpmath.mpf(float(chain[0, 0])), mpmath.mpf(float(chain[0, 1]))
        for p in chain[1:]:
            x, y = mpmath.mpf(float(p[0])), mpmath.mpf(float(p[1]))
            for _ in range(iters):
                X, Y = m.eval_mp(x, y)
                fx = _mp_mod(X - cx + sd / 2, sd) - sd / 2
                fy = _mp_mod(Y - cy + sd / 2, sd) - sd / 2
                if abs(fx) < tol and abs(fy) < tol:
                    break
                J = m.jac_xy(np.array([float(x)]), np.array([float(y)]))
                J = np.asarray(J, dtype=float).reshape(2, 2)
                Ji = np.linalg.inv(J)
                x -= Ji[0, 0] * fx + Ji[0, 1] * fy
                y -= Ji[1, 0] * fx + Ji[1, 1] * fy
            else:
                return None
            cx, cy = _mp_mod(x, sd), _mp_mod(y, sd)
    return cx, cy


def _backward_route(m: EndoMap, V1, V2, budget: int, depth_cap: int = 30):
    """Preimage tree of the center of V2; a node inside V1 is a witness once its branch is re-solved in mp."""
    side = m.side
    c1, rad1 = np.asarray(V1[0], float) % side, float(V1[1])
    c2 = np.asarray(V2[0], float) % side
    try:
        tree = preimage_tree(m, c2, min(budget, depth_cap), prune_res=256)
    except (NotImplementedError, ConstructionViolated):
        return None
    d = torus_distance_xy(tree.points, c1, side)
    hits = np.nonzero(d < 0.9 * rad1)[0]
    hits = hits[np.argsort(tree.depth[hits], kind="stable")]
    grow = max(abs(m.base.a) + abs(m.base.b), abs(m.base.c) + abs(m.base.d), 2)
    for i in hits[:8]:
        chain = [i]
        while tree.parent[chain[-1]] >= 0:
            chain.append(tree.parent[chain[-1]])
        n0 = len(chain) - 1
        prec = 200 + int(2 * n0 * math.log2(grow))
        try:
            wm = _mp_chain(m, tree.points[chain[::-1]], prec)
        except NotImplementedError:
            return None
        if wm is None:
            continue
        ok, dist = _validate_witness(m, wm, n0, (c1, rad1), V2, prec)
        if ok:
            wt = TorusPoint(float(wm[0]) % side, float(wm[1]) % side, m.torus)
            return TransitivityResult("pass", "backward-tree", n0, wt, wm, True, {"final_distance": dist, "tree_nodes": len(tree)})
    return None


def transitivity_experiment(m: EndoMap, V1: tuple, V2: tuple, budget: int = 200, seed: int = 0, samples: int = 4096, escape_budget: int = 200, ic_samples: int = 1000) -> TransitivityResult:
    """Find n0 and w in V1 with m^n0(w) in V2, validated in high precision; inconclusive when the budget runs out."""
    expanding = min(abs(e) for e in m.base.eigenvalues()) > 1
    if isinstance(m, EigenBumpMap) and m.variant == "saddle":
        return _saddle_route(m, V1, V2, budget, ic_samples)
    if expanding and isinstance(m, (EigenBumpMap, LinearMap)):
        return _expanding_route(m, V1, V2, budget, escape_budget)
    res = _backward_route(m, V1, V2, budget)
    if res is not None:
        return res
    # float orbits of maps like x -> 6x lose a few bits per step; keep the forward horizon short
    return _forward_route(m, V1, V2, min(budget, 16), samples, seed)


# ---------------------------------------------------------------------------
# non-hyperbolic manifolds


@dataclass
class ClaimStep:
    x: float
    y_lo: float
    y_hi: float
    branch: str
    trimmed: bool = False

    @property
    def diameter(self):
        return self.y_hi - self.y_lo


def claim_pullback(m: NonHyperbolicMap, x: float, y_lo: float, y_hi: float, steps: int) -> list:
    """Vertical segments s_{-1}, s_{-2}, ... with the A0/A1 branch rule (chart coordinates).

    A0 branch when the current segment sits in [0, h(0)], A1 branch when it sits in (h(0), g^-1(h(0))).
    A segment straddling h(0) is first cut there, keeping the longer piece (marked trimmed).
    Stops early once a segment reaches y = 0, where it meets the unstable manifold of the origin.
    """
    h0 = float(m.h(0.0))
    top = float(m.g.inverse(h0))
    lam = m.lam
    if not (0 <= y_lo < y_hi <= h0):
        raise InvalidArgument("start segment must lie in [0, h(0)]")
    out = [ClaimStep(x, y_lo, y_hi, "start")]
    for _ in range(steps):
        s = out[-1]
        if s.y_lo <= 0:
            break
        lo, hi, trimmed = s.y_lo, s.y_hi, False
        if lo < h0 < hi:
            lo, hi = (lo, h0) if h0 - lo >= hi - h0 else (h0, hi)
            trimmed = True
        if hi <= h0:
            xn, f, br = s.x / lam, m.g, "A0"
        else:
            xn, f, br = (s.x + 2) / lam, m.h, "A1"
        a, b = float(f.inverse(lo)), float(f.inverse(hi))
        a, b = min(a, b), max(a, b)
        if a < -1e-12 or b > top + 1e-12:
            raise GeometryViolated(f"pullback left [0, g^-1(h(0))]: [{a:.4g}, {b:.4g}]")
        out.append(ClaimStep(xn, a, b, br, trimmed))
    return out


def _chunks(curve: TorusPolyline, size: int):
    L, p = curve.lift, curve.params
    out = []
    for a in range(0, len(L) - 1, size):
        b = min(a + size, len(L) - 1)
        out.append(TorusPolyline(L[a:b + 1], curve.torus, None if p is None else p[a:b + 1]))
    return out


def manifold_density(
    m: NonHyperbolicMap,
    which: str,
    iterations: int,
    eps: float = 0.05,
    grid_res: int = 32,
    prune_res: int = 128,
    chunk: int = 64,
    chunk_cap: int = 200_000,
    h_max: float = 0.01,
) -> DensityReport:
    """Coverage of the unstable (forward images of W^u_loc) or stable (preimages of {x = 0}) manifold of p0."""
    if which not in ("unstable", "stable"):
        raise InvalidArgument("which must be 'unstable' or 'stable'")
    side = m.side
    fps = fixed_points(m)
    p0 = next((f for f in fps if f.cls == "saddle" and torus_distance_xy(f.point.xy, np.zeros(2), side) < 1e-8), None)
    if p0 is None:
        raise ConstructionViolated("saddle fixed point p0 = (0, 0) not found")
    visited = np.zeros(prune_res * prune_res, dtype=bool)
    inconclusive = False
    if which == "unstable":
        half = m.half
        seg = TorusPolyline.segment((-half * 0.999, 0.0), (1, 0), 2 * half * 0.999, m.torus, n=max(2, int(2 * half / h_max) + 1))
        acc = [seg.vertices]
        visited[_cells(seg.vertices, side, prune_res)] = True
        frontier = [seg]
        policy = RefinementPolicy(h_max, cap=10_000_000)
        for _ in range(iterations):
            nxt = []
            for c in frontier:
                for piece in _chunks(map_curve(m, c, policy), chunk):
                    cells = _cells(piece.vertices, side, prune_res)
                    if visited[cells].all():
                        continue
                    visited[cells] = True
                    nxt.append(piece)
                    acc.append(piece.vertices)
            if len(nxt) > chunk_cap:
                inconclusive = True
                break
            frontier = nxt
            if not frontier:
                break
        pts = np.vstack(acc)
    else:
        ys = np.linspace(0, side, 257)[:-1]
        x1 = m.params.get("x1", None)
        if x1 is not None:
            ys = ys[np.abs(ys - x1) > 1e-9]
        cur = np.column_stack([np.zeros(len(ys)), ys])
        visited[_cells(cur, side, prune_res)] = True
        acc = [cur]
        for _ in range(iterations):
            P, _ = preimages_batch(m, cur)
            cells = _cells(P, side, prune_res)
            fresh = ~visited[cells]
            # keep every preimage that opens a new cell, plus all samples on the same curve piece
            keep = fresh
            visited[cells[keep]] = True
            cur = P[keep]
            if len(cur) > chunk_cap:
                inconclusive = True
                break
            acc.append(cur)
            if len(cur) == 0:
                break
        pts = np.vstack(acc)
    rep = density_report(pts, side, eps, grid_res, inconclusive=inconclusive, note=f"{which} manifold of p0, evidence")
    rep.points = pts
    return rep
