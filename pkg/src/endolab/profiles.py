"""One-dimensional bump profiles and cutoffs used to perturb linear torus maps.

All profiles are vectorised: they accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import singledispatch
from typing import Callable

import numpy as np
from scipy.integrate import simpson

_SIXTEEN_FIFTEENTHS = 16.0 / 15.0


def _exp_bump(u):
    """b(u) = exp(1 - 1/(1 - u^2)) on |u| < 1, zero elsewhere, and its derivative."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    one_minus = np.where(inside, 1.0 - u * u, 1.0)
    b = np.where(inside, np.exp(1.0 - 1.0 / one_minus), 0.0)
    db = np.where(inside, b * (-2.0 * u / one_minus**2), 0.0)
    return b, db


def _quartic_bump(u):
    """beta(u) = (1 - u^2)^2 on [-1, 1]; C^1 with integral 16/15."""
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)


def _quartic_bump_integral(u):
    u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
    return u - 2.0 * u**3 / 3.0 + u**5 / 5.0 + 8.0 / 15.0


@dataclass(frozen=True)
class BumpPsi:
    theta: float
    height: float
    center: float = 0.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    def __call__(self, x):
        return self.height * _exp_bump((np.asarray(x, dtype=float) - self.center) / self.theta)[0]

    def deriv(self, x):
        return self.height / self.theta * _exp_bump((np.asarray(x, dtype=float) - self.center) / self.theta)[1]

    def max_slope(self, n: int = 100_000) -> float:
        """max |psi'| by a dense scan of the support."""
        x = self.center + self.theta * np.linspace(-1.0, 1.0, n + 2)[1:-1]
        return float(np.max(np.abs(self.deriv(x))))


@dataclass(frozen=True)
class BumpPhi:
    """Compactly supported profile on [base, base + delta] with phi'(base + delta/2) = midslope.

    kind="peaked": phi' is a narrow positive quartic peak of relative width `peak_width`
    minus a shallow wide quartic well, so phi' >= -2w/(1-2w) everywhere.
    kind="quintic": phi = (16/delta^4) u^2 (delta-u)^2 (u - delta/2), phi' ranges over [-0.8, 1].
    """

    delta: float
    base: float = 0.0
    midslope: float = 1.0
    kind: str = "peaked"
    peak_width: float = 0.05

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.kind not in ("peaked", "quintic"):
            raise ValueError(f"unknown phi kind {self.kind!r}")
        if not 0 < self.peak_width < 0.5:
            raise ValueError("peak_width must lie in (0, 1/2)")

    @property
    def _well_depth(self) -> float:
        w = self.peak_width
        return 2.0 * w / (1.0 - 2.0 * w)

    def _shape(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "quintic":
            tc = np.clip(t, 0.0, 1.0)
            return 16.0 * tc**2 * (1.0 - tc) ** 2 * (tc - 0.5)
        w, k = self.peak_width, self._well_depth
        return (1.0 + k) * w * _quartic_bump_integral((t - 0.5) / w) - 0.5 * k * _quartic_bump_integral(2.0 * t - 1.0)

    def _shape_deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "quintic":
            inside = (t > 0.0) & (t < 1.0)
            d = 16.0 * (-t * (1.0 - t) * (1.0 - 2.0 * t) ** 2 + t**2 * (1.0 - t) ** 2)
            return np.where(inside, d, 0.0)
        w, k = self.peak_width, self._well_depth
        return (1.0 + k) * _quartic_bump((t - 0.5) / w) - k * _quartic_bump(2.0 * t - 1.0)

    def __call__(self, y):
        t = (np.asarray(y, dtype=float) - self.base) / self.delta
        inside = (t > 0.0) & (t < 1.0)
        return np.where(inside, self.midslope * self.delta * self._shape(t), 0.0)

    def deriv(self, y):
        t = (np.asarray(y, dtype=float) - self.base) / self.delta
        return self.midslope * self._shape_deriv(t)

    def slope_range(self, n: int = 200_001) -> tuple[float, float]:
        t = np.linspace(0.0, 1.0, n)
        d = self.midslope * self._shape_deriv(t)
        return float(d.min()), float(d.max())

    def max_abs(self, n: int = 200_001) -> float:
        y = self.base + self.delta * np.linspace(0.0, 1.0, n)
        return float(np.max(np.abs(self(y))))


def _smooth_ramp(t, rounding: float):
    """Monotone C^1 ramp 0 -> 1 on [0, 1]: linear core, quadratic corners of width `rounding`."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    k = 1.0 / (1.0 - rounding)
    lo = k * t * t / (2 * rounding)
    mid = k * (t - rounding / 2)
    hi = 1.0 - k * (1.0 - t) ** 2 / (2 * rounding)
    val = np.where(t < rounding, lo, np.where(t > 1.0 - rounding, hi, mid))
    dlo = k * t / rounding
    dhi = k * (1.0 - t) / rounding
    der = np.where(t < rounding, dlo, np.where(t > 1.0 - rounding, dhi, k))
    return val, der


@dataclass(frozen=True)
class FoldCutoff:
    """Even cutoff: 0 on |y| <= delta/2, 1 on |y| >= delta, monotone ramp in between."""

    delta: float
    rounding: float = 0.05

    @property
    def slope_excess(self) -> float:
        """eta in max|c'| = (2/delta)(1 + eta)."""
        return 1.0 / (1.0 - self.rounding) - 1.0

    def _t(self, y):
        return (np.abs(np.asarray(y, dtype=float)) - self.delta / 2) / (self.delta / 2)

    def __call__(self, y):
        return _smooth_ramp(self._t(y), self.rounding)[0]

    def deriv(self, y):
        y = np.asarray(y, dtype=float)
        t = self._t(y)
        inside = (t > 0.0) & (t < 1.0)
        return np.where(inside, np.sign(y) * _smooth_ramp(t, self.rounding)[1] * 2.0 / self.delta, 0.0)


@dataclass(frozen=True)
class RadialCutoff:
    """Cutoff in s = x^2 + y^2: 0 for s <= (delta/2)^2, 1 for s >= delta^2."""

    delta: float
    rounding: float = 0.05

    @property
    def _span(self) -> float:
        return 0.75 * self.delta**2

    def _t(self, s):
        return (np.asarray(s, dtype=float) - 0.25 * self.delta**2) / self._span

    def __call__(self, s):
        return _smooth_ramp(self._t(s), self.rounding)[0]

    def deriv(self, s):
        t = self._t(s)
        inside = (t > 0.0) & (t < 1.0)
        return np.where(inside, _smooth_ramp(t, self.rounding)[1] / self._span, 0.0)

    @property
    def max_deriv(self) -> float:
        return 1.0 / (1.0 - self.rounding) / self._span


# ---------------------------------------------------------------------------
# constraint reports


@dataclass
class Constraint:
    name: str
    passed: bool
    margin: float


@dataclass
class ConstraintReport:
    profile: object
    constraints: list[Constraint] = field(default_factory=list)
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.constraints)

    def __getitem__(self, name: str) -> Constraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, name: str, margin: float, passed: bool | None = None):
        margin = float(margin)
        self.constraints.append(Constraint(name, margin > 0 if passed is None else bool(passed), margin))


def fd_derivative_error(f: Callable, df: Callable, points, h: float) -> float:
    """Worst error of the analytic derivative against central differences, relative to sup|f'|."""
    points = np.asarray(points, dtype=float)
    fd = (f(points + h) - f(points - h)) / (2 * h)
    an = df(points)
    scale = max(np.max(np.abs(an)), 1e-300)
    return float(np.max(np.abs(fd - an) / np.maximum(np.abs(an), 1e-2 * scale)))


@singledispatch
def profile_constraint_report(profile, n: int = 10_000, seed: int = 0) -> ConstraintReport:
    raise TypeError(f"no constraint report for {type(profile).__name__}")


@profile_constraint_report.register
def _(profile: BumpPsi, n: int = 10_000, seed: int = 0) -> ConstraintReport:
    rep = ConstraintReport(profile)
    c, th = profile.center, profile.theta
    rep.add("peak value", 1.0 - abs(profile(c) - profile.height), passed=abs(profile(c) - profile.height) < 1e-12)
    outside = np.concatenate([c - th - th * np.linspace(0, 2, n // 2), c + th + th * np.linspace(0, 2, n // 2)])
    rep.add("zero off support", -float(np.max(np.abs(profile(outside)))), passed=np.all(profile(outside) == 0))
    t = th * np.random.default_rng(seed).uniform(0, 1.5, 100)
    asym = float(np.max(np.abs(profile(c + t) - profile(c - t))))
    rep.add("even", -asym, passed=asym <= 1e-15 * max(abs(profile.height), 1.0))
    # away from the flat ends the slope must be strictly positive on the left, negative on the right
    u = np.linspace(-0.95, 0.95, n)
    u = u[np.abs(u) > 1e-6]
    signed = -np.sign(u) * profile.deriv(c + th * u)
    rep.add("unique critical point", float(np.min(signed)))
    pts = c + th * np.random.default_rng(seed + 1).uniform(-0.95, 0.95, 1000)
    err = fd_derivative_error(profile, profile.deriv, pts, 1e-6 * th)
    rep.add("derivative matches finite differences", 1e-5 - err)
    m4, m5 = profile.max_slope(10_000), profile.max_slope(100_000)
    rep.values.update(M=m5, M_coarse=m4)
    rep.add("max slope reproducible", 1e-3 - abs(m4 - m5) / max(m5, 1e-300))
    return rep


@profile_constraint_report.register
def _(profile: BumpPhi, n: int = 10_000, seed: int = 0) -> ConstraintReport:
    rep = ConstraintReport(profile)
    b, d = profile.base, profile.delta
    ends = np.array([b, b + d])
    rep.add("vanishes at support ends", -float(np.max(np.abs(profile(ends)))), passed=np.max(np.abs(profile(ends))) <= 1e-10 * d)
    one_sided = np.abs(profile.deriv(np.array([b, b + d]))).max()
    rep.add("C1 gluing", -float(one_sided), passed=one_sided <= 1e-12)
    outside = np.concatenate([b - d * np.linspace(0, 1, n // 2), b + d + d * np.linspace(0, 1, n // 2)])
    rep.add("zero off support", 0.0, passed=np.all(profile(outside) == 0))
    mid = float(profile.deriv(b + d / 2))
    rep.add("midpoint slope", 1e-12 - abs(mid - profile.midslope))
    amax = profile.max_abs(max(n, 10_000) * 10 + 1)
    rep.values.update(max_abs_over_delta=amax / d, slope_range=profile.slope_range())
    rep.add("max|phi| <= delta", 1.0 - amax / d)
    y = np.linspace(b, b + d, 100_001)
    integral = float(simpson(profile.deriv(y), x=y))
    rep.add("integral of phi' vanishes", 1e-10 * max(1.0, abs(profile.midslope)) - abs(integral) / d)
    pts = b + d * np.random.default_rng(seed).uniform(0.001, 0.999, 1000)
    err = fd_derivative_error(profile, profile.deriv, pts, 1e-6 * d)
    rep.add("derivative matches finite differences", 1e-5 - err)
    return rep


@profile_constraint_report.register
def _(profile: FoldCutoff, n: int = 10_000, seed: int = 0) -> ConstraintReport:
    rep = ConstraintReport(profile)
    d = profile.delta
    y = np.linspace(-2 * d, 2 * d, n * 4 + 1)
    v = profile(y)
    rep.add("values in [0,1]", 0.0, passed=bool(np.all((v >= 0) & (v <= 1))))
    plateau = np.abs(y) <= d / 2
    far = np.abs(y) >= d
    rep.add("zero plateau", 0.0, passed=bool(np.all(v[plateau] == 0)))
    rep.add("one outside", 0.0, passed=bool(np.all(np.abs(v[far] - 1) <= 1e-15)))
    right = y >= 0
    rep.add("monotone", float(np.min(np.diff(v[right]))) + 1e-15)
    rep.add("even", -float(np.max(np.abs(profile(y) - profile(-y)))) + 1e-15)
    slope = float(np.max(np.abs(profile.deriv(y))))
    eta = slope * d / 2 - 1.0
    rep.values.update(max_slope=slope, nominal_bound=2.0 / d, eta=eta)
    rep.add("slope within (2/delta)(1+eta), eta <= 0.12", 0.12 - eta)
    return rep


@profile_constraint_report.register
def _(profile: RadialCutoff, n: int = 10_000, seed: int = 0) -> ConstraintReport:
    rep = ConstraintReport(profile)
    d = profile.delta
    s = np.linspace(0, 2 * d * d, n * 4 + 1)
    v = profile(s)
    rep.add("values in [0,1]", 0.0, passed=bool(np.all((v >= 0) & (v <= 1))))
    rep.add("zero inside", 0.0, passed=bool(np.all(v[s <= d * d / 4] == 0)))
    rep.add("one outside", 0.0, passed=bool(np.all(np.abs(v[s >= d * d] - 1) <= 1e-15)))
    rep.add("monotone", float(np.min(np.diff(v))) + 1e-15)
    slope = float(np.max(np.abs(profile.deriv(s))))
    rep.values.update(max_ds=slope)
    rep.add("ds bound", profile.max_deriv * (1 + 1e-12) - slope)
    return rep
