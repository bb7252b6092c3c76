"""Flat-torus geometry: wrapping, distances, lifts and the action on the fundamental group."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class InvalidArgument(ValueError):
    pass


class InconsistentLift(RuntimeError):
    """Raised when a map's lift does not translate lattice vectors by an integer matrix."""


@dataclass(frozen=True)
class Torus:
    side: float = 1.0

    def __post_init__(self):
        if not (self.side > 0 and math.isfinite(self.side)):
            raise InvalidArgument(f"torus side must be positive, got {self.side}")

    def wrap(self, v):
        """Reduce coordinates (scalars or arrays) into [0, side)."""
        v = np.asarray(v, dtype=float)
        w = np.mod(v, self.side)
        # np.mod can return `side` for tiny negative inputs
        return np.where(w >= self.side, 0.0, w)

    def centered(self, v):
        """Minimal lift of a coordinate difference, in [-side/2, side/2)."""
        v = np.asarray(v, dtype=float)
        return v - self.side * np.floor(v / self.side + 0.5)


@dataclass(frozen=True)
class TorusPoint:
    x: float
    y: float
    torus: Torus = field(default_factory=Torus)

    def __post_init__(self):
        s = self.torus.side
        if not (0.0 <= self.x < s and 0.0 <= self.y < s):
            raise InvalidArgument(f"({self.x}, {self.y}) outside fundamental domain; use wrap()")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


class Vector2(NamedTuple):
    v1: float
    v2: float

    def norm(self) -> float:
        return math.hypot(self.v1, self.v2)


class Displacement(NamedTuple):
    vector: Vector2
    ambiguous: bool


@dataclass(frozen=True)
class IntMatrix2:
    a: int
    b: int
    c: int
    d: int

    @classmethod
    def from_array(cls, m) -> "IntMatrix2":
        m = np.asarray(m)
        return cls(int(m[0, 0]), int(m[0, 1]), int(m[1, 0]), int(m[1, 1]))

    @property
    def array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=float)

    @property
    def det(self) -> int:
        return self.a * self.d - self.b * self.c

    @property
    def trace(self) -> int:
        return self.a + self.d

    @property
    def discriminant(self) -> int:
        return self.trace**2 - 4 * self.det

    def eigenvalues(self) -> tuple[float, float]:
        """Real eigenvalues ordered by decreasing modulus."""
        if self.discriminant < 0:
            raise InvalidArgument("matrix has non-real eigenvalues")
        s = math.sqrt(self.discriminant)
        e1, e2 = (self.trace + s) / 2, (self.trace - s) / 2
        return (e1, e2) if abs(e1) >= abs(e2) else (e2, e1)

    def check_family_base(self) -> None:
        if abs(self.det) < 2:
            raise InvalidArgument(f"|det| = {abs(self.det)} < 2")
        if self.discriminant <= 0:
            raise InvalidArgument("base matrix needs two distinct real eigenvalues")

    def __matmul__(self, other):
        return self.array @ np.asarray(other, dtype=float)


def wrap(raw, torus: Torus = Torus()) -> TorusPoint:
    x, y = (float(v) for v in raw)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidArgument(f"non-finite coordinates {raw!r}")
    wx, wy = torus.wrap([x, y])
    return TorusPoint(float(wx), float(wy), torus)


def _same_torus(p: TorusPoint, q: TorusPoint) -> Torus:
    if p.torus != q.torus:
        raise InvalidArgument("points live on different tori")
    return p.torus


def torus_distance(p: TorusPoint, q: TorusPoint) -> float:
    t = _same_torus(p, q)
    d = t.centered(np.array([q.x - p.x, q.y - p.y]))
    return float(math.hypot(d[0], d[1]))


def torus_distance_xy(p, q, side: float = 1.0):
    """Vectorised torus distance between (..., 2) coordinate arrays."""
    d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    d = d - side * np.floor(d / side + 0.5)
    return np.hypot(d[..., 0], d[..., 1])


def shortest_displacement(p: TorusPoint, q: TorusPoint) -> Displacement:
    t = _same_torus(p, q)
    raw = np.array([q.x - p.x, q.y - p.y])
    d = t.centered(raw)
    # centered() maps exact half-side ties to -side/2; prefer the positive representative
    half = t.side / 2
    ambiguous = bool(np.any(np.isclose(np.abs(d), half, rtol=0, atol=1e-15 * t.side)))
    d = np.where(np.isclose(d, -half, rtol=0, atol=1e-15 * t.side), half, d)
    return Displacement(Vector2(float(d[0]), float(d[1])), ambiguous)


HOMOLOGY_BASE_POINTS = ((0.1, 0.1), (0.3, 0.7), (0.6, 0.2), (0.8, 0.9))


def homology_action(endo, steps: int = 4096, tol: float = 1e-6) -> IntMatrix2:
    """Integer matrix M with F(x + side e_j) - F(x) = side M e_j for a lift F of `endo`.

    The lift is reconstructed by walking a fine path and summing minimal image
    displacements, so only wrapped evaluations of the map are needed.
    """
    torus = endo.torus
    if torus is None:
        raise InvalidArgument("homology action needs a torus map")
    s = torus.side
    t = np.linspace(0.0, 1.0, steps + 1)
    columns = []
    for j in range(2):
        e = np.zeros(2)
        e[j] = s
        estimates = []
        for bx, by in HOMOLOGY_BASE_POINTS:
            path = np.array([bx * s, by * s]) + t[:, None] * e
            img = np.stack(endo.eval_xy(torus.wrap(path[:, 0]), torus.wrap(path[:, 1])), axis=-1)
            steps_img = torus.centered(np.diff(img, axis=0))
            if np.max(np.abs(steps_img)) > s / 4:
                raise InconsistentLift("path step image too large; refine the homology walk")
            estimates.append(steps_img.sum(axis=0) / s)
        estimates = np.array(estimates)
        spread = np.ptp(estimates, axis=0).max()
        col = np.rint(estimates.mean(axis=0))
        if spread > tol or np.max(np.abs(estimates - col)) > tol:
            raise InconsistentLift(f"lattice translate of e_{j} gives {estimates.tolist()}")
        columns.append(col)
    m = np.column_stack(columns).astype(int)
    return IntMatrix2.from_array(m)
