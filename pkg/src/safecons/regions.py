"""Projectable convex regions and the expanding constraint family.

Every region exposes an exact Euclidean projection, a support function and
an inward offset (``inset``).  An :class:`ExpandingSchedule` erodes a base
region by a gap that decays in time, which gives nested sets growing back
to the base region.  Distances between an eroded set and the outer region
are computed exactly from support functions and vertices wherever possible.
"""

from __future__ import annotations

import itertools
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection as _QhullHalfspaces

from .errors import ConfigError, InvariantViolation, NumericalError

__all__ = [
    "ConvexRegion",
    "Ball",
    "Box",
    "HalfspaceIntersection",
    "ExpandingSchedule",
    "ScheduleCheck",
    "ScheduleReport",
    "project",
    "inclusion_slack",
    "safety_radius",
    "hausdorff_gap",
    "one_sided_distances",
    "validate_schedule",
]


def _unit_directions(dim, n, rng):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    u = rng.standard_normal((n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


class ConvexRegion(ABC):
    """Compact convex set with nonempty interior."""

    dim: int

    @abstractmethod
    def project(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection of a single point."""

    def project_rows(self, X: np.ndarray) -> np.ndarray:
        """Project each row of ``X``."""
        return np.array([self.project(x) for x in np.atleast_2d(X)])

    @abstractmethod
    def support(self, u: np.ndarray) -> float:
        """Support function ``max_{x in region} <u, x>``."""

    @abstractmethod
    def signed_margin(self, x: np.ndarray) -> float:
        """Distance to the boundary, positive inside and negative outside."""

    @abstractmethod
    def inset(self, d: float) -> "ConvexRegion":
        """The set of points whose distance to the complement is at least d."""

    @abstractmethod
    def max_distance_from(self, point: np.ndarray) -> float:
        """``max_{x in region} ||x - point||``."""

    @abstractmethod
    def sample_boundary(self, n: int, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def sample_interior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def curvature_bound(self) -> float:
        """Upper bound on the normal curvature of the boundary."""

    def contains(self, x, tol=0.0) -> bool:
        return self.signed_margin(np.asarray(x, dtype=float)) >= -tol

    def signed_margin_rows(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.signed_margin(x) for x in np.atleast_2d(X)])

    @property
    def interior_point(self) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Ball(ConvexRegion):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if c.ndim != 1:
            raise ConfigError("ball center must be a vector")
        if not self.radius > 0:
            raise ConfigError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size

    @property
    def interior_point(self):
        return self.center.copy()

    def project(self, x):
        d = np.asarray(x, dtype=float) - self.center
        n = np.linalg.norm(d)
        if n <= self.radius:
            return np.array(x, dtype=float)
        return self.center + d * (self.radius / n)

    def project_rows(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        D = X - self.center
        n = np.linalg.norm(D, axis=1, keepdims=True)
        out = X.copy()
        far = n[:, 0] > self.radius
        out[far] = self.center + D[far] * (self.radius / n[far])
        return out

    def support(self, u):
        u = np.asarray(u, dtype=float)
        return float(u @ self.center + self.radius * np.linalg.norm(u))

    def signed_margin(self, x):
        return float(self.radius - np.linalg.norm(np.asarray(x) - self.center))

    def signed_margin_rows(self, X):
        X = np.atleast_2d(X)
        return self.radius - np.linalg.norm(X - self.center, axis=1)

    def inset(self, d):
        if d >= self.radius:
            raise InvariantViolation(
                f"inset {d} swallows ball of radius {self.radius}"
            )
        return Ball(self.center, self.radius - d)

    def max_distance_from(self, point):
        return float(np.linalg.norm(np.asarray(point) - self.center) + self.radius)

    def sample_boundary(self, n, rng):
        u = rng.standard_normal((n, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return self.center + self.radius * u

    def sample_interior(self, n, rng):
        u = rng.standard_normal((n, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = self.radius * rng.uniform(0, 1, (n, 1)) ** (1.0 / self.dim)
        return self.center + r * u

    @property
    def curvature_bound(self):
        return 1.0 / self.radius


@dataclass(frozen=True, eq=False)
class Box(ConvexRegion):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("box bounds must be vectors of equal length")
        if not np.all(lo < hi):
            raise ConfigError("box requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    @property
    def interior_point(self):
        return 0.5 * (self.lower + self.upper)

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def project_rows(self, X):
        return np.clip(np.atleast_2d(np.asarray(X, dtype=float)), self.lower, self.upper)

    def support(self, u):
        u = np.asarray(u, dtype=float)
        return float(np.sum(np.maximum(u * self.lower, u * self.upper)))

    def signed_margin(self, x):
        x = np.asarray(x, dtype=float)
        clipped = np.clip(x, self.lower, self.upper)
        outside = np.linalg.norm(x - clipped)
        if outside > 0:
            return -float(outside)
        return float(min(np.min(x - self.lower), np.min(self.upper - x)))

    def signed_margin_rows(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        outside = np.linalg.norm(X - np.clip(X, self.lower, self.upper), axis=1)
        inside = np.minimum((X - self.lower).min(axis=1), (self.upper - X).min(axis=1))
        return np.where(outside > 0, -outside, inside)

    def inset(self, d):
        if np.any(self.lower + d >= self.upper - d):
            raise InvariantViolation(f"inset {d} swallows box")
        return Box(self.lower + d, self.upper - d)

    def vertices(self):
        return np.array(list(itertools.product(*zip(self.lower, self.upper))))

    def halfspaces(self):
        eye = np.eye(self.dim)
        return np.vstack([eye, -eye]), np.concatenate([self.upper, -self.lower])

    def max_distance_from(self, point):
        p = np.asarray(point, dtype=float)
        far = np.maximum(np.abs(p - self.lower), np.abs(p - self.upper))
        return float(np.linalg.norm(far))

    def sample_boundary(self, n, rng):
        pts = rng.uniform(self.lower, self.upper, (n, self.dim))
        axis = rng.integers(0, self.dim, n)
        side = rng.integers(0, 2, n)
        pts[np.arange(n), axis] = np.where(side == 0, self.lower[axis], self.upper[axis])
        return pts

    def sample_interior(self, n, rng):
        return rng.uniform(self.lower, self.upper, (n, self.dim))

    @property
    def curvature_bound(self):
        return 0.0


def _chebyshev_center(normals, offsets):
    # max r  s.t.  n_k . x + r ||n_k|| <= b_k
    dim = normals.shape[1]
    norms = np.linalg.norm(normals, axis=1)
    c = np.zeros(dim + 1)
    c[-1] = -1.0
    res = linprog(
        c,
        A_ub=np.column_stack([normals, norms]),
        b_ub=offsets,
        bounds=[(None, None)] * dim + [(0, None)],
        method="highs",
    )
    if res.status != 0:
        raise ConfigError(f"halfspace system infeasible or unbounded: {res.message}")
    return res.x[:dim], float(res.x[-1])


@dataclass(frozen=True, eq=False)
class HalfspaceIntersection(ConvexRegion):
    """Bounded polytope ``{x : n_k . x <= b_k}`` with unit normals."""

    normals: np.ndarray
    offsets: np.ndarray
    tol: float = 1e-10
    max_iter: int = 10_000
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if A.shape[0] != b.size:
            raise ConfigError("one offset per normal required")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ConfigError("zero normal vector")
        A = A / norms[:, None]
        b = b / norms
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", b)
        center, radius = _chebyshev_center(A, b)
        if radius <= 0:
            raise ConfigError("halfspace intersection has empty interior")
        for j in range(self.dim):
            for sgn in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[j] = -sgn
                res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * self.dim,
                              method="highs")
                if res.status == 3:
                    raise ConfigError("halfspace intersection is unbounded")
        self._cache["center"] = center
        self._cache["inradius"] = radius

    @property
    def dim(self):
        return self.normals.shape[1]

    @property
    def interior_point(self):
        return self._cache["center"].copy()

    @property
    def inradius(self):
        return self._cache["inradius"]

    def vertices(self):
        if "vertices" not in self._cache:
            if self.dim == 1:
                a = self.normals[:, 0]
                hi = np.min(self.offsets[a > 0] / a[a > 0])
                lo = np.max(self.offsets[a < 0] / a[a < 0])
                verts = np.array([[lo], [hi]])
            else:
                hs = np.column_stack([self.normals, -self.offsets])
                verts = _QhullHalfspaces(hs, self.interior_point).intersections
            self._cache["vertices"] = verts
        return self._cache["vertices"]

    def _polish(self, x0, x):
        # exact KKT solve on the active set found by Dykstra
        active = self.normals @ x >= self.offsets - 1e-8
        if not np.any(active):
            return x
        Na, ba = self.normals[active], self.offsets[active]
        lam = np.linalg.lstsq(Na @ Na.T, Na @ x0 - ba, rcond=None)[0]
        v = x0 - Na.T @ lam
        if np.all(lam >= -1e-12) and np.all(self.normals @ v <= self.offsets + 1e-13):
            return v
        return x

    def project(self, x):
        x0 = np.asarray(x, dtype=float)
        if np.all(self.normals @ x0 <= self.offsets):
            return x0.copy()
        x = x0.copy()
        incr = np.zeros((self.offsets.size, self.dim))
        for _ in range(self.max_iter):
            prev = x
            for k, (a, b) in enumerate(zip(self.normals, self.offsets)):
                y = x + incr[k]
                x = y - max(0.0, a @ y - b) * a
                incr[k] = y - x
            if np.linalg.norm(x - prev) <= self.tol:
                return self._polish(x0, x)
        raise NumericalError(
            f"Dykstra projection did not converge in {self.max_iter} sweeps"
        )

    def support(self, u):
        return float(np.max(self.vertices() @ np.asarray(u, dtype=float)))

    def signed_margin(self, x):
        x = np.asarray(x, dtype=float)
        slack = self.offsets - self.normals @ x
        if np.all(slack >= 0):
            return float(np.min(slack))
        return -float(np.linalg.norm(x - self.project(x)))

    def signed_margin_rows(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        slack = (self.offsets - X @ self.normals.T).min(axis=1)
        out = slack.copy()
        for k in np.flatnonzero(slack < 0):
            out[k] = -float(np.linalg.norm(X[k] - self.project(X[k])))
        return out

    def inset(self, d):
        if d >= self.inradius:
            raise InvariantViolation(f"inset {d} swallows polytope")
        return HalfspaceIntersection(self.normals, self.offsets - d, self.tol, self.max_iter)

    def max_distance_from(self, point):
        return float(np.max(np.linalg.norm(self.vertices() - np.asarray(point), axis=1)))

    def _ray_exit(self, u):
        x0 = self.interior_point
        rate = self.normals @ u
        gaps = self.offsets - self.normals @ x0
        pos = rate > 0
        return x0 + np.min(gaps[pos] / rate[pos]) * u

    def sample_boundary(self, n, rng):
        u = rng.standard_normal((n, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return np.array([self._ray_exit(d) for d in u])

    def sample_interior(self, n, rng):
        verts = self.vertices()
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        out = []
        while len(out) < n:
            cand = rng.uniform(lo, hi, (max(n, 64), self.dim))
            ok = np.all(cand @ self.normals.T <= self.offsets, axis=1)
            out.extend(cand[ok])
        return np.array(out[:n])

    @property
    def curvature_bound(self):
        return 0.0


def project(region: ConvexRegion, x) -> np.ndarray:
    return region.project(np.asarray(x, dtype=float))


def _polyhedral_outer(outer):
    if isinstance(outer, Box):
        return outer.halfspaces()
    if isinstance(outer, HalfspaceIntersection):
        return outer.normals, outer.offsets
    return None


def inclusion_slack(inner: ConvexRegion, outer: ConvexRegion) -> float:
    """Largest r with ``inner + B(0, r)`` inside `outer`.

    Negative when `inner` is not contained in `outer`.
    """
    if isinstance(outer, Ball):
        return outer.radius - inner.max_distance_from(outer.center)
    poly = _polyhedral_outer(outer)
    if poly is None:
        raise TypeError(f"unsupported outer region {type(outer).__name__}")
    normals, offsets = poly
    return float(min(b - inner.support(n) for n, b in zip(normals, offsets)))


def _resolve(inner, t):
    if isinstance(inner, ExpandingSchedule):
        if t is None:
            raise TypeError("time required when passing a schedule")
        return inner.region_at(t)
    return inner


def safety_radius(inner, outer: ConvexRegion, t: Optional[float] = None) -> float:
    """Radius of the shrinking safety ball: the Minkowski slack of Ω̄(t) in Ω.

    `inner` is a region or an :class:`ExpandingSchedule` evaluated at `t`.
    """
    slack = inclusion_slack(_resolve(inner, t), outer)
    if slack < -1e-12:
        raise InvariantViolation(
            f"expanding set leaves the outer region at t={t} (slack {slack:.3g})"
        )
    return max(slack, 0.0)


def hausdorff_gap(inner: ConvexRegion, outer: ConvexRegion, n_directions=4096,
                  seed=0) -> float:
    """``max_{y in outer} dist(y, inner)`` for ``inner`` inside ``outer``."""
    if isinstance(outer, Ball) and isinstance(inner, Ball):
        return float(np.linalg.norm(outer.center - inner.center)
                     + outer.radius - inner.radius)
    if isinstance(outer, (Box, HalfspaceIntersection)):
        verts = outer.vertices()
        return float(max(np.linalg.norm(v - inner.project(v)) for v in verts))
    # outer ball, polyhedral inner: support-function form of the Hausdorff gap
    rng = np.random.default_rng(seed)
    dirs = _unit_directions(outer.dim, n_directions, rng)
    return float(max(outer.support(u) - inner.support(u) for u in dirs))


def one_sided_distances(inner, outer: ConvexRegion, t: Optional[float] = None):
    """Return the pair (farthest, nearest) boundary-to-set distances.

    The first value is the largest distance from a point of ∂Ω to Ω̄(t), the
    second the smallest (equal to the safety radius for nested convex sets).
    """
    region = _resolve(inner, t)
    far = hausdorff_gap(region, outer)
    near = safety_radius(region, outer)
    return far, near


@dataclass(frozen=True, eq=False)
class ExpandingSchedule:
    """Nested family ``Ω̄(t) = base.inset(gap(t))``.

    With the default rule ``gap(t) = gap * exp(-rate * t)`` a ball of radius R
    gives ``R̄(t) = R - gap * exp(-rate * t)``.  ``inset_fn`` replaces the
    rule entirely (used to build deliberately invalid schedules).
    """

    base: ConvexRegion
    gap: float
    rate: float
    xi: float = 1.0
    v: Optional[float] = None
    inset_fn: Optional[Callable[[float], float]] = field(default=None, compare=False)
    curvature_override: Optional[float] = None

    def __post_init__(self):
        if self.inset_fn is None:
            if not self.gap > 0 or not self.rate > 0:
                raise ConfigError("expanding schedule needs gap > 0 and rate > 0")
        if self.xi < 1:
            raise ConfigError("xi must be at least 1")
        if self.v is None:
            object.__setattr__(self, "v", float(self.rate))

    def inset_at(self, t: float) -> float:
        if self.inset_fn is not None:
            return float(self.inset_fn(t))
        return self.gap * math.exp(-self.rate * t)

    def region_at(self, t: float) -> ConvexRegion:
        return self.base.inset(self.inset_at(t))

    def project_rows(self, X, t):
        return self.region_at(t).project_rows(X)

    def safety_radius(self, t):
        return safety_radius(self, self.base, t)

    def distances(self, t):
        return one_sided_distances(self, self.base, t)

    def curvature_bound(self, horizon=50.0):
        if self.curvature_override is not None:
            return float(self.curvature_override)
        ts = np.linspace(0.0, horizon, 51)
        return float(max(self.region_at(t).curvature_bound for t in ts))


@dataclass
class ScheduleCheck:
    name: str
    passed: bool
    first_violation_t: Optional[float] = None
    detail: str = ""


@dataclass
class ScheduleReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> ScheduleCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed,
                 "first_violation_t": c.first_violation_t, "detail": c.detail}
                for c in self.checks
            ],
        }


def _first_fail(ts, ok):
    bad = np.flatnonzero(~np.asarray(ok))
    return (True, None) if bad.size == 0 else (False, float(ts[bad[0]]))


def validate_schedule(schedule: ExpandingSchedule, outer: ConvexRegion,
                      horizon: float, n_samples: int = 200,
                      decay_fraction: float = 1e-2) -> ScheduleReport:
    """Check the nesting, convergence and envelope conditions on a time grid.

    ``C4_lower_envelope`` tests ``β₁(t) >= β₁(0) e^{-vt}``; ``C4_upper_envelope``
    tests ``β₁(t) <= β₁(0) e^{-vt}``, which is what the bound on the optimum's
    speed needs when that optimum is pinned to the moving boundary.
    """
    if not horizon > 0:
        raise ConfigError("horizon must be positive")
    ts = np.linspace(0.0, horizon, n_samples + 1)
    checks = []

    regions, slack = [], []
    for t in ts:
        try:
            reg = schedule.region_at(t)
        except InvariantViolation:
            reg = None
        regions.append(reg)
        slack.append(inclusion_slack(reg, outer) if reg is not None else -np.inf)
    slack = np.array(slack)
    # slack may round to 0 once the gap is below float resolution
    tiny = np.array([schedule.inset_at(t) for t in ts]) < 1e-12
    ok, t_bad = _first_fail(ts, (slack > 0) | (tiny & (slack >= -1e-12)))
    checks.append(ScheduleCheck("C1_interior", ok, t_bad,
                                f"min slack {np.min(slack):.6g}"))

    nest = [True]
    for a, b in zip(regions[:-1], regions[1:]):
        nest.append(a is not None and b is not None and inclusion_slack(a, b) >= -1e-12)
    ok, t_bad = _first_fail(ts, nest)
    checks.append(ScheduleCheck("C1_nesting", ok, t_bad))

    if any(r is None for r in regions):
        return ScheduleReport(checks)

    far = np.array([hausdorff_gap(r, outer) for r in regions])
    near = np.maximum(slack, 0.0)
    mono = np.concatenate([[True], np.diff(far) <= 1e-12])
    decayed = far[-1] <= decay_fraction * max(far[0], 1e-300)
    ok, t_bad = _first_fail(ts, mono)
    checks.append(ScheduleCheck(
        "C2_convergence", ok and decayed, t_bad,
        f"beta1(0)={far[0]:.6g}, beta1(T)={far[-1]:.6g}"))

    ok, t_bad = _first_fail(ts, far <= schedule.xi * near * (1 + 1e-9) + 1e-15)
    checks.append(ScheduleCheck("C4_ratio", ok, t_bad, f"xi={schedule.xi}"))

    scaled = far * np.exp(schedule.v * ts)
    ok, t_bad = _first_fail(ts, scaled >= far[0] * (1 - 1e-9))
    checks.append(ScheduleCheck("C4_lower_envelope", ok, t_bad, f"v={schedule.v}"))
    ok, t_bad = _first_fail(ts, scaled <= far[0] * (1 + 1e-9))
    checks.append(ScheduleCheck("C4_upper_envelope", ok, t_bad, f"v={schedule.v}"))
    return ScheduleReport(checks)
