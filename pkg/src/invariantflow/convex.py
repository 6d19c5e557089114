"""Closed convex sets in R^m: nearest points, deviations, and supporting vectors.

Three set representations are supported: axis-aligned boxes, Euclidean balls,
and bounded intersections of half-spaces (polytopes given by unit outward
normals n_i and offsets b_i, i.e. W = {x : <n_i, x> <= b_i}).  Every set
supplies the nearest-point projection, membership tests, and the cone of
outward supporting vectors at a boundary point.  Box and ball projections are
closed form; polytope projection runs Dykstra's cyclic scheme over the
half-spaces, which converges to the true nearest point of the intersection.

All objects are immutable after construction and all operations are pure, so
instances may be shared freely across threads.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MEMBERSHIP_TOL = 1e-9
ACTIVITY_TOL = 1e-8
UNIT_TOL = 1e-12

DYKSTRA_MOVE_TOL = 1e-12
DYKSTRA_MAX_SWEEPS = 10**5
DYKSTRA_RESIDUAL_TOL = 1e-10


class InvalidSet(ValueError):
    """The set description fails a construction invariant (empty, unbounded, ...)."""


class NotOnSet(ValueError):
    """A base point handed to normal_cone lies too far outside the set."""


@dataclass(frozen=True)
class Projection:
    """Nearest-point bundle for a query point v: omega = argmin_{w in W} |v - w|,
    dist = |v - omega|, lam = v - omega (the deviation vector)."""

    omega: np.ndarray
    dist: float
    lam: np.ndarray


@dataclass(frozen=True)
class NormalCone:
    """Generators of the outward normal cone at a boundary point.

    Every supporting vector at the point is a unit nonnegative combination of
    the generators.  An empty generator list marks an interior point (no
    supporting vectors exist there).
    """

    generators: np.ndarray  # (k, m), unit rows
    is_singleton: bool


def _as_vector(v, m=None):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if m is not None and v.shape[0] != m:
        raise ValueError(f"expected a vector in R^{m}, got R^{v.shape[0]}")
    return v


class ConvexSet:
    """Base interface; use Box, Ball or Polytope."""

    dim: int

    def project_many(self, pts):
        """Vectorized projection: pts (..., m) -> (omega (..., m), dist (...,))."""
        raise NotImplementedError

    def project(self, v) -> Projection:
        v = _as_vector(v, self.dim)
        omega, dist = self.project_many(v[None, :])
        omega = omega[0]
        return Projection(omega=omega, dist=float(dist[0]), lam=v - omega)

    def contains(self, v, tol=MEMBERSHIP_TOL) -> bool:
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return self.project(v).dist <= tol

    def distance_many(self, pts):
        return self.project_many(pts)[1]

    def normal_cone(self, omega, activity_tol=ACTIVITY_TOL) -> NormalCone:
        raise NotImplementedError

    def sample(self, n, rng) -> np.ndarray:
        """n points of W, covering the set at sampling resolution."""
        raise NotImplementedError

    def extreme_points(self) -> np.ndarray:
        """Vertices (box corners, polytope vertices); empty for a ball."""
        return np.empty((0, self.dim))

    def bounding_box(self):
        raise NotImplementedError


class Box(ConvexSet):
    def __init__(self, lo, hi):
        lo = _as_vector(lo)
        hi = _as_vector(hi, lo.shape[0])
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise InvalidSet("box bounds must be finite")
        if not np.all(lo < hi):
            raise InvalidSet("box requires lo_k < hi_k in every coordinate")
        self.lo = lo
        self.hi = hi
        self.dim = lo.shape[0]

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def project_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        omega = np.clip(pts, self.lo, self.hi)
        dist = np.linalg.norm(pts - omega, axis=-1)
        return omega, dist

    def normal_cone(self, omega, activity_tol=ACTIVITY_TOL):
        omega = _as_vector(omega, self.dim)
        if self.project(omega).dist > activity_tol:
            raise NotOnSet("point lies outside the box beyond activity_tol")
        gens = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            if omega[k] >= self.hi[k] - activity_tol:
                e[k] = 1.0
                gens.append(e)
            elif omega[k] <= self.lo[k] + activity_tol:
                e[k] = -1.0
                gens.append(e)
        gens = np.array(gens) if gens else np.empty((0, self.dim))
        return NormalCone(generators=gens, is_singleton=len(gens) == 1)

    def sample(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def extreme_points(self):
        corners = itertools.product(*[(self.lo[k], self.hi[k]) for k in range(self.dim)])
        return np.array(list(corners))

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def as_polytope(self) -> "Polytope":
        """The same set as an intersection of 2m half-spaces."""
        eye = np.eye(self.dim)
        normals = np.vstack([eye, -eye])
        offsets = np.concatenate([self.hi, -self.lo])
        return Polytope(normals, offsets)


class Ball(ConvexSet):
    def __init__(self, center, radius):
        center = _as_vector(center)
        radius = float(radius)
        if not np.all(np.isfinite(center)) or not np.isfinite(radius) or radius <= 0:
            raise InvalidSet("ball requires a finite center and radius > 0")
        self.center = center
        self.radius = radius
        self.dim = center.shape[0]

    def __repr__(self):
        return f"Ball(center={self.center.tolist()}, radius={self.radius})"

    def project_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        d = pts - self.center
        r = np.linalg.norm(d, axis=-1)
        outside = r > self.radius
        scale = np.ones_like(r)
        np.divide(self.radius, r, out=scale, where=outside)
        omega = self.center + d * scale[..., None]
        dist = np.where(outside, r - self.radius, 0.0)
        return omega, dist

    def normal_cone(self, omega, activity_tol=ACTIVITY_TOL):
        omega = _as_vector(omega, self.dim)
        u = omega - self.center
        r = np.linalg.norm(u)
        if r - self.radius > activity_tol:
            raise NotOnSet("point lies outside the ball beyond activity_tol")
        if r < self.radius - activity_tol:
            return NormalCone(generators=np.empty((0, self.dim)), is_singleton=False)
        return NormalCone(generators=(u / r)[None, :], is_singleton=True)

    def sample(self, n, rng):
        # uniform in the ball: gaussian direction, radius ~ u^(1/m)
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        u = rng.uniform(size=(n, 1)) ** (1.0 / self.dim)
        return self.center + self.radius * g * u

    def sphere_points(self, n, rng=None):
        """n points on the boundary sphere; deterministic for m <= 2."""
        if self.dim == 1:
            return self.center + self.radius * np.array([[-1.0], [1.0]])
        if self.dim == 2:
            th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
            d = np.stack([np.cos(th), np.sin(th)], axis=1)
            return self.center + self.radius * d
        if rng is None:
            rng = np.random.default_rng(0)
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return self.center + self.radius * g

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius


class Polytope(ConvexSet):
    """Bounded nonempty intersection of half-spaces {x : <n_i, x> <= b_i}.

    Normals must have unit norm within 1e-12.  Construction rejects empty or
    unbounded descriptions: for m <= 3 by vertex enumeration plus a recession
    direction check, for m > 3 by bounded-support probing and a Dykstra
    convergence probe.
    """

    def __init__(self, normals, offsets):
        normals = np.asarray(normals, dtype=float)
        offsets = np.asarray(offsets, dtype=float)
        if normals.ndim != 2 or offsets.ndim != 1 or normals.shape[0] != offsets.shape[0]:
            raise InvalidSet("normals must be (k, m), offsets (k,)")
        if normals.shape[0] == 0:
            raise InvalidSet("a polytope needs at least one half-space")
        if not (np.all(np.isfinite(normals)) and np.all(np.isfinite(offsets))):
            raise InvalidSet("normals and offsets must be finite")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise InvalidSet("polytope normals must have unit norm within 1e-12")
        self.normals = normals
        self.offsets = offsets
        self.dim = normals.shape[1]
        self._vertices = None
        if self.dim <= 3:
            self._vertices = self._enumerate_vertices()
            if self._vertices.shape[0] == 0:
                raise InvalidSet("empty polytope (no feasible vertex)")
            if self._has_recession_direction():
                raise InvalidSet("unbounded polytope (nontrivial recession direction)")
        else:
            if self._has_recession_direction():
                raise InvalidSet("unbounded polytope (bounded-support probe failed)")
            # nonemptiness probe: Dykstra must converge onto a feasible point
            probe, _ = self.project_many(np.zeros((1, self.dim)))
            resid = np.max(self.normals @ probe[0] - self.offsets)
            if resid > 1e-6:
                raise InvalidSet("empty polytope (projection probe found no feasible point)")

    def __repr__(self):
        return f"Polytope(k={self.normals.shape[0]}, m={self.dim})"

    # -- construction validation helpers --------------------------------

    def _enumerate_vertices(self):
        m, tol = self.dim, 1e-9
        verts = []
        for idx in itertools.combinations(range(self.normals.shape[0]), m):
            A = self.normals[list(idx)]
            b = self.offsets[list(idx)]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            x = np.linalg.solve(A, b)
            if np.all(self.normals @ x <= self.offsets + tol):
                verts.append(x)
        if not verts:
            return np.empty((0, m))
        dedup = []
        for v in verts:
            if not any(np.linalg.norm(v - u) < 1e-9 for u in dedup):
                dedup.append(v)
        return np.array(dedup)

    def _has_recession_direction(self):
        """True if some direction d has <n_i, d> <= 0 for all i."""
        N = self.normals
        if self.dim == 2:
            # exact in 2-d: a recession direction exists iff the normals leave
            # an angular gap >= pi
            ang = np.sort(np.arctan2(N[:, 1], N[:, 0]))
            gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
            return bool(np.max(gaps) >= np.pi - 1e-12)
        cands = [-N[i] for i in range(N.shape[0])]
        if self.dim == 3:
            for i, j in itertools.combinations(range(N.shape[0]), 2):
                c = np.cross(N[i], N[j])
                nc = np.linalg.norm(c)
                if nc > 1e-12:
                    cands.extend([c / nc, -c / nc])
        rng = np.random.default_rng(0)
        g = rng.standard_normal((4096, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        cands.extend(list(g))
        cands.extend(list(np.eye(self.dim)))
        cands.extend(list(-np.eye(self.dim)))
        for d in cands:
            if np.all(N @ d <= 1e-12):
                return True
        return False

    # -- projection ------------------------------------------------------

    def project_many(self, pts):
        pts = np.asarray(pts, dtype=float)
        lead = pts.shape[:-1]
        x = pts.reshape(-1, self.dim).astype(float).copy()
        v = x.copy()
        k = self.normals.shape[0]
        corr = np.zeros((k,) + x.shape)
        for _ in range(DYKSTRA_MAX_SWEEPS):
            x_prev = x.copy()
            for i in range(k):
                y = x + corr[i]
                viol = y @ self.normals[i] - self.offsets[i]
                step = np.maximum(viol, 0.0)
                x = y - step[:, None] * self.normals[i]
                corr[i] = y - x
            if np.max(np.abs(x - x_prev)) < DYKSTRA_MOVE_TOL:
                break
        resid = np.max(x @ self.normals.T - self.offsets, initial=-np.inf)
        if resid > DYKSTRA_RESIDUAL_TOL:
            raise InvalidSet(
                f"Dykstra projection failed to converge (residual {resid:.2e}); "
                "the polytope is likely empty or ill-posed"
            )
        dist = np.linalg.norm(v - x, axis=-1)
        return x.reshape(lead + (self.dim,)), dist.reshape(lead)

    def normal_cone(self, omega, activity_tol=ACTIVITY_TOL):
        omega = _as_vector(omega, self.dim)
        if self.project(omega).dist > activity_tol:
            raise NotOnSet("point lies outside the polytope beyond activity_tol")
        active = self.normals @ omega >= self.offsets - activity_tol
        gens = self.normals[active]
        return NormalCone(generators=gens, is_singleton=gens.shape[0] == 1)

    def sample(self, n, rng):
        if self._vertices is not None and self._vertices.shape[0] > 0:
            w = rng.dirichlet(np.ones(self._vertices.shape[0]), size=n)
            return w @ self._vertices
        # m > 3: cover via projections of a gaussian cloud
        feas, _ = self.project_many(np.zeros((1, self.dim)))
        cloud = feas[0] + rng.standard_normal((n, self.dim))
        pts, _ = self.project_many(cloud)
        return pts

    def extreme_points(self):
        if self._vertices is None:
            return np.empty((0, self.dim))
        return self._vertices.copy()

    def face_vertices(self, i, tol=1e-9):
        """Vertices lying on face i (constraint <n_i, x> = b_i); m <= 3 only."""
        if self._vertices is None or self._vertices.shape[0] == 0:
            return np.empty((0, self.dim))
        on = np.abs(self._vertices @ self.normals[i] - self.offsets[i]) <= tol
        return self._vertices[on]

    def bounding_box(self):
        if self._vertices is not None and self._vertices.shape[0] > 0:
            return self._vertices.min(axis=0), self._vertices.max(axis=0)
        rng = np.random.default_rng(0)
        pts = self.sample(2048, rng)
        return pts.min(axis=0), pts.max(axis=0)


# -- module-level operations ----------------------------------------------


def project(W: ConvexSet, v) -> Projection:
    """Nearest point of W to v with its distance and deviation vector."""
    return W.project(v)


def contains(W: ConvexSet, v, tol=MEMBERSHIP_TOL) -> bool:
    return W.contains(v, tol)


def normal_cone(W: ConvexSet, omega, activity_tol=ACTIVITY_TOL) -> NormalCone:
    return W.normal_cone(omega, activity_tol)


def validate_supporting(W: ConvexSet, omega, lam, n_samples=4096, rng=None) -> float:
    """Worst margin max_sigma <lam, sigma - omega> over sampled sigma in W.

    A value <= tolerance certifies (at sampling resolution) that lam supports
    W at omega, i.e. <lam, sigma> <= <lam, omega> for all sigma in W.  The
    sample always includes the extreme points (box corners, polytope
    vertices) and, for a ball, the exact support point in direction lam, so
    supporting vectors attain margin ~0 rather than a strictly negative one.
    """
    omega = _as_vector(omega, W.dim)
    lam = _as_vector(lam, W.dim)
    if abs(np.linalg.norm(lam) - 1.0) > UNIT_TOL:
        raise ValueError("lam must be a unit vector within 1e-12")
    if rng is None:
        rng = np.random.default_rng(0)
    pts = [W.sample(n_samples, rng)]
    ext = W.extreme_points()
    if ext.shape[0]:
        pts.append(ext)
    if isinstance(W, Ball):
        pts.append((W.center + W.radius * lam)[None, :])
    pts = np.vstack(pts)
    return float(np.max((pts - omega) @ lam))
