"""Boundary tangency certification for reaction terms.

A closed convex set W is a candidate invariant region for a reaction term phi
only if phi points (weakly) into W on the boundary: <lam, phi(t, x, omega)>
<= 0 for every boundary point omega and every supporting vector lam there.
This module checks that condition by sampling.  For boxes and polytopes the
check reduces to one inequality per face, because every supporting vector is
a unit nonnegative combination of the active face normals and the inner
product is linear in lam.  For balls the supporting vector at a sphere point
is the outward radius.

The checker is a falsifier plus a sampled certifier: a positive margin with
its witness refutes tangency outright, while a certificate only holds at the
reported sampling resolution (phi is a black box, so no symbolic proof is
attempted).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import convex
from ._backend import (
    PHI_CONSTANT,
    PHI_FHN,
    PHI_LINEAR,
    PHI_LOGISTIC,
    PHI_ZERO,
    KernelSpec,
)
from .expressions import compile_expression, field_variables


class EvalFailure(RuntimeError):
    """The reaction term raised while being evaluated at a sample point."""


@dataclass
class ReactionTerm:
    """Reaction term phi(t, x, v) -> vector in R^m.

    ``fn`` must be vectorized: v has shape (..., m), x has shape (..., dim)
    (or is None for x-independent terms), and the result matches v's shape.
    ``kernel`` carries the op code the compiled stepping core understands;
    custom callables leave it None and the solvers use the numpy loop.
    """

    fn: Callable
    m: int
    lipschitz_probe_box: Optional[tuple] = None
    kernel: Optional[KernelSpec] = None
    name: str = "custom"

    def __call__(self, t, x, v):
        return self.fn(t, x, v)


def zero_reaction(m):
    def fn(t, x, v):
        return np.zeros_like(np.asarray(v, dtype=float))

    return ReactionTerm(fn=fn, m=m, kernel=KernelSpec.make(PHI_ZERO, []), name="zero")


def linear_reaction(B, m=None):
    """phi = B v; a scalar B means B * identity."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 0:
        if m is None:
            raise ValueError("scalar coefficient needs an explicit m")
        B = float(B) * np.eye(m)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("B must be square")
    m = B.shape[0]

    def fn(t, x, v):
        return np.asarray(v, dtype=float) @ B.T

    return ReactionTerm(fn=fn, m=m, kernel=KernelSpec.make(PHI_LINEAR, B), name="linear")


def logistic_reaction(rate=1.0, m=1):
    """Componentwise rate * v * (1 - v); the scalar logistic term for m = 1."""
    rate = float(rate)

    def fn(t, x, v):
        v = np.asarray(v, dtype=float)
        return rate * v * (1.0 - v)

    return ReactionTerm(
        fn=fn, m=m, kernel=KernelSpec.make(PHI_LOGISTIC, [rate]), name="logistic"
    )


def fhn_reaction(a=0.7, b=0.8, eps=0.08, current=0.5):
    """FitzHugh-Nagumo kinetics: (v - v^3/3 - w + I, eps*(v + a - b*w))."""
    a, b, eps, current = map(float, (a, b, eps, current))

    def fn(t, x, v):
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        u, w = v[..., 0], v[..., 1]
        out[..., 0] = u - u**3 / 3.0 - w + current
        out[..., 1] = eps * (u + a - b * w)
        return out

    return ReactionTerm(
        fn=fn, m=2, kernel=KernelSpec.make(PHI_FHN, [a, b, eps, current]), name="fhn"
    )


def constant_reaction(c):
    c = np.asarray(c, dtype=float).ravel()

    def fn(t, x, v):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(c, v.shape).copy()

    return ReactionTerm(fn=fn, m=c.shape[0], kernel=KernelSpec.make(PHI_CONSTANT, c), name="constant")


def expression_reaction(exprs, dim, m=None):
    """phi from one expression string per component (variables t, x1.., v1..)."""
    if isinstance(exprs, str):
        exprs = [exprs]
    if m is None:
        m = len(exprs)
    if len(exprs) != m:
        raise ValueError(f"need {m} component expressions, got {len(exprs)}")
    names = field_variables(dim, m)
    fns = [compile_expression(e, names) for e in exprs]

    def fn(t, x, v):
        v = np.asarray(v, dtype=float)
        env = {"t": t}
        for i in range(m):
            env[f"v{i + 1}"] = v[..., i]
        for j in range(dim):
            if x is None:
                env[f"x{j + 1}"] = 0.0
            else:
                xa = np.asarray(x, dtype=float)
                env[f"x{j + 1}"] = xa[..., j]
        out = np.empty_like(v)
        for i in range(m):
            out[..., i] = fns[i](env)
        return out

    return ReactionTerm(fn=fn, m=m, name="expr")


def estimate_lipschitz(phi, box, n_pairs=512, t_samples=(0.0,), x=None, rng=None):
    """Empirical Lipschitz constant of v -> phi(t, x, v) over a probe box.

    Max of |phi(v1) - phi(v2)| / |v1 - v2| over random pairs; a sanity
    estimate, not a proof.  Raises EvalFailure if phi produces non-finite
    values on the box.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if rng is None:
        rng = np.random.default_rng(0)
    v1 = rng.uniform(lo, hi, size=(n_pairs, phi.m))
    v2 = rng.uniform(lo, hi, size=(n_pairs, phi.m))
    best = 0.0
    for t in t_samples:
        f1 = _eval_phi(phi, t, x, v1)
        f2 = _eval_phi(phi, t, x, v2)
        if not (np.all(np.isfinite(f1)) and np.all(np.isfinite(f2))):
            raise EvalFailure("reaction term produced non-finite values on the probe box")
        num = np.linalg.norm(f1 - f2, axis=-1)
        den = np.linalg.norm(v1 - v2, axis=-1)
        ok = den > 1e-14
        if np.any(ok):
            best = max(best, float(np.max(num[ok] / den[ok])))
    return best


def _eval_phi(phi, t, x, omegas):
    if x is not None:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = np.broadcast_to(x, omegas.shape[:-1] + x.shape)
    try:
        out = np.asarray(phi(t, x, omegas), dtype=float)
    except Exception as e:  # noqa: BLE001 - wrap whatever the user term raised
        raise EvalFailure(f"reaction term raised at t={t}: {e}") from e
    if out.shape != omegas.shape:
        raise EvalFailure(
            f"reaction term returned shape {out.shape}, expected {omegas.shape}"
        )
    return out


@dataclass
class TangencyReport:
    certified: bool
    worst_margin: float
    worst_witness: dict
    samples_checked: int
    margin_tol: float
    boundary_density: int

    def to_dict(self):
        w = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in self.worst_witness.items()
        }
        return {
            "certified": self.certified,
            "worst_margin": self.worst_margin,
            "worst_witness": w,
            "samples_checked": self.samples_checked,
            "margin_tol": self.margin_tol,
            "boundary_density": self.boundary_density,
        }


def default_boundary_density(m):
    # 32 per face per dimension keeps m <= 3 exhaustive at desk scale;
    # higher fiber dimensions switch to random boundary points
    return 32 if m <= 3 else 10_000


def _boundary_plan(W, density, rng):
    """List of (omegas (n, m), lams (n, m) or (m,)) covering the boundary of W."""
    m = W.dim
    plan = []
    if isinstance(W, convex.Ball):
        n = {1: 2, 2: max(density * 8, 64), 3: 8192}.get(m, 10_000)
        pts = W.sphere_points(n, rng)
        lams = (pts - W.center) / W.radius
        plan.append((pts, lams))
        return plan
    if isinstance(W, convex.Box):
        W_poly = W.as_polytope()
    else:
        W_poly = W
    if m == 1:
        for i in range(W_poly.normals.shape[0]):
            verts = W_poly.face_vertices(i)
            if verts.shape[0]:
                plan.append((verts[:1], W_poly.normals[i]))
        return plan
    if m <= 3 and W_poly.extreme_points().shape[0] > 0:
        for i in range(W_poly.normals.shape[0]):
            verts = W_poly.face_vertices(i)
            if verts.shape[0] == 0:
                continue  # redundant constraint, never active
            pts = _sample_face(verts, m, density, rng)
            plan.append((pts, W_poly.normals[i]))
        return plan
    # m > 3: projections of an outside cloud land on the boundary
    lo, hi = W_poly.bounding_box()
    span = np.max(hi - lo)
    cloud = rng.standard_normal((density, m)) * span + (lo + hi) / 2
    omegas, dist = W_poly.project_many(cloud)
    outside = dist > 1e-9
    omegas = omegas[outside]
    lams = (cloud[outside] - omegas) / dist[outside, None]
    plan.append((omegas, lams))
    return plan


def _sample_face(verts, m, density, rng):
    """Points on a polytope face given its vertices (includes the vertices)."""
    if verts.shape[0] == 1:
        return verts
    if m == 2 or verts.shape[0] == 2:
        # 1-d face: order along the edge and sample the segment incl. endpoints
        d = verts[-1] - verts[0]
        s = verts @ d
        a, b = verts[np.argmin(s)], verts[np.argmax(s)]
        w = np.linspace(0.0, 1.0, max(density, 2))[:, None]
        return a + w * (b - a)
    # 2-d face of a 3-d polytope: vertices plus Dirichlet-weighted combinations
    k = verts.shape[0]
    w = rng.dirichlet(np.ones(k), size=density * density)
    return np.vstack([verts, w @ verts])


def check_tangency(
    phi,
    W,
    t_samples,
    x_samples,
    boundary_density=None,
    margin_tol=1e-9,
    rng=None,
    threads=1,
):
    """Sampled check of <lam, phi(t, x, omega)> <= margin_tol over the boundary of W.

    For boxes and polytopes each face is checked against its own normal,
    which covers every supporting vector at every boundary point (conic
    combinations preserve the sign).  Returns the worst observed margin with
    its witness; certified means worst_margin <= margin_tol.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    t_samples = list(t_samples)
    x_samples = list(x_samples)
    if not t_samples or not x_samples:
        raise ValueError("t_samples and x_samples must be nonempty")
    if boundary_density is None:
        boundary_density = default_boundary_density(W.dim)

    plan = _boundary_plan(W, boundary_density, rng)
    worst = -np.inf
    witness = {}
    checked = 0

    def margins_for(t, x, omegas, lams):
        vals = _eval_phi(phi, t, x, omegas)
        if lams.ndim == 1:
            return vals @ lams
        return np.einsum("ij,ij->i", vals, lams)

    for t in t_samples:
        for x in x_samples:
            for omegas, lams in plan:
                if omegas.shape[0] == 0:
                    continue
                lam_arr = lams if isinstance(lams, np.ndarray) else np.asarray(lams)
                if threads > 1 and omegas.shape[0] >= 4 * threads:
                    chunks = np.array_split(np.arange(omegas.shape[0]), threads)
                    with ThreadPoolExecutor(max_workers=threads) as ex:
                        parts = list(
                            ex.map(
                                lambda idx: margins_for(
                                    t,
                                    x,
                                    omegas[idx],
                                    lam_arr[idx] if lam_arr.ndim == 2 else lam_arr,
                                ),
                                chunks,
                            )
                        )
                    mg = np.concatenate(parts)
                else:
                    mg = margins_for(t, x, omegas, lam_arr)
                checked += omegas.shape[0]
                j = int(np.argmax(mg))
                if mg[j] > worst:
                    worst = float(mg[j])
                    witness = {
                        "t": t,
                        "x": None if x is None else np.asarray(x, dtype=float),
                        "omega": omegas[j],
                        "lambda": lam_arr[j] if lam_arr.ndim == 2 else lam_arr,
                    }

    return TangencyReport(
        certified=bool(worst <= margin_tol),
        worst_margin=worst,
        worst_witness=witness,
        samples_checked=checked,
        margin_tol=margin_tol,
        boundary_density=boundary_density,
    )


@dataclass
class TrajectoryMargin:
    """Worst a-posteriori tangency margin along a trajectory's outside points."""

    margin: float  # -inf when vacuous
    evaluated: int
    vacuous: bool


def tangency_margin_along_trajectory(phi, W, trajectory):
    """Max over supplied (t, x, f) with f outside W of <lam(f)/|lam(f)|, phi(t, x, omega(f))>.

    This is the weakened tangency hypothesis that only constrains phi at the
    nearest boundary points actually visited by the field; points inside W
    are skipped and an empty result is reported as vacuous.
    """
    worst = -np.inf
    n = 0
    for t, x, fval in trajectory:
        p = W.project(fval)
        if p.dist <= convex.MEMBERSHIP_TOL:
            continue
        lam_hat = p.lam / p.dist
        val = _eval_phi(phi, t, x, p.omega[None, :])[0]
        worst = max(worst, float(val @ lam_hat))
        n += 1
    return TrajectoryMargin(margin=worst, evaluated=n, vacuous=n == 0)
