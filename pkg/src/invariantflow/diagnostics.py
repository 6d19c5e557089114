"""Run diagnostics: the spatial supremum s(t) of dist_W f(t, .), maximal
distance pairs, the Hopf boundary functional <lam(f), d/dnu f>, and the
invariance verdict.

The grid sup replaces the true sup; refinement tests elsewhere quantify the
gap.  The Hopf functional is recorded with the raw (unnormalized) deviation
vector; its sign, which is what the boundary-point principle speaks about, is
unaffected by normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import convex


class InteriorPoint(ValueError):
    """Hopf functional requested at a non-boundary node."""


class InsideSet(ValueError):
    """Hopf functional requested where the field value lies inside W."""


@dataclass(frozen=True)
class MaximalDistancePair:
    """Space-time point where dist_W f(t, .) attains its positive grid maximum."""

    t: float
    x: tuple
    flat_index: int
    on_boundary: bool
    dist: float
    lam: np.ndarray

    def to_dict(self):
        return {
            "t": self.t,
            "x": list(self.x),
            "on_boundary": self.on_boundary,
            "dist": self.dist,
            "lambda": self.lam.tolist(),
        }


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    s: float
    x_argmax: tuple
    on_boundary: bool
    hopf_value: Optional[float]


@dataclass
class InvarianceVerdict:
    status: str  # "invariant" | "exited"
    first_exit_time: Optional[float]
    worst_dist: float
    hopf_records: list  # [(MaximalDistancePair, hopf_value | None)]
    exit_threshold: float
    all_global_max_pairs_on_boundary: Optional[bool] = None
    tangency_margin_at_max_pairs: Optional[float] = None
    s_rate_max: float = 0.0
    s_jump_flag: bool = False
    failed: bool = False
    failure: Optional[str] = None

    def to_dict(self):
        return {
            "status": self.status,
            "first_exit_time": self.first_exit_time,
            "worst_dist": self.worst_dist,
            "exit_threshold": self.exit_threshold,
            "hopf_records": [
                {"pair": p.to_dict(), "hopf_value": h} for p, h in self.hopf_records
            ],
            "all_global_max_pairs_on_boundary": self.all_global_max_pairs_on_boundary,
            "tangency_margin_at_max_pairs": self.tangency_margin_at_max_pairs,
            "s_rate_max": self.s_rate_max,
            "s_jump_flag": self.s_jump_flag,
            "failed": self.failed,
            "failure": self.failure,
        }


def max_distance(state, W):
    """Exact grid maximum of dist_W over the nodes: (s, flat argmax, deviation).

    Ties break to the lexicographically first grid index (C order), so the
    result is deterministic.
    """
    m = W.dim
    flat = state.values.reshape(-1, m)
    omega, dist = W.project_many(flat)
    j = int(np.argmax(dist))
    return float(dist[j]), j, flat[j] - omega[j]


def hopf_functional(state, W, flat_index, ctx):
    """<lam(f), d/dnu f> at a boundary node where f lies outside W.

    The outward derivative is one-sided second order (covariant in bundle
    mode, via the context object).  At a 2-d corner the node belongs to two
    faces; the larger of the two face values is reported, since the
    diagnostic looks for a positive witness.
    """
    if not ctx.is_boundary(flat_index):
        raise InteriorPoint(f"node {flat_index} is not on the boundary")
    m = W.dim
    fval = state.values.reshape(-1, m)[flat_index]
    p = W.project(fval)
    if p.dist <= convex.MEMBERSHIP_TOL:
        raise InsideSet("field value lies inside W at the requested node")
    derivs = ctx.outward_derivatives(state.values, flat_index)
    return max(float(d @ p.lam) for d in derivs)


class InvarianceMonitor:
    """Streaming reduction over ordered states: records s(t), maximal
    distance pairs past the exit threshold, boundary Hopf values, and a
    worst-case a-posteriori tangency margin when a reaction term is given.
    """

    def __init__(self, W, exit_threshold, ctx, phi=None, record_cap=128):
        self.W = W
        self.threshold = float(exit_threshold)
        self.ctx = ctx
        self.phi = phi
        self.record_cap = record_cap
        self.rows = []
        self.hopf_records = []
        self.first_exit_time = None
        self.worst_dist = 0.0
        self.tangency_margin = -np.inf
        self._tangency_evals = 0

    def observe(self, state):
        s, j, lam = max_distance(state, self.W)
        on_b = self.ctx.is_boundary(j)
        coords = self.ctx.coords(j)
        hopf = None
        if s > self.threshold:
            if self.first_exit_time is None:
                self.first_exit_time = state.t
            pair = MaximalDistancePair(
                t=state.t, x=coords, flat_index=j, on_boundary=on_b, dist=s, lam=lam
            )
            # below the membership tolerance the deviation direction is noise
            meaningful = s > convex.MEMBERSHIP_TOL
            if on_b and meaningful:
                hopf = hopf_functional(state, self.W, j, self.ctx)
            self.hopf_records.append((pair, hopf))
            if self.phi is not None and meaningful:
                omega = state.values.reshape(-1, self.W.dim)[j] - lam
                x_arr = np.asarray(coords, dtype=float)
                val = np.asarray(
                    self.phi(state.t, x_arr[None, :], omega[None, :]), dtype=float
                )[0]
                self.tangency_margin = max(
                    self.tangency_margin, float(val @ (lam / s))
                )
                self._tangency_evals += 1
        self.worst_dist = max(self.worst_dist, s)
        self.rows.append(
            DiagnosticsRow(t=state.t, s=s, x_argmax=coords, on_boundary=on_b, hopf_value=hopf)
        )

    def finish(self, failed=False, failure=None):
        status = "exited" if self.worst_dist > self.threshold else "invariant"
        all_on_boundary = None
        if status == "exited" and self.rows:
            tol = self.worst_dist * 1e-12
            tops = [r for r in self.rows if r.s >= self.worst_dist - tol]
            all_on_boundary = all(r.on_boundary for r in tops)
        s_rate = 0.0
        jump_flag = False
        if len(self.rows) >= 2:
            ts = np.array([r.t for r in self.rows])
            ss = np.array([r.s for r in self.rows])
            dt = np.diff(ts)
            ds = np.abs(np.diff(ss))
            ok = dt > 0
            if np.any(ok):
                s_rate = float(np.max(ds[ok] / dt[ok]))
            srange = float(np.max(ss) - np.min(ss))
            # crude discontinuity detector: one sample carries most of the range
            if len(self.rows) > 10 and srange > 0:
                jump_flag = bool(np.max(ds) > 0.5 * srange)
        records = _thin_records(self.hopf_records, self.record_cap)
        margin = None if self._tangency_evals == 0 else self.tangency_margin
        return InvarianceVerdict(
            status=status,
            first_exit_time=self.first_exit_time,
            worst_dist=self.worst_dist,
            hopf_records=records,
            exit_threshold=self.threshold,
            all_global_max_pairs_on_boundary=all_on_boundary,
            tangency_margin_at_max_pairs=margin,
            s_rate_max=s_rate,
            s_jump_flag=jump_flag,
            failed=failed,
            failure=failure,
        )


def _thin_records(records, cap):
    """Deterministic thinning that always keeps the first record, the last
    one, and the ones with the worst distance and the largest Hopf value."""
    if len(records) <= cap:
        return list(records)
    keep = {0, len(records) - 1}
    keep.add(max(range(len(records)), key=lambda i: records[i][0].dist))
    with_hopf = [i for i, (_, h) in enumerate(records) if h is not None]
    if with_hopf:
        keep.add(max(with_hopf, key=lambda i: records[i][1]))
    stride = max(1, len(records) // (cap - len(keep)))
    keep.update(range(0, len(records), stride))
    return [records[i] for i in sorted(keep)][:cap]


def monitor(stream, W, exit_threshold, ctx, phi=None):
    """Consume an ordered iterable of FieldStates and return the verdict."""
    mon = InvarianceMonitor(W, exit_threshold, ctx, phi=phi)
    for state in stream:
        mon.observe(state)
    return mon.finish()
