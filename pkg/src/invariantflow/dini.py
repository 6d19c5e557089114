"""Dini upper derivative estimation and the exponential-growth lemma search.

For a nonnegative continuous theta on [0, T) with theta(0) = 0 that is not
identically zero, and any C > 0, there is a point t_C in (0, T) where the
upper right Dini derivative exceeds C * theta(t_C) with theta(t_C) > 0.  The
search below is the constructive counterpart: it scans a time grid with a
forward-difference estimator of limsup_{h->0+} (theta(t+h) - theta(t)) / h.

The estimator takes the max of forward quotients over a geometric ladder of
steps, which brackets limsup behavior for functions with log-periodic
oscillation while staying above rounding noise.  It is an estimate of the
limsup, not the exact value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class HorizonExceeded(ValueError):
    """t + max(h_grid) reaches past the horizon T."""


class PreconditionViolated(ValueError):
    """theta fails the lemma hypotheses on the scan grid."""


@dataclass(frozen=True)
class SampledFunction:
    """Scalar function of time on [0, T); eval must accept numpy arrays."""

    eval: Callable
    T: float


def default_h_grid(T):
    """Geometric ladder from 1e-2*T down to 1e-7*T with ratio 0.5."""
    h = []
    step = 1e-2 * T
    floor = 1e-7 * T
    while step >= floor:
        h.append(step)
        step *= 0.5
    return np.array(h)


def dini_upper(theta, t, h_grid=None):
    """Forward-difference estimate of the upper right Dini derivative at t.

    Returns max over h in h_grid of (theta(t+h) - theta(t)) / h.
    """
    if h_grid is None:
        h_grid = default_h_grid(theta.T)
    h_grid = np.asarray(h_grid, dtype=float)
    if np.any(h_grid <= 0):
        raise ValueError("h_grid must be positive")
    if np.min(h_grid) < 1e-9 * theta.T:
        raise ValueError("h_grid reaches below the machine-safe step 1e-9*T")
    if not 0 <= t < theta.T:
        raise ValueError(f"t={t} outside [0, T)")
    if t + np.max(h_grid) >= theta.T:
        raise HorizonExceeded(f"t + max(h_grid) = {t + np.max(h_grid)} >= T = {theta.T}")
    th_t = theta.eval(t)
    quotients = (np.asarray(theta.eval(t + h_grid), dtype=float) - th_t) / h_grid
    return float(np.max(quotients))


@dataclass(frozen=True)
class LemmaPoint:
    """Outcome of the lemma-point search.

    found is False when no grid point satisfied the strict inequality; in
    exact arithmetic the point exists, so a miss at fine resolution flags
    either resolution failure or a precondition violation and must not be
    read as a refutation.  best_gap is max over the grid of
    (dini_estimate - C * theta).
    """

    found: bool
    t: float | None
    dini_estimate: float
    theta_value: float
    best_gap: float


def find_lemma_point(theta, C, t_grid=4096, h_grid=None):
    """Scan for t_C with estimated Dini derivative > C * theta(t_C) and theta(t_C) > 0."""
    if C <= 0:
        raise ValueError("C must be positive")
    if h_grid is None:
        h_grid = default_h_grid(theta.T)
    h_grid = np.asarray(h_grid, dtype=float)
    h_max = float(np.max(h_grid))

    ts = np.linspace(0.0, theta.T - h_max, int(t_grid) + 1, endpoint=False)
    vals = np.asarray(theta.eval(ts), dtype=float)
    if abs(vals[0]) > 1e-12:
        raise PreconditionViolated(f"theta(0) = {vals[0]}, expected 0")
    if np.any(vals < -1e-12):
        raise PreconditionViolated("theta is negative on the grid")
    if np.all(vals <= 1e-300):
        raise PreconditionViolated("theta is identically 0 on the grid")

    best_gap = -np.inf
    best = None
    for t, th in zip(ts[1:], vals[1:]):
        if th <= 0:
            continue
        est = float(np.max((np.asarray(theta.eval(t + h_grid), dtype=float) - th) / h_grid))
        gap = est - C * th
        if gap > best_gap:
            best_gap = gap
            best = (float(t), est, float(th))
        if gap > 0:
            return LemmaPoint(found=True, t=float(t), dini_estimate=est, theta_value=float(th), best_gap=gap)
    t, est, th = best if best is not None else (None, -np.inf, 0.0)
    return LemmaPoint(found=False, t=t, dini_estimate=est, theta_value=th, best_gap=best_gap)
