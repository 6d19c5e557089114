"""Covariant mode: a rank-m trivialized bundle over the interval [0, L] with
metric g(x) dx^2 and a metric-compatible connection A(x) (skew-symmetric in
the trivialization).  The solver integrates

    f_t = lap_A f + zeta . D_x f + phi(t, f)

where D_x f = df/dx + A f is the covariant derivative, lap_A f =
g^{-1} (D_x D_x f - Gamma D_x f) with Gamma = g'/(2g), and the covariant
Neumann condition means D_nu f = 0 in the outward unit normal nu =
-g^{-1/2} d/dx at x=0 and +g^{-1/2} d/dx at x=L.

The compact half-point stencil for D_x makes the scheme collapse to the flat
second-difference stencil when g = 1 and A = 0, so flat-limit runs reproduce
the flat solver to rounding accumulation.  Only origin-centered balls are
accepted as invariant-set candidates here: they are the closed convex sets
invariant under every orthogonal holonomy, which parallel invariance of W
under arbitrary skew connections forces.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _backend, convex, diagnostics
from ._backend import (
    BC_DIRICHLET,
    BC_NEUMANN_ZERO,
    OVERFLOW_GUARD,
    SCHEME_EULER,
    SCHEME_RK4,
    STATUS_OK,
)
from .flat import (
    Dirichlet,
    DriftField,
    FieldState,
    Instability,
    NeumannZero,
    RunResult,
    ScenarioError,
    zero_drift,
)
from .tangency import ReactionTerm, estimate_lipschitz

SKEW_TOL = 1e-12


@dataclass(frozen=True)
class BaseGeometry:
    """Interval [0, L] with metric coefficient g(x) > 0 and N cells."""

    L: float
    g: Callable  # x (scalar or array) -> positive metric coefficient
    N: int

    def __post_init__(self):
        if self.L <= 0:
            raise ScenarioError("L must be positive")
        if self.N < 8:
            raise ScenarioError("grid must have at least 8 cells")

    @property
    def h(self):
        return self.L / self.N

    @property
    def nodes(self):
        return np.arange(self.N + 1) * self.h

    def g_values(self):
        gv = np.asarray(self.g(self.nodes), dtype=float)
        gv = np.broadcast_to(gv, (self.N + 1,)).copy()
        if np.any(gv <= 0) or not np.all(np.isfinite(gv)):
            raise ScenarioError("metric coefficient must be positive and finite on the grid")
        return gv


@dataclass(frozen=True)
class Connection:
    """Connection coefficient A(x): m x m skew-symmetric in the trivialization."""

    A: Callable  # x -> (m, m)
    m: int

    def matrix(self, x):
        a = np.asarray(self.A(x), dtype=float)
        if a.shape != (self.m, self.m):
            raise ScenarioError(f"connection returned shape {a.shape}, expected {(self.m, self.m)}")
        return a

    def matrices(self, xs):
        return np.stack([self.matrix(float(x)) for x in np.atleast_1d(xs)])

    def validate_skew(self, xs):
        mats = self.matrices(xs)
        worst = np.max(np.abs(mats + np.swapaxes(mats, -1, -2)))
        if worst > SKEW_TOL:
            raise ScenarioError(
                f"connection is not skew-symmetric on the grid (defect {worst:.2e}); "
                "it would not be compatible with the fiber metric"
            )
        return mats


def zero_connection(m):
    def A(x):
        return np.zeros((m, m))

    return Connection(A=A, m=m)


def rotation_connection(rate, m=2):
    """Constant A = rate * J with J the 90-degree rotation generator (m = 2)."""
    if m != 2:
        raise ScenarioError("rotation connection is defined for m = 2")
    J = np.array([[0.0, -1.0], [1.0, 0.0]])

    def A(x):
        return rate * J

    return Connection(A=A, m=2)


def rotation_profile_connection(rate_fn):
    """A(x) = rate_fn(x) * J for a scalar profile; m = 2."""
    J = np.array([[0.0, -1.0], [1.0, 0.0]])

    def A(x):
        return float(rate_fn(x)) * J

    return Connection(A=A, m=2)


@dataclass
class BundleScenario:
    geometry: BaseGeometry
    connection: Connection
    W: convex.ConvexSet
    phi: ReactionTerm
    zeta: Optional[DriftField]
    bc: object  # NeumannZero (covariant) or Dirichlet
    f0: Callable
    T: float
    dt: float | str = "auto"
    scheme: str = "rk4"
    name: str = "bundle-scenario"

    def __post_init__(self):
        if not isinstance(self.W, convex.Ball) or np.linalg.norm(self.W.center) > 1e-12:
            raise ScenarioError(
                "bundle mode requires W to be an origin-centered ball (the closed "
                "convex sets invariant under every orthogonal parallel transport)"
            )
        if self.phi.m != self.W.dim or self.connection.m != self.W.dim:
            raise ScenarioError("fiber dimensions of W, phi and the connection disagree")
        if not isinstance(self.bc, (NeumannZero, Dirichlet)):
            raise ScenarioError("bundle boundary condition must be NeumannZero or Dirichlet")
        if self.zeta is None:
            self.zeta = zero_drift(1)
        if self.T <= 0:
            raise ScenarioError("T must be positive")
        if self.scheme not in ("rk4", "euler"):
            raise ScenarioError("scheme must be 'rk4' or 'euler'")

    @property
    def m(self):
        return self.W.dim


# -- parallel transport -------------------------------------------------------


def parallel_transport(connection: Connection, x0, x1, v, step=None):
    """Transport the fiber vector v from x0 to x1: RK4 on dp/dx = -A(x) p.

    Metric compatibility (skew A) makes the transport an isometry; the RK4
    error keeps |result| = |v| to ~1e-8 at grid-scale steps.
    """
    v = np.asarray(v, dtype=float).copy()
    span = float(x1 - x0)
    if span == 0.0:
        return v
    if step is None:
        step = abs(span) / max(16, math.ceil(abs(span) * 64))
    n = max(1, math.ceil(abs(span) / step))
    hs = span / n
    x = float(x0)
    p = v
    for _ in range(n):
        k1 = -connection.matrix(x) @ p
        k2 = -connection.matrix(x + 0.5 * hs) @ (p + 0.5 * hs * k1)
        k3 = -connection.matrix(x + 0.5 * hs) @ (p + 0.5 * hs * k2)
        k4 = -connection.matrix(x + hs) @ (p + hs * k3)
        p = p + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x += hs
    return p


# -- covariant operators -------------------------------------------------------


class BundleGrid:
    """Geometry context and precomputed arrays for the covariant stencil."""

    def __init__(self, geometry: BaseGeometry, connection: Connection):
        self.geometry = geometry
        self.connection = connection
        self.dim = 1
        self.h = (geometry.h,)
        self.shape = (geometry.N + 1,)
        self.axes = [geometry.nodes]
        self.X = geometry.nodes[:, None]
        self.n_nodes = geometry.N + 1
        h = geometry.h
        self.A_nodes = connection.validate_skew(geometry.nodes)
        half_x = (np.arange(geometry.N + 2) - 0.5) * h  # midpoints -1/2 .. N+1/2
        self.A_half = connection.matrices(half_x)
        gv = geometry.g_values()
        self.g_nodes = gv
        self.g_inv = 1.0 / gv
        dg = np.empty_like(gv)
        dg[1:-1] = (gv[2:] - gv[:-2]) / (2.0 * h)
        dg[0] = (-3.0 * gv[0] + 4.0 * gv[1] - gv[2]) / (2.0 * h)
        dg[-1] = (3.0 * gv[-1] - 4.0 * gv[-2] + gv[-3]) / (2.0 * h)
        self.gamma = dg / (2.0 * gv)
        mask = np.zeros(self.shape, dtype=bool)
        mask[0] = mask[-1] = True
        self.boundary_mask = mask

    def coords(self, flat_idx):
        return (float(self.axes[0][flat_idx]),)

    def is_boundary(self, flat_idx):
        return bool(self.boundary_mask[flat_idx])

    def outward_derivatives(self, values, flat_idx):
        """Covariant outward normal derivative D_nu f = -+ g^{-1/2} (df/dx + A f)."""
        h = self.geometry.h
        n = self.n_nodes
        if flat_idx == 0:
            dfdx = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
            d = dfdx + self.A_nodes[0] @ values[0]
            return [-d / math.sqrt(self.g_nodes[0])]
        if flat_idx == n - 1:
            dfdx = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * h)
            d = dfdx + self.A_nodes[-1] @ values[-1]
            return [d / math.sqrt(self.g_nodes[-1])]
        raise diagnostics.InteriorPoint(f"node {flat_idx} is not on the boundary")


def _pad_covariant(values, t, bc, grid: BundleGrid):
    """Ghost-filled (nx+2, m) array; covariant Neumann kills the centered
    covariant derivative at the endpoints, Dirichlet pins the nodes."""
    nx, m = values.shape
    h = grid.geometry.h
    pad = np.empty((nx + 2, m))
    pad[1:-1] = values
    if isinstance(bc, NeumannZero):
        pad[0] = values[1] + 2.0 * h * (grid.A_nodes[0] @ values[0])
        pad[-1] = values[-2] - 2.0 * h * (grid.A_nodes[-1] @ values[-1])
    else:  # Dirichlet
        xl = grid.X[0][None, :]
        xr = grid.X[-1][None, :]
        pad[1] = np.asarray(bc.g(t, xl), dtype=float)[0]
        pad[-2] = np.asarray(bc.g(t, xr), dtype=float)[0]
        pad[0] = pad[2]
        pad[-1] = pad[-3]
    return pad


def _covariant_lap_and_df(pad, grid: BundleGrid):
    """(lap, Df) at the nodes from a ghost-padded array.

    Half-point covariant increments u[j] between nodes j-1 and j:
        u = (f_j - f_{j-1})/h + A_{j-1/2} (f_j + f_{j-1})/2
    then D_x D_x f = (u_+ - u_-)/h + A (u_+ + u_-)/2, D_x f = (u_+ + u_-)/2
    and lap = g^{-1} (D_x D_x f - Gamma D_x f).
    """
    h = grid.geometry.h
    diff = (pad[1:] - pad[:-1]) / h
    avg = 0.5 * (pad[1:] + pad[:-1])
    u = diff + np.einsum("nij,nj->ni", grid.A_half, avg)
    u_minus = u[:-1]
    u_plus = u[1:]
    ddf = (u_plus - u_minus) / h + np.einsum(
        "nij,nj->ni", grid.A_nodes, 0.5 * (u_plus + u_minus)
    )
    df = 0.5 * (u_plus + u_minus)
    lap = grid.g_inv[:, None] * (ddf - grid.gamma[:, None] * df)
    return lap, df


def covariant_laplacian(state: FieldState, geometry: BaseGeometry, connection: Connection):
    """Covariant Laplacian of a section on the grid (covariant-Neumann closure
    at the endpoints).  Reduces to the flat second-difference stencil when
    g = 1 and A = 0."""
    grid = BundleGrid(geometry, connection)
    pad = _pad_covariant(state.values, state.t, NeumannZero(), grid)
    lap, _ = _covariant_lap_and_df(pad, grid)
    return lap


class _BundleStepper:
    def __init__(self, scenario: BundleScenario, grid: BundleGrid):
        self.sc = scenario
        self.grid = grid
        self.guard = OVERFLOW_GUARD
        self._dirichlet = isinstance(scenario.bc, Dirichlet)

    def rhs(self, t, values):
        sc, grid = self.sc, self.grid
        pad = _pad_covariant(values, t, sc.bc, grid)
        lap, df = _covariant_lap_and_df(pad, grid)
        out = lap
        if sc.zeta.name != "zero":
            z = sc.zeta(t, grid.X)
            out = out + z[:, 0:1] * df
        out = out + sc.phi(t, grid.X, values)
        if self._dirichlet:
            out[0] = 0.0
            out[-1] = 0.0
        return out

    def step(self, t, values, dt):
        if self.sc.scheme == "euler":
            new = values + dt * self.rhs(t, values)
        else:
            k1 = self.rhs(t, values)
            k2 = self.rhs(t + 0.5 * dt, values + 0.5 * dt * k1)
            k3 = self.rhs(t + 0.5 * dt, values + 0.5 * dt * k2)
            k4 = self.rhs(t + dt, values + dt * k3)
            new = values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if self._dirichlet:
            xl, xr = self.grid.X[0][None, :], self.grid.X[-1][None, :]
            new[0] = np.asarray(self.sc.bc.g(t + dt, xl), dtype=float)[0]
            new[-1] = np.asarray(self.sc.bc.g(t + dt, xr), dtype=float)[0]
        if not np.all(np.abs(new) <= self.guard):
            raise Instability(
                f"field exceeded the overflow guard {self.guard:g} at t={t + dt:.6g}",
                t=t + dt,
            )
        return new


def bundle_step(state: FieldState, scenario: BundleScenario, dt: float) -> FieldState:
    grid = BundleGrid(scenario.geometry, scenario.connection)
    stepper = _BundleStepper(scenario, grid)
    return FieldState(t=state.t + dt, values=stepper.step(state.t, state.values.copy(), dt))


def _resolve_dt(scenario: BundleScenario, f0_values, g_min):
    if scenario.dt != "auto":
        dt = float(scenario.dt)
        if dt <= 0:
            raise ScenarioError("dt must be positive")
        n = max(1, math.ceil(scenario.T / dt - 1e-12))
        return scenario.T / n, n
    h = scenario.geometry.h
    dt = 0.2 * h * h * g_min / 2.0
    if scenario.phi.lipschitz_probe_box is not None:
        box = scenario.phi.lipschitz_probe_box
    else:
        r = scenario.W.radius
        box = (-np.full(scenario.m, r + 0.5), np.full(scenario.m, r + 0.5))
    C = estimate_lipschitz(scenario.phi, box)
    if C > 0:
        dt = min(dt, 0.2 / C)
    n = max(1, math.ceil(scenario.T / dt))
    return scenario.T / n, n


def _kernel_plan(scenario: BundleScenario, grid: BundleGrid):
    if not _backend.HAVE_COMPILED:
        return None
    if scenario.phi.kernel is None or scenario.zeta.kernel is None:
        return None
    if isinstance(scenario.bc, NeumannZero):
        bc_code, bc_vals = BC_NEUMANN_ZERO, np.zeros(scenario.m)
    elif isinstance(scenario.bc, Dirichlet) and scenario.bc.const_value is not None:
        bc_code, bc_vals = BC_DIRICHLET, scenario.bc.const_value
    else:
        return None
    return {
        "bc_code": bc_code,
        "bc_vals": np.asarray(bc_vals, dtype=float),
        "phi_code": scenario.phi.kernel.code,
        "phi_params": scenario.phi.kernel.params,
        "zeta_code": scenario.zeta.kernel.code,
        "zeta_params": scenario.zeta.kernel.params,
        "scheme": SCHEME_RK4 if scenario.scheme == "rk4" else SCHEME_EULER,
        "A_nodes": np.ascontiguousarray(grid.A_nodes),
        "A_half": np.ascontiguousarray(grid.A_half),
        "g_inv": np.ascontiguousarray(grid.g_inv),
        "gamma": np.ascontiguousarray(grid.gamma),
    }


def gauge_transform_scenario(scenario: BundleScenario, psi, dpsi):
    """Rewrite the scenario in a rotated trivialization R(x) = exp(psi(x) J):
    the connection coefficient becomes a(x) - psi'(x) (fiber rotations commute
    in rank 2) and the initial section is rotated pointwise.  Only covariant
    Neumann scenarios transform cleanly (Dirichlet data would need rotating too).
    """
    if scenario.m != 2:
        raise ScenarioError("gauge transform helper is for rank-2 bundles")
    if not isinstance(scenario.bc, NeumannZero):
        raise ScenarioError("gauge transform helper expects covariant Neumann data")
    conn = scenario.connection

    def a_tilde(x):
        return conn.matrix(float(x))[1, 0] - float(dpsi(x))

    f0_old = scenario.f0

    def f0_new(X):
        vals = np.asarray(f0_old(X), dtype=float)
        th = np.asarray(psi(X[..., 0]), dtype=float)
        c, s = np.cos(th), np.sin(th)
        out = np.empty_like(vals)
        out[..., 0] = c * vals[..., 0] - s * vals[..., 1]
        out[..., 1] = s * vals[..., 0] + c * vals[..., 1]
        return out

    return BundleScenario(
        geometry=scenario.geometry,
        connection=rotation_profile_connection(a_tilde),
        W=scenario.W,
        phi=scenario.phi,
        zeta=scenario.zeta,
        bc=scenario.bc,
        f0=f0_new,
        T=scenario.T,
        dt=scenario.dt,
        scheme=scenario.scheme,
        name=scenario.name + "-gauge",
    )


def gauge_covariance_check(scenario: BundleScenario, psi, dpsi, backend="auto"):
    """Solve the scenario and its gauge transform; report the final-state
    mismatch |f_gauge(T) - R(psi) f(T)| (max over nodes and components)."""
    base = solve_bundle(scenario, backend=backend)
    transformed = solve_bundle(gauge_transform_scenario(scenario, psi, dpsi), backend=backend)
    f_base = base.trajectory[-1].values
    f_gauge = transformed.trajectory[-1].values
    grid = BundleGrid(scenario.geometry, scenario.connection)
    th = np.asarray(psi(grid.axes[0]), dtype=float)
    c, s = np.cos(th), np.sin(th)
    rotated = np.empty_like(f_base)
    rotated[:, 0] = c * f_base[:, 0] - s * f_base[:, 1]
    rotated[:, 1] = s * f_base[:, 0] + c * f_base[:, 1]
    mismatch = float(np.max(np.abs(f_gauge - rotated)))
    return {"mismatch": mismatch, "base": base, "transformed": transformed}


def solve_bundle(
    scenario: BundleScenario,
    backend="auto",
    exit_threshold=None,
    cadence=None,
    trajectory_stride=None,
):
    """Integrate the covariant scenario to T with invariance monitoring."""
    grid = BundleGrid(scenario.geometry, scenario.connection)
    vals = np.asarray(scenario.f0(grid.X), dtype=float)
    expect = grid.shape + (scenario.m,)
    if vals.shape != expect:
        raise ScenarioError(f"f0 returned shape {vals.shape}, expected {expect}")
    state0 = FieldState(t=0.0, values=vals)
    _, dist0 = scenario.W.project_many(vals)
    if np.max(dist0) > convex.MEMBERSHIP_TOL:
        warnings.warn(
            "initial section leaves W (max dist {:.3e})".format(float(np.max(dist0))),
            stacklevel=2,
        )

    g_min = float(np.min(grid.g_nodes))
    dt, nsteps = _resolve_dt(scenario, vals, g_min)
    if exit_threshold is None:
        from .flat import truncation_threshold

        exit_threshold = truncation_threshold(vals, grid.geometry.h, scenario.T)
    if cadence is None:
        cadence = max(1, nsteps // 1000)
    n_outputs = math.ceil(nsteps / cadence)
    if trajectory_stride is None:
        trajectory_stride = max(1, n_outputs // 32)

    backend = _backend.backend_name(backend)
    plan = _kernel_plan(scenario, grid) if backend == "compiled" else None
    used_backend = "compiled" if plan is not None else "python"
    stepper = _BundleStepper(scenario, grid) if plan is None else None

    monitor = diagnostics.InvarianceMonitor(scenario.W, exit_threshold, grid, phi=scenario.phi)
    trajectory = [FieldState(0.0, vals.copy())]
    monitor.observe(state0)

    values = vals.copy()
    t = 0.0
    failure = None
    step_idx = 0
    out_idx = 0
    kern = _backend.kernels()
    while step_idx < nsteps:
        k = min(cadence, nsteps - step_idx)
        try:
            if plan is not None:
                status = kern.advance_bundle_1d(
                    values,
                    dt,
                    k,
                    grid.geometry.h,
                    plan["bc_code"],
                    plan["bc_vals"],
                    plan["bc_code"],
                    plan["bc_vals"],
                    plan["A_nodes"],
                    plan["A_half"],
                    plan["g_inv"],
                    plan["gamma"],
                    plan["phi_code"],
                    plan["phi_params"],
                    plan["zeta_code"],
                    plan["zeta_params"],
                    plan["scheme"],
                    OVERFLOW_GUARD,
                )
                if status != STATUS_OK:
                    raise Instability(f"field exceeded the overflow guard near t={t:.6g}", t=t)
            else:
                for j in range(k):
                    values = stepper.step(t + j * dt, values, dt)
        except Instability as e:
            failure = str(e)
            break
        step_idx += k
        t = step_idx * dt
        state = FieldState(t=t, values=values.copy())
        monitor.observe(state)
        out_idx += 1
        if out_idx % trajectory_stride == 0 or step_idx == nsteps:
            trajectory.append(state)

    verdict = monitor.finish(failed=failure is not None, failure=failure)
    meta = {
        "backend": used_backend,
        "dt": dt,
        "steps": nsteps,
        "completed_steps": step_idx,
        "cadence": cadence,
        "exit_threshold": exit_threshold,
        "grid": [grid.n_nodes - 1],
        "scheme": scenario.scheme,
    }
    return RunResult(trajectory=trajectory, verdict=verdict, rows=monitor.rows, meta=meta)
