"""Explicit solver for parabolic systems f_t = lap(f) + zeta . grad(f) + phi(t, x, f)
on an interval or a rectangle, with the boundary-condition taxonomy that the
invariance theory distinguishes: Dirichlet data, zero Neumann flux, oblique
conditions orthogonal to the deviation vector, and periodic (boundaryless)
domains.

Discretization: uniform node-centered grid, second-order central stencils,
ghost nodes for flux conditions, explicit RK4 (or forward Euler) in time with
dt tied to the diffusive stability bound.  The per-step arithmetic is kept
deliberately simple so each ingredient of an invariance claim stays
auditable; the compiled backend reproduces the same stage arithmetic for 1-d
scenarios that lower to kernel op codes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
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
    KernelSpec,
    ZETA_CONSTANT,
    ZETA_ZERO,
)
from .tangency import ReactionTerm, estimate_lipschitz


class ScenarioError(ValueError):
    """The scenario description is inconsistent."""


class Instability(RuntimeError):
    """A field value exceeded the overflow guard or went non-finite."""

    def __init__(self, msg, t=None, last_state=None):
        super().__init__(msg)
        self.t = t
        self.last_state = last_state


class ObliqueViolation(RuntimeError):
    """The oblique boundary data failed its orthogonality invariant."""


@dataclass(frozen=True)
class Domain:
    """Interval (dim 1) or rectangle (dim 2); periodic turns it into a closed
    manifold with no boundary."""

    dim: int
    extent: tuple  # ((a1, b1), ...) per axis
    grid: tuple  # cells per axis
    periodic: bool = False

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ScenarioError("dim must be 1 or 2")
        extent = tuple(tuple(float(v) for v in ab) for ab in self.extent)
        grid = tuple(int(n) for n in self.grid)
        if len(extent) != self.dim or len(grid) != self.dim:
            raise ScenarioError("extent and grid must have one entry per axis")
        for (a, b), n in zip(extent, grid):
            if not b > a:
                raise ScenarioError("extent must satisfy a < b")
            if n < 8:
                raise ScenarioError("grid must have at least 8 cells per axis")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "grid", grid)

    @property
    def spacing(self):
        return tuple((b - a) / n for (a, b), n in zip(self.extent, self.grid))

    @property
    def nodes(self):
        # periodic grids drop the duplicate endpoint
        return tuple(n if self.periodic else n + 1 for n in self.grid)


class BoundaryCondition:
    pass


@dataclass(frozen=True)
class Dirichlet(BoundaryCondition):
    """Boundary values g(t, x) -> (k, m) for boundary points x (k, dim).

    const_value marks time- and space-constant data, which the compiled
    backend can handle directly.
    """

    g: Callable
    const_value: Optional[np.ndarray] = None

    @staticmethod
    def constant(value):
        value = np.asarray(value, dtype=float).ravel()

        def g(t, x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(value, x.shape[:-1] + value.shape).copy()

        return Dirichlet(g=g, const_value=value)


@dataclass(frozen=True)
class NeumannZero(BoundaryCondition):
    """Zero outward normal derivative, enforced by mirror ghost nodes."""


@dataclass(frozen=True)
class Oblique(BoundaryCondition):
    """Prescribed outward normal derivative h(t, x, f) that must stay
    orthogonal to the deviation field: <lambda_bar(f), h(t, x, f)> = 0
    whenever f lies outside W, with lambda_bar equal to the deviation v -
    omega(v).  The orthogonality is asserted at runtime against the
    scenario's W; lambda_bar defaults to that deviation."""

    h: Callable  # (t, x (k, dim), f (k, m)) -> (k, m)
    lambda_bar: Optional[Callable] = None  # (f (k, m)) -> (k, m)
    check_tol: float = 1e-9


@dataclass
class FieldState:
    """Discretized section at one time: values over all grid nodes."""

    t: float
    values: np.ndarray  # (nx, m) or (nx, ny, m)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


@dataclass
class DriftField:
    """Drift coefficients zeta(t, x) -> (..., dim); kernel spec when constant."""

    fn: Callable
    dim: int
    kernel: Optional[KernelSpec] = None
    name: str = "custom"

    def __call__(self, t, x):
        return self.fn(t, x)


def zero_drift(dim):
    def fn(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (dim,))

    return DriftField(fn=fn, dim=dim, kernel=KernelSpec.make(ZETA_ZERO, []), name="zero")


def constant_drift(value):
    value = np.asarray(value, dtype=float).ravel()
    dim = value.shape[0]

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(value, x.shape[:-1] + (dim,)).copy()

    return DriftField(fn=fn, dim=dim, kernel=KernelSpec.make(ZETA_CONSTANT, value), name="constant")


@dataclass
class Scenario:
    """Full problem description for the flat solver."""

    domain: Domain
    W: convex.ConvexSet
    phi: ReactionTerm
    zeta: Optional[DriftField]
    bc: Optional[BoundaryCondition]
    f0: Callable  # (..., dim) -> (..., m)
    T: float
    dt: float | str = "auto"
    scheme: str = "rk4"
    name: str = "scenario"

    def __post_init__(self):
        if self.T <= 0:
            raise ScenarioError("T must be positive")
        if self.scheme not in ("rk4", "euler"):
            raise ScenarioError("scheme must be 'rk4' or 'euler'")
        if self.phi.m != self.W.dim:
            raise ScenarioError(
                f"reaction term has m={self.phi.m} but W lives in R^{self.W.dim}"
            )
        if self.zeta is None:
            self.zeta = zero_drift(self.domain.dim)
        if self.zeta.dim != self.domain.dim:
            raise ScenarioError("drift field dimension does not match the domain")
        if self.domain.periodic:
            if self.bc is not None:
                raise ScenarioError("periodic domains have no boundary; bc must be None")
        elif self.bc is None:
            raise ScenarioError("non-periodic domains need a boundary condition")

    @property
    def m(self):
        return self.W.dim


class FlatGrid:
    """Geometry context: node coordinates, boundary bookkeeping, and the
    one-sided outward normal derivative used by the Hopf diagnostic."""

    def __init__(self, domain: Domain):
        self.domain = domain
        self.dim = domain.dim
        self.h = domain.spacing
        self.shape = domain.nodes
        axes = [
            a + np.arange(n) * h
            for (a, _), n, h in zip(domain.extent, self.shape, self.h)
        ]
        self.axes = axes
        if self.dim == 1:
            self.X = axes[0][:, None]
        else:
            g = np.meshgrid(*axes, indexing="ij")
            self.X = np.stack(g, axis=-1)
        self.n_nodes = int(np.prod(self.shape))
        mask = np.zeros(self.shape, dtype=bool)
        if not domain.periodic:
            if self.dim == 1:
                mask[0] = mask[-1] = True
            else:
                mask[0, :] = mask[-1, :] = True
                mask[:, 0] = mask[:, -1] = True
        self.boundary_mask = mask

    def coords(self, flat_idx):
        idx = np.unravel_index(flat_idx, self.shape)
        return tuple(float(ax[i]) for ax, i in zip(self.axes, idx))

    def is_boundary(self, flat_idx):
        return bool(self.boundary_mask.reshape(-1)[flat_idx])

    def boundary_points(self):
        flat = np.flatnonzero(self.boundary_mask.reshape(-1))
        return flat

    def outward_derivatives(self, values, flat_idx):
        """One-sided second-order outward normal derivatives at a boundary
        node, one entry per face the node belongs to (two at a corner)."""
        idx = np.unravel_index(flat_idx, self.shape)
        out = []
        for axis in range(self.dim):
            n, h = self.shape[axis], self.h[axis]
            i = idx[axis]
            sl = list(idx)

            def take(j):
                sl[axis] = j
                return values[tuple(sl)]

            if i == 0:
                # nu = -e_axis; d/dnu f = -df/dx = (3 f0 - 4 f1 + f2) / (2h)
                out.append((3.0 * take(0) - 4.0 * take(1) + take(2)) / (2.0 * h))
            elif i == n - 1:
                out.append((3.0 * take(n - 1) - 4.0 * take(n - 2) + take(n - 3)) / (2.0 * h))
        return out


# -- boundary handling ------------------------------------------------------


def _oblique_check(bc: Oblique, t, x, f, W):
    hval = np.asarray(bc.h(t, x, f), dtype=float)
    if W is None:
        return hval
    omega, dist = W.project_many(f)
    outside = dist > convex.MEMBERSHIP_TOL
    if np.any(outside):
        lam = f[outside] - omega[outside]
        if bc.lambda_bar is not None:
            lb = np.asarray(bc.lambda_bar(f[outside]), dtype=float)
            if np.max(np.linalg.norm(lb - lam, axis=-1)) > 1e-6 * (1 + np.max(np.linalg.norm(lam, axis=-1))):
                raise ObliqueViolation("lambda_bar(f) differs from the deviation v - omega(v)")
        else:
            lb = lam
        ortho = np.abs(np.einsum("ij,ij->i", lb, hval[outside]))
        if np.max(ortho) > bc.check_tol * (1 + np.max(np.abs(hval))):
            raise ObliqueViolation(
                f"<lambda_bar(f), h(t,x,f)> = {np.max(ortho):.3e} exceeds tolerance"
            )
    return hval


def apply_boundary(state: FieldState, bc, grid: FlatGrid, W=None):
    """Fill the ghost layer around the state values; Dirichlet overwrites the
    boundary nodes themselves.  Returns the padded array ((nx+2, m) in 1-d,
    (nx+2, ny+2, m) in 2-d; corner ghosts are unused by the 5-point stencil).
    """
    values = state.values
    t = state.t
    dom = grid.domain
    m = values.shape[-1]
    if grid.dim == 1:
        nx = values.shape[0]
        pad = np.empty((nx + 2, m))
        pad[1:-1] = values
        if dom.periodic:
            pad[0] = values[-1]
            pad[-1] = values[0]
            return pad
        h = grid.h[0]
        if isinstance(bc, Dirichlet):
            xl = grid.X[0][None, :]
            xr = grid.X[-1][None, :]
            pad[1] = np.asarray(bc.g(t, xl), dtype=float)[0]
            pad[-2] = np.asarray(bc.g(t, xr), dtype=float)[0]
            pad[0] = pad[2]
            pad[-1] = pad[-3]
        elif isinstance(bc, NeumannZero):
            pad[0] = values[1]
            pad[-1] = values[-2]
        elif isinstance(bc, Oblique):
            xl = grid.X[0][None, :]
            xr = grid.X[-1][None, :]
            hl = _oblique_check(bc, t, xl, values[0][None, :], W)[0]
            hr = _oblique_check(bc, t, xr, values[-1][None, :], W)[0]
            # d/dnu f = h with nu = -x at the left end, +x at the right end
            pad[0] = values[1] + 2.0 * h * hl
            pad[-1] = values[-2] + 2.0 * h * hr
        else:
            raise ScenarioError(f"unsupported boundary condition {type(bc).__name__}")
        return pad

    nx, ny = values.shape[0], values.shape[1]
    pad = np.zeros((nx + 2, ny + 2, m))
    pad[1:-1, 1:-1] = values
    if dom.periodic:
        pad[0, 1:-1] = values[-1]
        pad[-1, 1:-1] = values[0]
        pad[1:-1, 0] = values[:, -1]
        pad[1:-1, -1] = values[:, 0]
        return pad
    if isinstance(bc, Dirichlet):
        for axis, side, face in (
            (0, 0, np.s_[1, 1:-1]),
            (0, 1, np.s_[-2, 1:-1]),
            (1, 0, np.s_[1:-1, 1]),
            (1, 1, np.s_[1:-1, -2]),
        ):
            x_face = _face_coords(grid, axis, side)
            pad[face] = np.asarray(bc.g(t, x_face), dtype=float)
        pad[0, 1:-1] = pad[2, 1:-1]
        pad[-1, 1:-1] = pad[-3, 1:-1]
        pad[1:-1, 0] = pad[1:-1, 2]
        pad[1:-1, -1] = pad[1:-1, -3]
    elif isinstance(bc, NeumannZero):
        pad[0, 1:-1] = values[1]
        pad[-1, 1:-1] = values[-2]
        pad[1:-1, 0] = values[:, 1]
        pad[1:-1, -1] = values[:, -2]
    elif isinstance(bc, Oblique):
        hx, hy = grid.h
        for axis, side in ((0, 0), (0, 1), (1, 0), (1, 1)):
            x_face = _face_coords(grid, axis, side)
            f_face = values[0] if (axis, side) == (0, 0) else \
                values[-1] if (axis, side) == (0, 1) else \
                values[:, 0] if (axis, side) == (1, 0) else values[:, -1]
            hv = _oblique_check(bc, t, x_face, f_face, W)
            h = hx if axis == 0 else hy
            if (axis, side) == (0, 0):
                pad[0, 1:-1] = values[1] + 2.0 * h * hv
            elif (axis, side) == (0, 1):
                pad[-1, 1:-1] = values[-2] + 2.0 * h * hv
            elif (axis, side) == (1, 0):
                pad[1:-1, 0] = values[:, 1] + 2.0 * h * hv
            else:
                pad[1:-1, -1] = values[:, -2] + 2.0 * h * hv
    else:
        raise ScenarioError(f"unsupported boundary condition {type(bc).__name__}")
    return pad


def _face_coords(grid: FlatGrid, axis, side):
    if axis == 0:
        return grid.X[0] if side == 0 else grid.X[-1]
    return grid.X[:, 0] if side == 0 else grid.X[:, -1]


# -- stepping ---------------------------------------------------------------


class _Stepper:
    """Numpy implementation of one explicit step; shared by step() and solve()."""

    def __init__(self, scenario: Scenario, grid: FlatGrid):
        self.sc = scenario
        self.grid = grid
        self.guard = OVERFLOW_GUARD
        self._dirichlet = isinstance(scenario.bc, Dirichlet)

    def rhs(self, t, values):
        sc, grid = self.sc, self.grid
        pad = apply_boundary(FieldState(t, values), sc.bc, grid, sc.W)
        if grid.dim == 1:
            h = grid.h[0]
            center = pad[1:-1]
            out = (pad[2:] - 2.0 * center + pad[:-2]) / (h * h)
            z = sc.zeta(t, grid.X)
            if sc.zeta.name != "zero":
                out += z[..., 0:1] * (pad[2:] - pad[:-2]) / (2.0 * h)
            out += sc.phi(t, grid.X, center)
            if self._dirichlet:
                out[0] = 0.0
                out[-1] = 0.0
            return out
        hx, hy = grid.h
        center = pad[1:-1, 1:-1]
        out = (pad[2:, 1:-1] - 2.0 * center + pad[:-2, 1:-1]) / (hx * hx)
        out += (pad[1:-1, 2:] - 2.0 * center + pad[1:-1, :-2]) / (hy * hy)
        if sc.zeta.name != "zero":
            z = sc.zeta(t, grid.X)
            out += z[..., 0:1] * (pad[2:, 1:-1] - pad[:-2, 1:-1]) / (2.0 * hx)
            out += z[..., 1:2] * (pad[1:-1, 2:] - pad[1:-1, :-2]) / (2.0 * hy)
        out += sc.phi(t, grid.X, center)
        if self._dirichlet:
            out[0] = out[-1] = 0.0
            out[:, 0] = out[:, -1] = 0.0
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
            self._pin_dirichlet(t + dt, new)
        if not np.all(np.abs(new) <= self.guard):
            raise Instability(
                f"field exceeded the overflow guard {self.guard:g} at t={t + dt:.6g}",
                t=t + dt,
            )
        return new

    def _pin_dirichlet(self, t, values):
        bc, grid = self.sc.bc, self.grid
        if grid.dim == 1:
            values[0] = np.asarray(bc.g(t, grid.X[0][None, :]), dtype=float)[0]
            values[-1] = np.asarray(bc.g(t, grid.X[-1][None, :]), dtype=float)[0]
        else:
            values[0] = np.asarray(bc.g(t, _face_coords(grid, 0, 0)), dtype=float)
            values[-1] = np.asarray(bc.g(t, _face_coords(grid, 0, 1)), dtype=float)
            values[:, 0] = np.asarray(bc.g(t, _face_coords(grid, 1, 0)), dtype=float)
            values[:, -1] = np.asarray(bc.g(t, _face_coords(grid, 1, 1)), dtype=float)


def step(state: FieldState, scenario: Scenario, dt: float) -> FieldState:
    """One explicit time step (RK4 by default, forward Euler per scenario)."""
    grid = FlatGrid(scenario.domain)
    stepper = _Stepper(scenario, grid)
    return FieldState(t=state.t + dt, values=stepper.step(state.t, state.values.copy(), dt))


# -- time step selection ------------------------------------------------------


def lipschitz_probe_box(scenario: Scenario, f0_values):
    if scenario.phi.lipschitz_probe_box is not None:
        return scenario.phi.lipschitz_probe_box
    lo = f0_values.reshape(-1, scenario.m).min(axis=0)
    hi = f0_values.reshape(-1, scenario.m).max(axis=0)
    try:
        wlo, whi = scenario.W.bounding_box()
        lo, hi = np.minimum(lo, wlo), np.maximum(hi, whi)
    except NotImplementedError:
        pass
    return lo - 0.5, hi + 0.5


def auto_dt(scenario: Scenario, f0_values, g_min=1.0):
    """Diffusive bound 0.2 h^2 / (2 dim), tightened by the empirical
    Lipschitz constant of the reaction term; snapped so T is an exact
    multiple."""
    h_min = min(scenario.domain.spacing)
    dt = 0.2 * h_min * h_min * g_min / (2.0 * scenario.domain.dim)
    C = estimate_lipschitz(scenario.phi, lipschitz_probe_box(scenario, f0_values))
    if C > 0:
        dt = min(dt, 0.2 / C)
    n = max(1, math.ceil(scenario.T / dt))
    return scenario.T / n, n


def resolve_dt(scenario: Scenario, f0_values, g_min=1.0):
    if scenario.dt == "auto":
        return auto_dt(scenario, f0_values, g_min)
    dt = float(scenario.dt)
    if dt <= 0:
        raise ScenarioError("dt must be positive")
    n = max(1, math.ceil(scenario.T / dt - 1e-12))
    return scenario.T / n, n


def truncation_threshold(f0_values, h_min, T):
    """Exit threshold 10 * eps_grid with eps_grid = max(1e-8, interior
    truncation proxy) estimated from a fourth difference of the initial data."""
    eps = 1e-8
    n = f0_values.shape[0]
    if f0_values.ndim == 2 and n >= 5:
        d4 = (
            f0_values[4:]
            - 4 * f0_values[3:-1]
            + 6 * f0_values[2:-2]
            - 4 * f0_values[1:-3]
            + f0_values[:-4]
        )
        f4_max = float(np.max(np.abs(d4))) / h_min**4 if d4.size else 0.0
        eps = max(eps, h_min**2 / 12.0 * f4_max * min(T, 1.0))
    return 10.0 * eps


# -- lowering to the compiled kernels ----------------------------------------


def _lower_bc(bc, periodic):
    """(code, values) per side for kernel consumption, or None if not lowerable."""
    if periodic:
        return (BC_NEUMANN_ZERO, None), (BC_NEUMANN_ZERO, None)
    if isinstance(bc, NeumannZero):
        return (BC_NEUMANN_ZERO, None), (BC_NEUMANN_ZERO, None)
    if isinstance(bc, Dirichlet) and bc.const_value is not None:
        v = bc.const_value
        return (BC_DIRICHLET, v), (BC_DIRICHLET, v)
    return None


def _kernel_plan(scenario: Scenario):
    if not _backend.HAVE_COMPILED or scenario.domain.dim != 1:
        return None
    if scenario.phi.kernel is None or scenario.zeta.kernel is None:
        return None
    bc = _lower_bc(scenario.bc, scenario.domain.periodic)
    if bc is None:
        return None
    (bcl, bcl_vals), (bcr, bcr_vals) = bc
    m = scenario.m
    zeros = np.zeros(m)
    return {
        "periodic": scenario.domain.periodic,
        "bcl": bcl,
        "bcl_vals": np.asarray(bcl_vals if bcl_vals is not None else zeros, dtype=float),
        "bcr": bcr,
        "bcr_vals": np.asarray(bcr_vals if bcr_vals is not None else zeros, dtype=float),
        "phi_code": scenario.phi.kernel.code,
        "phi_params": scenario.phi.kernel.params,
        "zeta_code": scenario.zeta.kernel.code,
        "zeta_params": scenario.zeta.kernel.params,
        "scheme": SCHEME_RK4 if scenario.scheme == "rk4" else SCHEME_EULER,
    }


# -- solve --------------------------------------------------------------------


@dataclass
class RunResult:
    trajectory: list
    verdict: "diagnostics.InvarianceVerdict"
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def initial_state(scenario: Scenario, grid: FlatGrid) -> FieldState:
    vals = np.asarray(scenario.f0(grid.X), dtype=float)
    expect = grid.shape + (scenario.m,)
    if vals.shape != expect:
        raise ScenarioError(f"f0 returned shape {vals.shape}, expected {expect}")
    if not np.all(np.isfinite(vals)):
        raise ScenarioError("f0 produced non-finite values")
    return FieldState(t=0.0, values=vals)


def solve(
    scenario: Scenario,
    backend="auto",
    exit_threshold=None,
    cadence=None,
    trajectory_stride=None,
):
    """Integrate the scenario to T with invariance monitoring.

    Returns a RunResult with the stored trajectory frames, the verdict, and
    the per-sample diagnostic rows.  cadence is the diagnostics stride in
    steps (default: the run is sampled about 1000 times);
    trajectory_stride counts diagnostic samples per stored frame.
    """
    grid = FlatGrid(scenario.domain)
    state0 = initial_state(scenario, grid)
    _, dist0 = scenario.W.project_many(state0.values.reshape(-1, scenario.m))
    if np.max(dist0) > convex.MEMBERSHIP_TOL:
        warnings.warn(
            "initial section leaves W (max dist {:.3e}); the invariance "
            "hypotheses do not hold for this run".format(float(np.max(dist0))),
            stacklevel=2,
        )

    dt, nsteps = resolve_dt(scenario, state0.values)
    if exit_threshold is None:
        exit_threshold = truncation_threshold(state0.values, min(grid.h), scenario.T)
    if cadence is None:
        cadence = max(1, nsteps // 1000)
    n_outputs = math.ceil(nsteps / cadence)
    if trajectory_stride is None:
        trajectory_stride = max(1, n_outputs // 32)

    backend = _backend.backend_name(backend)
    plan = _kernel_plan(scenario) if backend == "compiled" else None
    used_backend = "compiled" if plan is not None else "python"
    stepper = _Stepper(scenario, grid) if plan is None else None

    monitor = diagnostics.InvarianceMonitor(
        scenario.W, exit_threshold, grid, phi=scenario.phi
    )
    trajectory = [FieldState(state0.t, state0.values.copy())]
    monitor.observe(state0)

    values = state0.values.copy()
    t = 0.0
    failure = None
    step_idx = 0
    out_idx = 0
    kern = _backend.kernels()
    while step_idx < nsteps:
        k = min(cadence, nsteps - step_idx)
        try:
            if plan is not None:
                status = kern.advance_flat_1d(
                    values,
                    dt,
                    k,
                    grid.h[0],
                    1 if plan["periodic"] else 0,
                    plan["bcl"],
                    plan["bcl_vals"],
                    plan["bcr"],
                    plan["bcr_vals"],
                    plan["phi_code"],
                    plan["phi_params"],
                    plan["zeta_code"],
                    plan["zeta_params"],
                    plan["scheme"],
                    OVERFLOW_GUARD,
                )
                if status != STATUS_OK:
                    raise Instability(
                        f"field exceeded the overflow guard near t={t:.6g}", t=t
                    )
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
        "grid": list(grid.shape),
        "scheme": scenario.scheme,
    }
    return RunResult(trajectory=trajectory, verdict=verdict, rows=monitor.rows, meta=meta)
