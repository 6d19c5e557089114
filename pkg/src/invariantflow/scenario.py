"""Scenario files: JSON descriptions of runs, plus the CSV/JSON writers.

Convex set schema:
    {"type": "box", "lo": [...], "hi": [...]}
    {"type": "ball", "center": [...], "radius": r}
    {"type": "polytope", "normals": [[...], ...], "offsets": [...]}

Reaction terms, drifts, initial sections, boundary data and bundle geometry
are either named built-ins with parameter maps or expression strings in the
small arithmetic grammar (see expressions.py).  Built-ins lower to compiled
kernel op codes; expression components run on the numpy path.
"""

from __future__ import annotations

import json
import math

import numpy as np

from . import bundle as bundle_mod
from . import convex, flat
from .expressions import compile_expression, space_variables
from .flat import Dirichlet, Domain, NeumannZero, Oblique, Scenario, ScenarioError
from .tangency import (
    ReactionTerm,
    constant_reaction,
    expression_reaction,
    fhn_reaction,
    linear_reaction,
    logistic_reaction,
    zero_reaction,
)

TWO_PI = 2.0 * math.pi


def convex_set_from_json(d) -> convex.ConvexSet:
    kind = d.get("type")
    try:
        if kind == "box":
            return convex.Box(d["lo"], d["hi"])
        if kind == "ball":
            return convex.Ball(d["center"], d["radius"])
        if kind == "polytope":
            return convex.Polytope(d["normals"], d["offsets"])
    except KeyError as e:
        raise ScenarioError(f"convex set misses field {e}") from e
    raise ScenarioError(f"unknown convex set type {kind!r}")


def phi_from_json(d, dim, m) -> ReactionTerm:
    if "expr" in d:
        return expression_reaction(d["expr"], dim=dim, m=m)
    name = d.get("name")
    params = d.get("params", {})
    if name == "zero":
        return zero_reaction(m)
    if name == "linear":
        if "matrix" in params:
            return linear_reaction(np.asarray(params["matrix"], dtype=float))
        return linear_reaction(float(params.get("coef", -1.0)), m=m)
    if name == "logistic":
        return logistic_reaction(rate=params.get("rate", 1.0), m=m)
    if name == "fhn":
        if m != 2:
            raise ScenarioError("fhn reaction needs m = 2")
        return fhn_reaction(
            a=params.get("a", 0.7),
            b=params.get("b", 0.8),
            eps=params.get("eps", 0.08),
            current=params.get("current", 0.5),
        )
    if name == "constant":
        return constant_reaction(params["value"])
    raise ScenarioError(f"unknown reaction term {name!r}")


def zeta_from_json(d, dim):
    if d is None:
        return flat.zero_drift(dim)
    if "expr" in d:
        exprs = d["expr"]
        if isinstance(exprs, str):
            exprs = [exprs]
        if len(exprs) != dim:
            raise ScenarioError(f"drift needs {dim} component expressions")
        names = space_variables(dim)
        fns = [compile_expression(e, names) for e in exprs]

        def fn(t, x):
            x = np.asarray(x, dtype=float)
            env = {"t": t}
            for j in range(dim):
                env[f"x{j + 1}"] = x[..., j]
            out = np.empty(x.shape[:-1] + (dim,))
            for j in range(dim):
                out[..., j] = fns[j](env)
            return out

        return flat.DriftField(fn=fn, dim=dim, name="expr")
    name = d.get("name")
    if name == "zero":
        return flat.zero_drift(dim)
    if name == "constant":
        return flat.constant_drift(d.get("params", {})["value"])
    raise ScenarioError(f"unknown drift {name!r}")


def f0_from_json(d, domain_extent, dim, m):
    if "expr" in d:
        exprs = d["expr"]
        if isinstance(exprs, str):
            exprs = [exprs]
        if len(exprs) != m:
            raise ScenarioError(f"f0 needs {m} component expressions")
        names = space_variables(dim) - {"t"}
        fns = [compile_expression(e, names) for e in exprs]

        def fn(x):
            x = np.asarray(x, dtype=float)
            env = {}
            for j in range(dim):
                env[f"x{j + 1}"] = x[..., j]
            out = np.empty(x.shape[:-1] + (m,))
            for i in range(m):
                out[..., i] = fns[i](env)
            return out

        return fn
    name = d.get("name")
    params = d.get("params", {})
    if name == "constant":
        value = np.asarray(params["value"], dtype=float).ravel()
        if value.shape[0] != m:
            raise ScenarioError(f"constant f0 needs {m} components")

        def fn(x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(value, x.shape[:-1] + (m,)).copy()

        return fn
    if name == "sine":
        offset = np.broadcast_to(np.asarray(params.get("offset", 0.0), dtype=float), (m,)).copy()
        amp = np.broadcast_to(np.asarray(params.get("amplitude", 1.0), dtype=float), (m,)).copy()
        periods = float(params.get("periods", 1.0))
        a, b = domain_extent[0]

        def fn(x):
            x = np.asarray(x, dtype=float)
            phase = np.sin(TWO_PI * periods * (x[..., 0] - a) / (b - a))
            return offset + amp * phase[..., None]

        return fn
    if name == "circle-wave":
        if m != 2:
            raise ScenarioError("circle-wave f0 needs m = 2")
        rho = float(params.get("radius", 0.5))
        periods = float(params.get("periods", 1.0))
        a, b = domain_extent[0]

        def fn(x):
            x = np.asarray(x, dtype=float)
            th = TWO_PI * periods * (x[..., 0] - a) / (b - a)
            return np.stack([rho * np.cos(th), rho * np.sin(th)], axis=-1)

        return fn
    raise ScenarioError(f"unknown f0 {name!r}")


def bc_from_json(d, dim, m, W):
    if d is None:
        return None
    kind = d.get("type")
    if kind in (None, "none"):
        return None
    if kind == "neumann-zero":
        return NeumannZero()
    if kind == "dirichlet":
        if "value" in d:
            value = np.asarray(d["value"], dtype=float).ravel()
            if value.shape[0] != m:
                raise ScenarioError(f"dirichlet value needs {m} components")
            return Dirichlet.constant(value)
        exprs = d.get("expr")
        if exprs is None:
            raise ScenarioError("dirichlet needs 'value' or 'expr'")
        if isinstance(exprs, str):
            exprs = [exprs]
        names = space_variables(dim)
        fns = [compile_expression(e, names) for e in exprs]

        def g(t, x):
            x = np.asarray(x, dtype=float)
            env = {"t": t}
            for j in range(dim):
                env[f"x{j + 1}"] = x[..., j]
            out = np.empty(x.shape[:-1] + (m,))
            for i in range(m):
                out[..., i] = fns[i](env)
            return out

        return Dirichlet(g=g)
    if kind == "oblique":
        name = d.get("name", "rotate-deviation")
        params = d.get("params", {})
        if name != "rotate-deviation":
            raise ScenarioError(f"unknown oblique builtin {name!r}")
        if m != 2:
            raise ScenarioError("rotate-deviation needs m = 2")
        angle = math.radians(float(params.get("angle_deg", 90.0)))
        scale = float(params.get("scale", 1.0))
        R = np.array(
            [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
        )

        def h(t, x, f):
            f = np.asarray(f, dtype=float)
            omega, dist = W.project_many(f)
            out = np.zeros_like(f)
            outside = dist > convex.MEMBERSHIP_TOL
            if np.any(outside):
                lam_hat = (f[outside] - omega[outside]) / dist[outside, None]
                out[outside] = scale * lam_hat @ R.T
            return out

        return Oblique(h=h)
    raise ScenarioError(f"unknown boundary condition type {kind!r}")


def metric_from_json(d):
    if d is None:
        return lambda x: np.ones_like(np.asarray(x, dtype=float))
    if "expr" in d:
        fn_e = compile_expression(d["expr"], {"x1"})

        def g(x):
            return fn_e({"x1": np.asarray(x, dtype=float)})

        return g
    name = d.get("name")
    params = d.get("params", {})
    if name == "constant":
        value = float(params.get("value", 1.0))

        def g(x):
            return np.full_like(np.asarray(x, dtype=float), value)

        return g
    if name == "gaussian-bump":
        amp = float(params.get("amplitude", 0.5))
        center = float(params.get("center", 0.0))
        width = float(params.get("width", 1.0))

        def g(x):
            x = np.asarray(x, dtype=float)
            return 1.0 + amp * np.exp(-((x - center) / width) ** 2)

        return g
    raise ScenarioError(f"unknown metric {name!r}")


def connection_from_json(d, m):
    if d is None:
        return bundle_mod.zero_connection(m)
    name = d.get("name")
    params = d.get("params", {})
    if name == "zero":
        return bundle_mod.zero_connection(m)
    if name == "constant-rotation":
        return bundle_mod.rotation_connection(float(params.get("rate", 1.0)), m=m)
    if name == "rotation-profile":
        expr = params.get("rate_expr")
        fn_e = compile_expression(expr, {"x1"})
        return bundle_mod.rotation_profile_connection(lambda x: fn_e({"x1": x}))
    raise ScenarioError(f"unknown connection {name!r}")


def load_scenario(source):
    """Build a Scenario or BundleScenario from a JSON file path or a dict."""
    if isinstance(source, (str,)) or hasattr(source, "read"):
        if hasattr(source, "read"):
            doc = json.load(source)
        else:
            with open(source) as fh:
                doc = json.load(fh)
    else:
        doc = source
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    mode = doc.get("mode", "bundle" if ("metric" in doc or "connection" in doc) else "flat")

    try:
        W = convex_set_from_json(doc["set"])
        m = W.dim
        dom = doc["domain"]
        T = float(doc["T"])
        dt = doc.get("dt", "auto")
        scheme = doc.get("scheme", "rk4")
        name = doc.get("name", "scenario")
        if mode == "flat":
            domain = Domain(
                dim=int(dom["dim"]),
                extent=tuple(tuple(ab) for ab in dom["extent"]),
                grid=tuple(dom["grid"]),
                periodic=bool(dom.get("periodic", False)),
            )
            phi = phi_from_json(doc["phi"], domain.dim, m)
            zeta = zeta_from_json(doc.get("zeta"), domain.dim)
            bc = bc_from_json(doc.get("bc"), domain.dim, m, W)
            f0 = f0_from_json(doc["f0"], domain.extent, domain.dim, m)
            return Scenario(
                domain=domain, W=W, phi=phi, zeta=zeta, bc=bc, f0=f0,
                T=T, dt=dt, scheme=scheme, name=name,
            )
        if mode == "bundle":
            if int(dom.get("dim", 1)) != 1:
                raise ScenarioError("bundle mode needs a 1-d base")
            (a, b), = (tuple(ab) for ab in dom["extent"])
            if abs(a) > 1e-12:
                raise ScenarioError("bundle base interval must start at 0")
            (n_cells,) = tuple(dom["grid"])
            geometry = bundle_mod.BaseGeometry(L=float(b), g=metric_from_json(doc.get("metric")), N=int(n_cells))
            connection = connection_from_json(doc.get("connection"), m)
            phi = phi_from_json(doc["phi"], 1, m)
            zeta = zeta_from_json(doc.get("zeta"), 1)
            bc = bc_from_json(doc.get("bc"), 1, m, W)
            if bc is None:
                raise ScenarioError("bundle mode needs a boundary condition")
            f0 = f0_from_json(doc["f0"], ((0.0, float(b)),), 1, m)
            return bundle_mod.BundleScenario(
                geometry=geometry, connection=connection, W=W, phi=phi, zeta=zeta,
                bc=bc, f0=f0, T=T, dt=dt, scheme=scheme, name=name,
            )
    except KeyError as e:
        raise ScenarioError(f"scenario misses field {e}") from e
    raise ScenarioError(f"unknown mode {mode!r}")


# -- output writers -----------------------------------------------------------


def write_trajectory_csv(path, result, grid):
    """Rows t,x1[,x2],f1..fm for every stored frame and grid node."""
    m = result.trajectory[0].values.shape[-1]
    dim = grid.dim
    header = ["t"] + [f"x{j + 1}" for j in range(dim)] + [f"f{i + 1}" for i in range(m)]
    X = grid.X.reshape(-1, dim)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for state in result.trajectory:
            vals = state.values.reshape(-1, m)
            for xrow, frow in zip(X, vals):
                cells = [repr(state.t)]
                cells += [repr(float(v)) for v in xrow]
                cells += [repr(float(v)) for v in frow]
                fh.write(",".join(cells) + "\n")


def write_diagnostics_csv(path, rows, dim):
    """Rows t,s,x*_argmax,on_boundary,hopf_value (empty when not recorded)."""
    header = ["t", "s"] + [f"x{j + 1}_argmax" for j in range(dim)] + ["on_boundary", "hopf_value"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            cells = [repr(r.t), repr(r.s)]
            cells += [repr(float(c)) for c in r.x_argmax]
            cells.append("1" if r.on_boundary else "0")
            cells.append("" if r.hopf_value is None else repr(r.hopf_value))
            fh.write(",".join(cells) + "\n")


def verdict_json_text(verdict, meta=None, seed=None, name=None):
    doc = {"verdict": verdict.to_dict()}
    if meta is not None:
        doc["meta"] = meta
    if seed is not None:
        doc["seed"] = seed
    if name is not None:
        doc["scenario"] = name
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
