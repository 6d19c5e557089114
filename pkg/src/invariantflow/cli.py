"""Command line front end: run scenarios, certify tangency, and packaged demos.

Exit codes follow the experiment-scripting contract:
    run:            0 invariant, 4 exited (a finding, not an error), 2 failure
    check-tangency: 0 certified, 3 refuted, 2 error
    demo:           as the underlying run/check; unknown demo name is 2

The environment variable INVARIANT_FLOW_THREADS caps internal parallelism
(currently the sample evaluation in check-tangency).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from importlib import resources

import numpy as np

from . import __version__, _backend, bundle, convex, dini, flat, scenario as scen
from .tangency import EvalFailure, check_tangency

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_REFUTED = 3
EXIT_EXITED = 4

DEMO_NAMES = ("logistic-neumann", "dirichlet-exit", "bundle-rotation", "dini-lemma", "fhn-rectangle")


def _threads():
    raw = os.environ.get("INVARIANT_FLOW_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _packaged_scenario(name):
    ref = resources.files("invariantflow") / "scenarios" / f"{name}.json"
    with resources.as_file(ref) as path:
        return scen.load_scenario(str(path))


def _run_result(sc, args):
    if isinstance(sc, flat.Scenario):
        return flat.solve(
            sc,
            backend=args.backend,
            exit_threshold=args.exit_threshold,
            trajectory_stride=args.cadence,
        ), flat.FlatGrid(sc.domain)
    result = bundle.solve_bundle(
        sc,
        backend=args.backend,
        exit_threshold=args.exit_threshold,
        trajectory_stride=args.cadence,
    )
    return result, bundle.BundleGrid(sc.geometry, sc.connection)


def _write_outputs(out_dir, result, grid, seed, name):
    os.makedirs(out_dir, exist_ok=True)
    scen.write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), result, grid)
    scen.write_diagnostics_csv(os.path.join(out_dir, "diagnostics.csv"), result.rows, grid.dim)
    text = scen.verdict_json_text(result.verdict, meta=result.meta, seed=seed, name=name)
    with open(os.path.join(out_dir, "verdict.json"), "w") as fh:
        fh.write(text)


def _verdict_exit_code(verdict):
    if verdict.failed:
        return EXIT_ERROR
    return EXIT_EXITED if verdict.status == "exited" else EXIT_OK


def cmd_run(args):
    try:
        sc = scen.load_scenario(args.scenario)
    except (OSError, json.JSONDecodeError, flat.ScenarioError, convex.InvalidSet) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    if args.mode is not None:
        actual = "flat" if isinstance(sc, flat.Scenario) else "bundle"
        if actual != args.mode:
            print(f"error: scenario is {actual} mode, --mode {args.mode} given", file=sys.stderr)
            return EXIT_ERROR
    try:
        result, grid = _run_result(sc, args)
    except (flat.ScenarioError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    if args.out:
        _write_outputs(args.out, result, grid, args.seed, sc.name)
    v = result.verdict
    print(
        f"{sc.name}: {v.status} (worst dist_W {v.worst_dist:.3e}, threshold "
        f"{v.exit_threshold:.3e}, backend {result.meta['backend']})"
    )
    if v.failed:
        print(f"run failed: {v.failure}", file=sys.stderr)
    return _verdict_exit_code(v)


def cmd_check_tangency(args):
    try:
        sc = scen.load_scenario(args.scenario)
        if isinstance(sc, flat.Scenario):
            grid = flat.FlatGrid(sc.domain)
            axes = [ax[:: max(1, len(ax) // 8)] for ax in grid.axes]
            if grid.dim == 1:
                x_samples = [np.array([x]) for x in axes[0]]
            else:
                x_samples = [np.array([x, y]) for x in axes[0] for y in axes[1]]
        else:
            nodes = sc.geometry.nodes
            x_samples = [np.array([x]) for x in nodes[:: max(1, len(nodes) // 8)]]
        t_samples = np.linspace(0.0, sc.T, 9)
        rng = np.random.default_rng(args.seed)
        report = check_tangency(
            sc.phi,
            sc.W,
            t_samples=t_samples,
            x_samples=x_samples,
            boundary_density=args.density,
            margin_tol=args.margin_tol,
            rng=rng,
            threads=_threads(),
        )
    except (OSError, json.JSONDecodeError, flat.ScenarioError, convex.InvalidSet, EvalFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK if report.certified else EXIT_REFUTED


def _demo_logistic_neumann(args):
    sc = _packaged_scenario("logistic-neumann")
    result, grid = _run_result(sc, args)
    if args.out:
        _write_outputs(args.out, result, grid, args.seed, sc.name)
    v = result.verdict
    print(
        "Scalar logistic reaction-diffusion on an interval with zero-flux (Neumann)\n"
        "boundaries. The reaction v(1-v) vanishes on the faces of W = [0, 1] and\n"
        "points inward elsewhere, and the boundary condition kills the normal\n"
        "derivative, so the invariant-set maximum principle under Neumann data\n"
        f"predicts the field never leaves W. Observed: worst dist_W = {v.worst_dist:.3e}\n"
        f"over the whole run (threshold {v.exit_threshold:.3e}); verdict: {v.status}."
    )
    return _verdict_exit_code(v)


def _demo_dirichlet_exit(args):
    sc = _packaged_scenario("dirichlet-exit")
    result, grid = _run_result(sc, args)
    if args.out:
        _write_outputs(args.out, result, grid, args.seed, sc.name)
    v = result.verdict
    pos = [(p, h) for p, h in v.hopf_records if h is not None and h > 0]
    lines = [
        "Pure diffusion with boundary values pinned at 2, outside W = [-1, 1]: the",
        "boundary data drag the field out of W. The boundary-point principle then",
        "guarantees a maximal distance pair on the boundary where the outward normal",
        "derivative has positive inner product with the deviation vector.",
        f"Observed: verdict {v.status}, first exit at t = {v.first_exit_time}.",
    ]
    if pos:
        p, h = pos[0]
        lines.append(
            f"Boundary maximal pair at t = {p.t:.4g}, x = {p.x[0]:.4g}: "
            f"<lambda(f), d/dnu f> = {h:.4g} > 0."
        )
    else:
        lines.append("No positive boundary Hopf value was recorded (unexpected).")
    print("\n".join(lines))
    return _verdict_exit_code(v)


def _demo_bundle_rotation(args):
    sc = _packaged_scenario("bundle-rotation")
    L = sc.geometry.L
    k = 2.0 * math.pi / L

    def psi(x):
        return 0.05 * np.sin(k * np.asarray(x, dtype=float))

    def dpsi(x):
        return 0.05 * k * np.cos(k * np.asarray(x, dtype=float))

    check = bundle.gauge_covariance_check(sc, psi, dpsi, backend=args.backend)
    print(
        "Covariant heat flow with a constant-rotation connection, repeated in a\n"
        "rotated trivialization: the connection transforms as A -> A - psi' J and\n"
        "the section as f -> R(psi) f. A discretization that realizes connection\n"
        "geometry (not coordinates) must reproduce the rotated trajectory.\n"
        f"Observed max mismatch |f_gauge(T) - R f(T)| = {check['mismatch']:.3e} "
        f"(tolerance 1e-6); norms stay equal under transport since A is skew."
    )
    return EXIT_OK if check["mismatch"] <= 1e-6 else EXIT_ERROR


def _demo_dini_lemma(args):
    theta = dini.SampledFunction(eval=lambda t: np.asarray(t, dtype=float) ** 2, T=1.0)
    res = dini.find_lemma_point(theta, C=1.0)
    print(
        "For theta(t) = t^2 (nonnegative, continuous, theta(0) = 0, not identically\n"
        "zero) and C = 1, a point t_C with upper Dini derivative strictly above\n"
        "C * theta(t_C) and theta(t_C) > 0 is guaranteed to exist. The grid scan\n"
        f"found t_C = {res.t:.6g} with estimated derivative {res.dini_estimate:.6g} "
        f"> {1.0 * res.theta_value:.6g} = C * theta(t_C)."
    )
    return EXIT_OK if res.found else EXIT_ERROR


def _demo_fhn_rectangle(args):
    sc = _packaged_scenario("fhn-rectangle")
    report = check_tangency(
        sc.phi,
        sc.W,
        t_samples=[0.0],
        x_samples=[None],
        rng=np.random.default_rng(args.seed),
    )
    result, grid = _run_result(sc, args)
    if args.out:
        _write_outputs(args.out, result, grid, args.seed, sc.name)
    v = result.verdict
    print(
        "FitzHugh-Nagumo kinetics admit an invariant rectangle found by bounding the\n"
        "nullclines: on every face of the box the vector field points weakly inward.\n"
        f"Sampled worst face margin: {report.worst_margin:.4g} (certified: {report.certified}).\n"
        "With zero-flux boundaries and initial data inside the rectangle, the\n"
        f"reaction-diffusion field stays inside: worst dist_W = {v.worst_dist:.3e}; "
        f"verdict: {v.status}."
    )
    if not report.certified:
        return EXIT_REFUTED
    return _verdict_exit_code(v)


_DEMOS = {
    "logistic-neumann": _demo_logistic_neumann,
    "dirichlet-exit": _demo_dirichlet_exit,
    "bundle-rotation": _demo_bundle_rotation,
    "dini-lemma": _demo_dini_lemma,
    "fhn-rectangle": _demo_fhn_rectangle,
}


def cmd_demo(args):
    fn = _DEMOS.get(args.name)
    if fn is None:
        print(f"error: unknown demo {args.name!r}; choose from {', '.join(DEMO_NAMES)}", file=sys.stderr)
        return EXIT_ERROR
    return fn(args)


def build_parser():
    p = argparse.ArgumentParser(
        prog="invariantflow",
        description="Invariant convex sets for reaction-diffusion fields: runs, "
        "tangency certification, and Hopf boundary diagnostics.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="integrate a scenario and write outputs")
    run_p.add_argument("--scenario", required=True, help="scenario JSON file")
    run_p.add_argument("--out", default=None, help="output directory for CSV/JSON")
    run_p.add_argument("--mode", choices=["flat", "bundle"], default=None)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--cadence", type=int, default=None,
                       help="diagnostic samples per stored trajectory frame")
    run_p.add_argument("--exit-threshold", type=float, default=None)
    run_p.add_argument("--backend", choices=["auto", "compiled", "python"], default="auto")
    run_p.set_defaults(fn=cmd_run)

    ct = sub.add_parser("check-tangency", help="certify or refute boundary tangency of phi")
    ct.add_argument("--scenario", required=True)
    ct.add_argument("--seed", type=int, default=0)
    ct.add_argument("--density", type=int, default=None, help="boundary sample density")
    ct.add_argument("--margin-tol", type=float, default=1e-9)
    ct.set_defaults(fn=cmd_check_tangency)

    demo = sub.add_parser("demo", help="run a packaged demonstration")
    demo.add_argument("name", help=", ".join(DEMO_NAMES))
    demo.add_argument("--out", default=None)
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--backend", choices=["auto", "compiled", "python"], default="auto")
    demo.add_argument("--cadence", type=int, default=None)
    demo.add_argument("--exit-threshold", type=float, default=None)
    demo.set_defaults(fn=cmd_demo)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not _backend.HAVE_COMPILED and getattr(args, "backend", "auto") == "auto":
        print("note: compiled kernels unavailable, using the numpy fallback", file=sys.stderr)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
