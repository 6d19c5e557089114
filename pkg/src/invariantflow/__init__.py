"""Invariant convex sets for reaction-diffusion fields.

Convex projection machinery (boxes, balls, polytopes with Dykstra nearest
points, normal cones), boundary tangency certification of reaction terms,
explicit parabolic solvers in flat and covariant (1-d bundle) form, the Dini
derivative toolbox, and run diagnostics that locate maximal distance pairs
and evaluate the Hopf boundary functional.
"""

from ._backend import HAVE_COMPILED, backend_name
from .bundle import (
    BaseGeometry,
    BundleGrid,
    BundleScenario,
    Connection,
    covariant_laplacian,
    gauge_covariance_check,
    parallel_transport,
    rotation_connection,
    rotation_profile_connection,
    solve_bundle,
    zero_connection,
)
from .convex import (
    Ball,
    Box,
    ConvexSet,
    InvalidSet,
    NormalCone,
    NotOnSet,
    Polytope,
    Projection,
    contains,
    normal_cone,
    project,
    validate_supporting,
)
from .diagnostics import (
    InsideSet,
    InteriorPoint,
    InvarianceMonitor,
    InvarianceVerdict,
    MaximalDistancePair,
    hopf_functional,
    max_distance,
    monitor,
)
from .dini import (
    HorizonExceeded,
    LemmaPoint,
    PreconditionViolated,
    SampledFunction,
    dini_upper,
    find_lemma_point,
)
from .flat import (
    Dirichlet,
    Domain,
    DriftField,
    FieldState,
    FlatGrid,
    Instability,
    NeumannZero,
    Oblique,
    ObliqueViolation,
    RunResult,
    Scenario,
    ScenarioError,
    apply_boundary,
    constant_drift,
    solve,
    step,
    zero_drift,
)
from .scenario import load_scenario
from .tangency import (
    EvalFailure,
    ReactionTerm,
    TangencyReport,
    check_tangency,
    constant_reaction,
    estimate_lipschitz,
    expression_reaction,
    fhn_reaction,
    linear_reaction,
    logistic_reaction,
    tangency_margin_along_trajectory,
    zero_reaction,
)

__version__ = "0.1.0"
