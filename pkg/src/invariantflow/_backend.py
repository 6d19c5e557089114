"""Selection between the compiled stepping core and the numpy fallback.

The hot inner loops (explicit RK4 sweeps over the grid) live in the optional
Cython module ``_kernels``.  When the extension is not importable, or when a
scenario uses components that cannot be lowered to kernel op codes (arbitrary
Python callables, oblique boundary conditions, 2-d domains), the solvers run
the vectorized numpy loop instead.  Both paths implement the same stage
arithmetic; ``benchmarks/bench_backends.py`` compares their throughput.
"""

from dataclasses import dataclass

import numpy as np

try:
    from . import _kernels
except ImportError:  # pure-python install
    _kernels = None

HAVE_COMPILED = _kernels is not None

# op codes understood by the compiled kernels
PHI_ZERO = 0
PHI_LINEAR = 1      # params: row-major m x m matrix B, phi = B v
PHI_LOGISTIC = 2    # params: [rate], componentwise rate * v * (1 - v)
PHI_FHN = 3         # params: [a, b, eps, current], m == 2
PHI_CONSTANT = 4    # params: c (m,)

ZETA_ZERO = 0
ZETA_CONSTANT = 1   # params: one drift coefficient per axis

BC_DIRICHLET = 0    # params: boundary values (m,) per side, constant in time
BC_NEUMANN_ZERO = 1

SCHEME_RK4 = 0
SCHEME_EULER = 1

STATUS_OK = 0
STATUS_OVERFLOW = 1

OVERFLOW_GUARD = 1e12


@dataclass(frozen=True)
class KernelSpec:
    """Op code plus parameter vector for a component the compiled core understands."""

    code: int
    params: np.ndarray

    @staticmethod
    def make(code, params):
        return KernelSpec(code=code, params=np.asarray(params, dtype=float).ravel())


def backend_name(requested="auto"):
    """Resolve a backend request to 'compiled' or 'python'."""
    if requested == "auto":
        return "compiled" if HAVE_COMPILED else "python"
    if requested == "compiled" and not HAVE_COMPILED:
        raise RuntimeError(
            "compiled backend requested but invariantflow._kernels is not importable; "
            "reinstall with Cython available or use backend='python'"
        )
    if requested not in ("compiled", "python"):
        raise ValueError(f"unknown backend {requested!r}")
    return requested


def kernels():
    return _kernels
