"""Numeric kernels with a compiled fast path.

The Cython extension ``_core`` is built at install time and picked up
here when importable; ``pure`` is the NumPy fallback with identical
semantics. Set ``BIOSIFT_PURE_KERNELS=1`` to force the fallback (used by
the parity tests and the benchmark).
"""

import os

from . import pure

if os.environ.get("BIOSIFT_PURE_KERNELS"):
    _impl = pure
    IMPLEMENTATION = "pure"
else:
    try:
        from . import _core as _impl

        IMPLEMENTATION = "compiled"
    except ImportError:
        _impl = pure
        IMPLEMENTATION = "pure"

poisson_binomial_pmf = _impl.poisson_binomial_pmf
quad_intersection_area = _impl.quad_intersection_area
fused_scores_batch = _impl.fused_scores_batch

__all__ = [
    "IMPLEMENTATION",
    "poisson_binomial_pmf",
    "quad_intersection_area",
    "fused_scores_batch",
    "pure",
]
