"""Hot kernels: compiled extension when built, NumPy fallback otherwise.

Set ``PERFHOM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import pykernels

BACKEND = "python"
_impl = pykernels

if os.environ.get("PERFHOM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = pykernels

locate_points = _impl.locate_points
p1_elasticity = _impl.p1_elasticity

__all__ = ["BACKEND", "locate_points", "p1_elasticity", "pykernels"]
