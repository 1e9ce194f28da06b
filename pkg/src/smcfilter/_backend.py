"""Select the compiled kernels when available, else the pure-Python twin."""

import os

if os.environ.get("SMCFILTER_PURE_PYTHON"):
    from . import _fallback as kernels

    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _fallback as kernels

        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
