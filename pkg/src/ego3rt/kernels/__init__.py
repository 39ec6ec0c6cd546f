"""Hot sampling kernels with a compiled core and a numpy fallback.

The compiled Cython extension is preferred when importable; set
``EGO3RT_KERNELS=py`` or ``EGO3RT_KERNELS=cy`` to force a backend.
Non-float64 inputs always route to the numpy implementation.
"""

import os

import numpy as np

from . import numpy_impl

_choice = os.environ.get("EGO3RT_KERNELS", "auto").lower()
_compiled = None
if _choice in ("auto", "cy"):
    try:
        from . import _cykernels as _compiled
    except ImportError:
        if _choice == "cy":
            raise ImportError(
                "EGO3RT_KERNELS=cy but the compiled kernels are not built; "
                "reinstall the package or use EGO3RT_KERNELS=py"
            )
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def _is_f64(*arrays):
    return all(a.dtype == np.float64 and a.flags["C_CONTIGUOUS"] for a in arrays)


def sample_bilinear_fwd(fmap, rows, cols, wrap_cols=False):
    if _compiled is not None and _is_f64(fmap, rows, cols):
        return _compiled.sample_bilinear_fwd(fmap, rows, cols, wrap_cols)
    return numpy_impl.sample_bilinear_fwd(fmap, rows, cols, wrap_cols)


def sample_bilinear_bwd(fmap, rows, cols, d_out, wrap_cols=False):
    if _compiled is not None and _is_f64(fmap, rows, cols, d_out):
        return _compiled.sample_bilinear_bwd(fmap, rows, cols, d_out, wrap_cols)
    return numpy_impl.sample_bilinear_bwd(fmap, rows, cols, d_out, wrap_cols)


def depthwise3x3_fwd(x, kernel, wrap_cols=False):
    if _compiled is not None and _is_f64(x, kernel):
        return _compiled.depthwise3x3_fwd(x, kernel, wrap_cols)
    return numpy_impl.depthwise3x3_fwd(x, kernel, wrap_cols)


def depthwise3x3_bwd(x, kernel, d_out, wrap_cols=False):
    if _compiled is not None and _is_f64(x, kernel, d_out):
        return _compiled.depthwise3x3_bwd(x, kernel, d_out, wrap_cols)
    return numpy_impl.depthwise3x3_bwd(x, kernel, d_out, wrap_cols)
