"""Build script: compiles the optional Cython sampling kernels.

The package is fully functional without the extension (a vectorized numpy
fallback is selected at import time), so any build failure here downgrades
to a pure-Python install instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/ego3rt/kernels/_cykernels.pyx",
        language_level=3,
    )
    include_dirs = [np.get_include()]
except Exception as exc:  # pragma: no cover - environment without cython
    print(f"ego3rt: skipping compiled kernels ({exc}); numpy fallback will be used")
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
