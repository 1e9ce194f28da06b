import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SMCFILTER_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "smcfilter._kernels",
                    ["src/smcfilter/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no fast-math or FMA contraction: results must match the Python twin bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
