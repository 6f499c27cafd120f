"""Build script: compiles the event-loop kernel extension when Cython and a C
compiler are available.  The package works without it (pure-Python kernel is
selected at import time), just much slower for large Monte Carlo runs.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CTJMDP_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "ctjmdp._pathsim",
                    ["src/ctjmdp/_pathsim.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
