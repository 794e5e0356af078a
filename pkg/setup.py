import os

import numpy
from setuptools import Extension, setup

# The compiled kernel is optional: set SCENKIT_NO_EXT=1 to skip it and
# run on the pure-Python fallback.
ext_modules = []
if not os.environ.get("SCENKIT_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "scenkit.sim._kernel",
                    ["src/scenkit/sim/_kernel.pyx"],
                    include_dirs=[numpy.get_include()],
                    # no FMA contraction: keeps results bit-identical to the Python path
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
