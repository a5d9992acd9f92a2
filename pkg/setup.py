"""Build script for the optional compiled kernels.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes the hot loops much faster.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # pure-python install still works
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "planarsr._core",
                ["src/planarsr/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
