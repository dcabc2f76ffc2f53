"""Build script for the optional compiled kernels.

The package works without the extension (a pure-Python implementation of
every kernel ships alongside it), so a failed compile only costs speed.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LOOPSOUP_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "loopsoup._kernels",
                    ["src/loopsoup/_kernels.pyx"],
                    language="c++",
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
