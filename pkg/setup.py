"""Builds the optional compiled compositing/opacity kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so a failed build only costs speed.
"""
import numpy
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "splatfill._kernels._fastcore",
                sources=["src/splatfill/_kernels/_fastcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3, "boundscheck": False, "wraparound": False},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
