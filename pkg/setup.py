"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed build is not fatal.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "extremis._kernels._core",
        sources=["src/extremis/_kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # -ffp-contract=off keeps results bit-comparable with the numpy
        # fallback by preventing fused multiply-add contraction.
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )

setup(ext_modules=ext_modules)
