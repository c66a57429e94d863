"""Builds the optional Cython kernel extension.

The package works without it: rom._kernels falls back to the pure-numpy
implementation when the compiled module is absent.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import setup
from setuptools.extension import Extension

exts = [
    Extension(
        "rom._kernels._core",
        sources=["src/rom/_kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(exts, language_level="3"))
