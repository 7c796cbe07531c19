"""Build script for the optional compiled kernel extension.

The package is pure Python plus one Cython module with the per-pixel
dynamic-filtering kernels (the only inner loop numpy cannot express as a
single BLAS call).  If Cython or a C compiler is unavailable the build
falls back to the numpy implementation selected at import time in
``cassikit.kernels``.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/cassikit/kernels/_dynfilter.pyx"],
        compiler_directives={"language_level": "3"},
    )
    include_dirs = [numpy.get_include()]
    for ext in ext_modules:
        ext.include_dirs = include_dirs
except ImportError as exc:  # pragma: no cover - build environment dependent
    warnings.warn(f"building without compiled kernels: {exc}")

setup(ext_modules=ext_modules)
