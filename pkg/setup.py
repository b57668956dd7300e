"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here degrades to a pure-Python install.
"""
import os
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    npy_lib = os.path.join(os.path.dirname(numpy.__file__), "random", "lib")
    ext_modules = cythonize(
        [
            Extension(
                "castlelab._kernels._native",
                ["src/castlelab/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                library_dirs=[npy_lib],
                libraries=["npyrandom"],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"castlelab: building without compiled kernels ({exc})\n")

setup(ext_modules=ext_modules)
