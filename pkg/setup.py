"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a pure-Python
backend is selected at import time); set SKILLBANDIT_NO_EXT=1 to skip
compilation on machines without a C++ toolchain.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SKILLBANDIT_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "skillbandit._kernels_c",
                    ["src/skillbandit/_kernels_c.pyx"],
                    language="c++",
                    extra_compile_args=["-O3", "-std=c++17"],
                )
            ],
            language_level="3",
        )

setup(ext_modules=ext_modules)
