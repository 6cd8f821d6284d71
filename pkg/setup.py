"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a missing compiler or Cython only costs speed, not
functionality.  Set PRICESIM_SKIP_EXT=1 to skip the build explicitly.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("PRICESIM_SKIP_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension(
            "pricesim.kernels._core",
            ["src/pricesim/kernels/_core.pyx"],
            extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        print("Cython not available; building without the compiled kernels.")

setup(ext_modules=ext_modules)
