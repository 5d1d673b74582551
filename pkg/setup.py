"""Build script: compiles the optional fast kernel extension when Cython is available.

The package works without the extension (a NumPy fallback is selected at
import time), so the extension is marked optional and any build failure is
non-fatal.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SCMM_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "scmm.backend._core",
                    ["src/scmm/backend/_core.pyx"],
                    extra_compile_args=["-O3", "-march=native"],
                    optional=True,
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
