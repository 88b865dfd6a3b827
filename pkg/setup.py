"""Build hook for the optional compiled kernel.

The package works without it; ``glassflow.kernels`` falls back to the
pure-Python loop when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("GLASSFLOW_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension(
            "glassflow._kernels",
            ["src/glassflow/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            # keep a*b-c unfused so results match the numpy fallback bit for bit
            extra_compile_args=["-O3", "-ffp-contract=off"],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={"language_level": "3"},
            quiet=True,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
