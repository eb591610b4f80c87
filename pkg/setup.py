"""Build the optional compiled rasterizer core.

The package works without it (a numpy fallback is selected at import), so a
missing compiler or Cython only downgrades speed.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPLATFUSE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "splatfuse.kernels._native",
                    ["src/splatfuse/kernels/_native.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3", "boundscheck": False,
                                 "wraparound": False, "cdivision": True},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
