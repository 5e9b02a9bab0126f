"""Build script for the optional compiled kernel extension.

Set MODCASCADE_SKIP_EXT=1 to install pure-Python only; the package
falls back to the numpy kernels at import time when the extension is
missing.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MODCASCADE_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "modcascade._kernels._ckernels",
                    ["src/modcascade/_kernels/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    # contraction off: compiled results must be bit-identical
                    # to the numpy fallback
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
