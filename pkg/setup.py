"""Build script for the optional compiled hashing kernel.

The package works without the extension (a pure-Python twin is selected at
import time), so a failed build is downgraded to a warning rather than a
hard error.
"""

import warnings

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "beamanneal.kernels._nhash",
                ["src/beamanneal/kernels/_nhash.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    warnings.warn(f"compiled kernel disabled: {exc}")
    ext_modules = []

setup(ext_modules=ext_modules)
