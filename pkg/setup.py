"""Builds the optional compiled render kernel.

If Cython or a C compiler is missing the package still installs and runs on the
numpy kernel.
"""

import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("POSEFUSION_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext_modules = cythonize(
            [
                Extension(
                    "posefusion._ckernel",
                    ["src/posefusion/_ckernel.pyx"],
                    extra_compile_args=["-O3", "-ffp-contract=off", *openmp],
                    extra_link_args=openmp,
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError as exc:
        print(f"posefusion: building without compiled kernel ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
