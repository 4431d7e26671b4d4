"""Build script for the optional compiled kernels.

The package is fully functional without the extension; ablmta.kernels
falls back to the pure-Python implementation when the build is skipped
or fails.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "ablmta.kernels._speedups",
                ["src/ablmta/kernels/_speedups.pyx"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
