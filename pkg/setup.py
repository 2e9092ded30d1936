"""Build script for the optional compiled kernels.

    pip install -e . --no-build-isolation

The package falls back to numpy kernels when the extension is missing.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # build without the extension
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "vecparisi._kernels",
                sources=["src/vecparisi/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
