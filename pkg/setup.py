"""Build script: compiles the optional pair-distance extension.

The package works without the extension (a numpy fallback is selected at
import time), so the extension is marked optional and a failed compile
only costs speed.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "driftlens._kernels._pairdist",
                ["src/driftlens/_kernels/_pairdist.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
