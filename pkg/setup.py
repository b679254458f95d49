import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "kgpl.metrics._surface_cy",
                ["src/kgpl/metrics/_surface_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level="3",
    )
except ImportError:
    # No Cython at build time: the package falls back to the numpy
    # surface-distance backend at import.
    ext_modules = []

setup(ext_modules=ext_modules)
