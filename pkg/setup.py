"""Build script.

The compiled kernel extension is optional: if Cython (and a C compiler) are
available the hot loops in fgsim.kernels._core_cy are built, otherwise the
package installs pure-Python and falls back to the numpy kernels at import.
"""
from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("fgsim.kernels._core_cy", ["src/fgsim/kernels/_core_cy.pyx"])],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
