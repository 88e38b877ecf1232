import os

from setuptools import setup
from setuptools.extension import Extension

if os.environ.get("BIOSIFT_SKIP_EXT"):
    # pure-Python install; the package falls back to the NumPy kernels
    setup()
else:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "biosift._kernels._core",
        ["src/biosift/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    setup(ext_modules=cythonize([ext], language_level="3"))
