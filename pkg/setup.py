import os

import numpy as np
from setuptools import Extension, setup


def extensions():
    if os.environ.get("IQSIM_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        # The pure-Python kernels are used when the extension is absent.
        return []
    ext = Extension(
        "iqsim._core",
        sources=["src/iqsim/_core.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
