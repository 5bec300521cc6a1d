import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "su2kam.kernels._core",
        ["src/su2kam/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fcx-limited-range"] if os.name != "nt" else [],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
