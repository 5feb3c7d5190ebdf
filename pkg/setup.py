import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

# Compiled time-stepping kernels for the recurrent encoders. The package
# falls back to the numpy implementation if this extension is unavailable.
ext_modules = [
    Extension(
        "csipred.kernels._core",
        ["src/csipred/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level="3"))
