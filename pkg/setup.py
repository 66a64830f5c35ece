import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

# -ffp-contract=off: the numpy fallback must produce bit-identical results,
# so the compiler must not fuse a*b+c into FMA.
ext = Extension(
    "distillforge.kernels._core",
    ["src/distillforge/kernels/_core.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3", "-ffp-contract=off"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level="3"))
