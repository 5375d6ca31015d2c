import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # no Cython: install the pure-Python package, kernels fall back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("pdeflow._kernels", ["src/pdeflow/_kernels.pyx"], include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
