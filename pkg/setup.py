"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so the build is marked optional and any compiler
failure degrades to the pure-Python install.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "hava._kernels_c",
                ["src/hava/_kernels_c.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # native ISA matters here: the row-stable matmul needs
                # FMA/AVX to stay within a few x of BLAS. The extension
                # is optional, so exotic hosts just fall back to numpy.
                extra_compile_args=["-O3", "-march=native"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
