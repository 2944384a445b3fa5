"""Build script for the optional compiled patch-op kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time); building it just makes conv layers faster.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "maskedvae.kernels._patchops",
                ["src/maskedvae/kernels/_patchops.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
