"""Optional compiled-kernel build.

The package is fully functional without it (numpy fallback selected at
import). To enable the fast path:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "dualproto._kernels",
        ["src/dualproto/_kernels.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        extensions, compiler_directives={"language_level": "3"}
    )
    if cythonize
    else [],
)
