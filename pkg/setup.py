import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("FEDSCORE_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "fedscore.fedgt._decode_ext",
                ["src/fedscore/fedgt/_decode_ext.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
