"""Build the optional compiled transport kernel.

Without Cython or a C++ compiler the package still installs and runs on the
pure-Python kernel.
"""
from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension(
            "hydrosoc._segments_ext",
            ["src/hydrosoc/_segments_ext.pyx"],
            language="c++",
            extra_compile_args=["-O3"],
        )],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
