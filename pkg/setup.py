import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled time-stepping core is optional: without Cython the package
# installs pure-Python and the solvers fall back to the numpy loop.
ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "invariantflow._kernels",
                ["src/invariantflow/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
