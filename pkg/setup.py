import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "hardising._kernels",
        sources=["src/hardising/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": 3}))
