import platform

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# hardware popcount; without it __builtin_popcount is a bit-twiddling routine
flags = ["-O3"]
if platform.machine().lower() in ("x86_64", "amd64"):
    flags.append("-mpopcnt")

extensions = [
    Extension(
        "binfer._kernels",
        ["src/binfer/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=flags,
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
