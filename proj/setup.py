"""Build script for the selftune extension module.

The C++ core is compiled straight into the pybind11 module so that
`pip install -e . --no-build-isolation` works with nothing but setuptools
and pybind11 on the machine.  The CMake build produces the same module for
the C++ test suite; this script exists so the Python package can be built
without CMake.
"""

import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

CORE_SOURCES = sorted(
    path for path in glob.glob("src/*.cpp") if not path.endswith("selftune_main.cpp")
)

ext_modules = [
    Pybind11Extension(
        "selftune._core",
        CORE_SOURCES,
        include_dirs=["include", "/usr/include/eigen3"],
        cxx_std=20,
        extra_compile_args=["-O2"],
    )
]

setup(ext_modules=ext_modules, cmdclass={"build_ext": build_ext})
