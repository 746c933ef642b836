"""Build script for the optional compiled kernels.

The package is pure Python plus one Cython extension (submerge.kernels._core)
holding the grouping scan and segmented reductions. If Cython or a C compiler
is missing the build falls back to a pure install; the numpy kernel backend is
selected automatically at import time in that case.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class BuildFailed(Exception):
    pass


class optional_build_ext(build_ext):
    """build_ext that downgrades compiler failures to a warning."""

    def run(self):
        try:
            build_ext.run(self)
        except Exception as exc:  # missing compiler, broken toolchain, ...
            raise BuildFailed(str(exc)) from exc

    def build_extension(self, ext):
        try:
            build_ext.build_extension(self, ext)
        except Exception as exc:
            raise BuildFailed(str(exc)) from exc


def _extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "submerge.kernels._core",
        sources=[os.path.join("src", "submerge", "kernels", "_core.pyx")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
        },
    )


def _run(with_ext):
    setup(
        ext_modules=_extensions() if with_ext else [],
        cmdclass={"build_ext": optional_build_ext} if with_ext else {},
    )


try:
    _run(with_ext=True)
except BuildFailed:
    print("*** compiled kernels failed to build; installing pure-Python package")
    _run(with_ext=False)
