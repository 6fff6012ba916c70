"""Build script for the optional Cython kernel extension.

The extension is optional: when Cython or a C compiler is unavailable the
package installs without it and ``dcdgd._backend`` falls back to the pure
Python kernels.
"""
import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "dcdgd._kernels",
                ["src/dcdgd/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    if os.environ.get("DCDGD_REQUIRE_EXT"):
        raise


class OptionalBuildExt(build_ext):
    """Skip the extension instead of failing the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            if os.environ.get("DCDGD_REQUIRE_EXT"):
                raise
            print(f"warning: skipping dcdgd._kernels ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            if os.environ.get("DCDGD_REQUIRE_EXT"):
                raise
            print(f"warning: skipping {ext.name} ({exc})", file=sys.stderr)


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
