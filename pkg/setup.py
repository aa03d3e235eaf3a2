"""Build script for the compiled kernel extension.

The extension is optional: if Cython or a C compiler is unavailable the
package still installs and falls back to the pure NumPy kernels.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("KERNELDIST_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        compile_args = ["-O3"]
        link_args = []
        if sys.platform.startswith("linux"):
            compile_args.append("-fopenmp")
            link_args.append("-fopenmp")
        ext = Extension(
            "kerneldist._ckernels",
            sources=["src/kerneldist/_ckernels.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=compile_args,
            extra_link_args=link_args,
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={"language_level": "3", "boundscheck": False,
                                 "wraparound": False, "cdivision": True},
        )
    except ImportError as exc:  # pragma: no cover
        print(f"kerneldist: building without compiled kernels ({exc})")

setup(ext_modules=ext_modules)
