"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed, never functionality.
"""

import sys

from setuptools import setup


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    try:
        return cythonize(
            ["src/anchormdp/_kernels_c.pyx"],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        ), [numpy.get_include()]
    except Exception as exc:  # pragma: no cover - build-env specific
        print(f"anchormdp: skipping Cython extension ({exc})", file=sys.stderr)
        return []


ext = _extensions()
if ext:
    modules, include_dirs = ext
    for m in modules:
        m.include_dirs.extend(include_dirs)
    setup(ext_modules=modules)
else:  # pragma: no cover
    setup()
