import os

from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the pure
# Python implementations in vdkit._kernels_py when the extension is absent.
# Set VDKIT_PURE_PYTHON=1 to skip compilation entirely.
ext_modules = []
if os.environ.get("VDKIT_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "vdkit._kernels",
                    ["src/vdkit/_kernels.pyx"],
                    # -O2 only. -ffast-math would reorder float ops and break
                    # the bit-for-bit parity contract with the python backend.
                    extra_compile_args=["-O2"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
