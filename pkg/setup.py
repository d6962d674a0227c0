import platform

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    ext_modules = []
else:
    args = ["-O3"]
    if platform.machine() in ("x86_64", "AMD64"):
        args.append("-mpopcnt")
    ext_modules = cythonize(
        [Extension(
            "ifqnet.kernels._popcount",
            ["src/ifqnet/kernels/_popcount.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=args,
        )],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
