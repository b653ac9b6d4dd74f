"""Build script for the optional compiled MinHash kernel.

The package is pure Python except for babelkit._minhash, a small Cython
extension covering the signature inner loop. If the extension is missing
at runtime the numpy fallback in dedup_graph is used instead, so a failed
ext build still yields a working install.
"""
from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "babelkit._minhash",
        ["src/babelkit/_minhash.pyx"],
    )
]

setup(ext_modules=cythonize(extensions, language_level="3"))
