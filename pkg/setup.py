# The compiled core is optional: without a Rust toolchain (or without
# setuptools-rust) the package installs with the pure-Python kernel only.
from setuptools import setup

try:
    from setuptools_rust import Binding, RustExtension
except ImportError:
    extensions = []
else:
    extensions = [RustExtension("pfmc._core", path="rust/Cargo.toml", binding=Binding.PyO3,
                                optional=True, debug=False)]

setup(rust_extensions=extensions)
