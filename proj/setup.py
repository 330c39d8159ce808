from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

ext = Pybind11Extension(
    "d2aunet._core",
    sources=[
        "src/bindings.cpp",
        "src/image.cpp",
        "src/data.cpp",
        "src/config.cpp",
        "src/checkpoint.cpp",
        "src/trainer.cpp",
        "src/selftest.cpp",
    ],
    include_dirs=["include"],
    libraries=["png"],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
