# coding: utf-8

from setuptools import setup, find_packages  # noqa: H301

NAME = "gprforge"
VERSION = "1.0.0"
# To install the library, run the following
#
# python setup.py install
#
# prerequisite: setuptools
# http://pypi.python.org/pypi/setuptools

REQUIRES = ["numpy >= 1.22", "scipy >= 1.8", "pyyaml", "pyparsing >= 3.0", "tqdm"]

setup(
    name=NAME,
    version=VERSION,
    description="GPR radargram simulation and buried-object hyperbola detection",
    author_email="",
    url="",
    keywords=["GPR", "FDTD", "radargram", "object detection"],
    install_requires=REQUIRES,
    extras_require={"test": ["pytest", "pytest-mock"]},
    packages=find_packages(exclude=["examples", "examples.*"]),
    package_data={"gprforge": ["config.yaml"]},
    include_package_data=True,
    entry_points={"console_scripts": ["gprforge = gprforge.cli:main"]},
    long_description=""
)
