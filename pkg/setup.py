#!/usr/bin/env python3

import pathlib
import setuptools

HERE = pathlib.Path(__file__).parent
README = (HERE / "README.md").read_text()

setuptools.setup(
    name="geat",
    version="0.1.0",
    description="Lab-of-origin attribution for genetically engineered DNA sequences",
    long_description=README,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=('tests',)),
    install_requires=[
            "numpy>=1.20",
            "pandas",
            "progress",
            "pytest",
            "hypothesis",
        ],
    scripts=[
            "tool/geat",
        ],
    python_requires=">=3.8"
)
