#!/usr/bin/env python

"""The setup script."""

from setuptools import find_packages, setup

with open("README.md", encoding="utf-8") as readme_file:
    readme = readme_file.read()

with open("HISTORY.rst", encoding="utf-8") as history_file:
    history = history_file.read()

requirements = [
    "Click>=8.0",
    "numpy>=1.22",
    "scipy>=1.8",
    "networkx>=2.8",
    "torch>=1.13",
    "pydantic>=2.0",
]

test_requirements = [
    "pytest>=6",
]

setup(
    author="Chris Winikka",
    author_email="cwinikka@gmail.com",
    python_requires=">=3.9",
    classifiers=[
        "Development Status :: 2 - Pre-Alpha",
        "Intended Audience :: Science/Research",
        "Natural Language :: English",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    description=(
        "Plans topological guiding paths through a cluttered world and "
        "trains a quadrotor racing policy to fly them in minimum time."
    ),
    entry_points={
        "console_scripts": [
            "quadracer=quadracer.cli:main",
        ],
    },
    install_requires=requirements,
    long_description=readme + "\n\n" + history,
    long_description_content_type="text/markdown",
    include_package_data=True,
    keywords="quadracer",
    name="quadracer",
    packages=find_packages(include=["quadracer", "quadracer.*"]),
    test_suite="tests",
    tests_require=test_requirements,
    url="https://github.com/hundredvisionsguy/quadracer",
    version="0.1.0",
    zip_safe=False,
)
