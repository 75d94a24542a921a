import re

from setuptools import find_packages, setup


with open("mcdup/__init__.py") as reader:
    version = re.search(r'__version__ = "(.+)"', reader.read()).group(1)

setup(
    name="mcdup",
    version=version,
    author="mcdup developers",
    description="A Python library for multi-connectivity packet duplication experiments.",
    long_description=(
        "A Python library for emulating and measuring packet duplication over several network links, "
        "and for judging which use cases the resulting latency and throughput can support."
    ),
    packages=find_packages(),
    package_data={"mcdup": ["data/*.yml", "data/*.csv", "data/profiles/*.csv"]},
    classifiers=[
        "Development Status :: 4 - Beta",
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: GNU GENERAL PUBLIC LICENSE",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "xarray",
        "dask",
        "distributed",
        "pyyaml",
        "matplotlib",
        "gitpython",
        "cmdline_provenance",
        "simpy",
    ],
    entry_points={
        "console_scripts": [
            "mcdup = mcdup.runner:_main",
            "rsrp_coverage = mcdup.coverage:_main",
        ]
    },
)
