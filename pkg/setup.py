#!/usr/bin/env python3
"""Setup script for Robot Tracking Bench."""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="robot-tracking-bench",
    version="1.0",
    description="Trajectory tracking benchmark for a differential-drive robot under wheel faults",
    long_description=long_description,
    long_description_content_type="text/markdown",

    packages=find_packages(where="src"),
    package_dir={"": "src"},
    include_package_data=True,
    package_data={
        "RobotTrackingBench": ["scenarios/*.yaml"],
    },

    install_requires=[
        "numpy",
        "scipy",
        "filterpy",
        "scikit-fuzzy",
        "pyyaml",
        "pandas",
    ],
    extras_require={
        "test": ["pytest"],
    },
    classifiers=[
    ],
    python_requires=">=3.8",
    entry_points={
        "console_scripts": [
            "robot-tracking-bench=RobotTrackingBench.cli:main",
        ],
    },
)
