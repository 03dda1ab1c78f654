#!/usr/bin/env python

from satsynth import __version__

from os import path

from setuptools import setup

BASE_DIR = path.abspath(path.dirname(__file__))
with open(path.join(BASE_DIR, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name="satsynth",
    version=__version__,
    description="Mask-conditional satellite image synthesis for segmentation training data",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="LGPL v2.1",
    packages=["satsynth"],
    platforms="UNIX/Linux",
    python_requires=">=3.8",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: GIS",
        "Topic :: Scientific/Engineering :: Image Processing",
    ],
    install_requires=[
        "inflection",
        "numpy>=1.20",
        "scipy>=1.7",
        "torch>=1.12",
        "PyYAML>=5.4",
        "matplotlib>=3.3",
    ],
    extras_require={
        "inception": ["torchvision>=0.13"],
    },
    entry_points={
        "console_scripts": ["satsynth=satsynth.cli:main"],
    },
)
