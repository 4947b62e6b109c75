import os
import re
import sys
from setuptools import setup, find_packages


PYTHON_REQUIRES = ">=3.8"

SETUP_DIR = os.path.dirname(os.path.realpath(__file__))
VERSION_PATH = os.path.join(SETUP_DIR, "flonav", "version.py")
README_PATH = os.path.join(SETUP_DIR, "README.md")


def flonav_version() -> str:
    with open(VERSION_PATH, "r") as f:
        for line in f:
            m = re.match(r'\s*__version__\s*=\s*"([^"]+)"\s*$', line)
            if m:
                return m[1]
    sys.stderr.write(f"Error: __version__ not found in {VERSION_PATH}\n\n")
    sys.exit(1)


CONSOLE_SCRIPTS = [
    "flonav = flonav.__main__:main",
]

with open(README_PATH, "r") as readme:
    README = readme.read()

setup(
    name="flonav",
    description="Floor-plan-conditioned diffusion navigation policies, trained and benchmarked in a kinematic simulator.",
    long_description=README,
    long_description_content_type="text/markdown",
    version=flonav_version(),
    packages=find_packages(exclude=("tests",)),
    python_requires=PYTHON_REQUIRES,
    install_requires=[
        "networkx>=2.4",
        "numpy>=1.21",
        "Pillow>=9.1.0",  # We need at least this version for `Image.Resampling`
        "scipy>=1.7",
        "torch>=1.13",
        "tqdm>=4.59.0",
    ],
    extras_require={
        "dev": [
            "black>=22.3.0",
            "mypy",
            "pytest",
            "flake8",
            "Sphinx",
            "sphinx_rtd_theme~=0.4.3",
        ]
    },
    entry_points={"console_scripts": CONSOLE_SCRIPTS},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3 :: Only",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
