from setuptools import setup, find_packages
from pathlib import Path

# Read version from package without importing (avoids dependency issues)
version_file = Path(__file__).parent / "trajsim" / "__init__.py"
__version__ = None
with open(version_file) as f:
    for line in f:
        if line.startswith("__version__"):
            __version__ = line.split("=")[1].strip().strip('"').strip("'")
            break
if __version__ is None:
    __version__ = "0.0.0"

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="trajsim",
    version=__version__,
    description="Learned trajectory similarity: heuristic ground truth, bridge pretraining and ranking-loss fine-tuning",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["trajsim", "trajsim.*"]),
    package_data={"trajsim": ["config.example.yml"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: GIS",
    ],
    python_requires=">=3.9",
    install_requires=[
        "click>=8.0.0",
        "rich>=10.0.0",
        "pyyaml>=5.4.1",
        "python-dotenv>=0.19.0",
        "numpy>=1.22",
        "numba>=0.56",  # GIL-free distance kernels
    ],
    extras_require={
        "dev": ["pytest>=7.0.0", "ruff>=0.1.0"],
    },
    entry_points={
        "console_scripts": [
            "trajsim=trajsim.cli:main",
        ],
    },
    license="MIT",
)
