from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="overlap-registration",
    version="0.1.0",
    author="IntelliAgent",
    author_email="contact@intelliagent.com.au",
    description="Point cloud registration with expected overlap estimation: ICP/GMM registrars, field-of-view weighting, view simulation and benchmark CLI",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/ciaranq/overlap-registration",
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.9",
        "python-dotenv>=1.0.0",
        "Pillow>=10.0.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "overlap-reg=overlap_registration.cli:main",
        ],
    },
)
