from setuptools import find_packages, setup

from prefect_judgeforge._version import __version__

with open("requirements.txt") as install_requires_file:
    install_requires = install_requires_file.read().strip().split("\n")

with open("requirements-dev.txt") as dev_requires_file:
    dev_requires = dev_requires_file.read().strip().split("\n")

with open("README.md") as readme_file:
    readme = readme_file.read()

setup(
    name="prefect-judgeforge",
    description=(
        "Prefect flows and tasks for building and meta-evaluating "
        "LLM-as-a-judge models."
    ),
    license="Apache License 2.0",
    author="judgeforge maintainers",
    author_email="judgeforge@example.com",
    keywords="prefect, llm, evaluation, llm-as-a-judge",
    url="https://github.com/judgeforge/prefect-judgeforge",
    long_description=readme,
    long_description_content_type="text/markdown",
    version=__version__,
    packages=find_packages(exclude=("tests", "docs")),
    package_data={
        "prefect_judgeforge": ["data/*.json", "templates/*/*.j2"],
    },
    python_requires=">=3.8",
    install_requires=install_requires,
    extras_require={"dev": dev_requires},
    entry_points={
        "prefect.collections": [
            "prefect_judgeforge = prefect_judgeforge",
        ],
        "console_scripts": [
            "judgeforge = prefect_judgeforge.cli:app",
        ],
    },
    classifiers=[
        "Natural Language :: English",
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
