"""
Setup script for FrugalHop.
"""

from setuptools import setup, find_packages

setup(
    name="FrugalHop",
    version="0.1.0",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    package_data={"FrugalHop": ["data/*.jsonl", "data/*.json"]},
    python_requires=">=3.9",
    install_requires=[
        "pydantic",
        "pydantic-settings",
        "requests",
        "httpx",
        "numpy",
    ],
    entry_points={
        'console_scripts': [
            'frugalhop=FrugalHop.cli:main',
        ],
    },
)
