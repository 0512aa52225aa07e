"""Module to package the Gaussian reconstruction workbench."""
from setuptools import find_namespace_packages, setup

setup(
    name="gs_workbench",
    version="0.1.0",
    packages=find_namespace_packages(include=["app*"]),
    install_requires=[
        "pydantic",
        "pydantic-settings",
        "python-dotenv",
        "faiss-cpu",
        "torch",
        "numpy",
        "scipy",
        "Pillow",
        "plyfile",
    ],
    entry_points={"console_scripts": ["gs-workbench=app.main:main"]},
)
