from setuptools import setup

with open("README.md", "r", encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="pinchflow",
    version="0.1.0",
    description="Mean curvature flow of pinched hypersurfaces in the round sphere",
    long_description=long_description,
    long_description_content_type="text/markdown",
    install_requires=[
        "click>7",
        "attrs>20",
        "python-slugify>6.0.0",
        "numpy>1.22",
        "scipy>1.8",
    ],
    python_requires=">3.9.0",
    tests_require=["pytest>5.4"],
    packages=["pinchflow"],
    package_data={"pinchflow": ["py.typed"]},
    data_files=[("share/pinchflow/scenarios", [
        "scenarios/sphere_extinction.json",
        "scenarios/clifford_band.json",
        "scenarios/dumbbell_neckpinch.json",
        "scenarios/poincare_n4.json",
    ])],
    entry_points={"console_scripts": ["pinchflow=pinchflow.main:cli"]},
    license="MIT",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Development Status :: 3 - Alpha",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Programming Language :: Python :: 3",
        "Intended Audience :: Science/Research",
    ],
)
