import re
from setuptools import setup

__version__ = re.search(r'__version__ = "([^"]+)"', open("cadgis/__init__.py").read()).group(1)

setup(
    name="cadgis-python",
    version=__version__,
    description="CAD (ASCII DXF) to GIS conversion pipeline: clean, convert, georeference and validate utility drawings.",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    install_requires=[
        "numpy==1.26.4",
        "scipy==1.11.4",
        "shapely==2.0.2",
        "pydantic==2.5.2",
        "ezdxf==1.1.3",
        "SQLAlchemy==2.0.23"
    ],
    license="Apache v2",
    packages=["cadgis"],
    entry_points={
        "console_scripts": ["cadgis=cadgis.cli:main"]
    },
    classifiers=[
        "Programming Language :: Python :: 3"
    ]
)
