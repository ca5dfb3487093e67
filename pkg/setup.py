from setuptools import setup, find_packages

with open("README.rst", "r") as fh:
    long_description = fh.read()

setup(
    name="DCFM",
    version="0.1",
    description="Keyframe-based video semantic segmentation with deep common feature reuse",

    ## meta data
    author="DCFM contributors",
    author_email="",
    long_description=long_description,
    long_description_content_type="text/x-rst",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.7',

    ## dependencies
    packages=find_packages(exclude=['tests', 'tests.*']),
    install_requires=['numpy>=1.17.0', 'scipy>=1.5', 'torch>=1.9.0',
                      'tqdm>=4.40'],
    entry_points={
        'console_scripts': ['dcfm=DCFM.cli:main'],
    },
)
