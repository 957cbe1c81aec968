import os
from setuptools import setup, find_packages

try:
    with open(os.path.join(os.path.dirname(__file__), 'README.rst'), encoding='utf-8') as f:
        long_description = f.read()
except OSError:
    long_description = ''

setup(
    name='osmargin',
    version='1.0.0',
    description='One-sided margin (OSM) losses, OSM-CTC and a toy experiment harness',
    long_description=long_description,
    license='Apache Software License',

    install_requires=[
        'numpy>=1.21',
        'scipy>=1.7',
    ],
    packages=find_packages(exclude=['tests', 'tests.*']),
    include_package_data=True,

    entry_points="""
[console_scripts]
osmargin=osmargin.cli:main
""",

    python_requires='>=3.8',

    classifiers=[
        'Development Status :: 4 - Beta',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: Apache Software License',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],

    # Development dependencies
    extras_require={
        'dev': [
            'pytest>=6.0.0',
            'pytest-cov',
            'pytest-mock',
            'factory-boy',
            'freezegun',
            'coverage',
            'flake8',
            'black',
        ],
    },
)
