#!/usr/bin/env python
import os
import re

from setuptools import setup, find_packages


ROOT = os.path.dirname(__file__)
VERSION_RE = re.compile(r'''__version__ = ['"]([0-9.]+)['"]''')


requires = [
    'numpy>=1.17.0,<3.0',
    'pandas>=1.5.0,<3.0',
]


def get_version():
    init = open(os.path.join(ROOT, 'fortress', '__init__.py')).read()
    return VERSION_RE.search(init).group(1)


setup(
    name='fortress-sim',
    version=get_version(),
    description='A deterministic federated sequential-recommendation '
                'simulator with poisoning attacks and an embedding defense',
    long_description=open('README.rst').read(),
    author='The FORTRESS Simulator Authors',
    packages=find_packages(exclude=['tests*']),
    include_package_data=True,
    install_requires=requires,
    entry_points={
        'console_scripts': [
            'fortress = fortress.cli:main',
        ],
    },
    license="Apache License 2.0",
    python_requires=">= 3.7",
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'License :: OSI Approved :: Apache Software License',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
    ],
)
