"""
timbrewm
Timbre watermarking of speech that survives voice cloning
"""
from setuptools import setup

DOCLINES = __doc__.split("\n")

version = {}
with open('timbrewm/_version.py') as f:
    exec(f.read(), version)

setup(
    # Self-descriptive entries which should always be present
    name='timbrewm',
    author='the timbrewm developers',
    description=DOCLINES[2],
    long_description="\n".join(DOCLINES[2:]),
    version=version['__version__'],
    license='GPLv3',

    # Which Python importable modules should be included when your package is installed
    packages=['timbrewm', "timbrewm.tests"],
    scripts=['bin/timbrewm'],
    # default settings read by the command line
    package_data={'timbrewm': ["data/params.yaml",
                               "data/README.md",
    ]},

    install_requires=['numpy>=1.20', 'scipy', 'loguru', 'tqdm', 'h5py', 'pyyaml'],
    extras_require={'dask': ['distributed'],
                    'test': ['pytest']},
    python_requires=">=3.8",

    # Manual control if final package is compressible or not, set False to prevent the .egg from being made
    zip_safe=False,
)
