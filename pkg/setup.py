from codecs import open as codecs_open
from setuptools import setup, find_packages


# Get the long description from the relevant file
with codecs_open('README.md', encoding='utf-8') as f:
    long_description = f.read()


setup(name='muonbench',
      version='0.1.0',
      description=u"Muon and AdamW on small matrix-parameter tasks, with "
                  u"token-ratio batch sweeps and ablations",
      long_description=long_description,
      keywords=['optimization', 'Muon', 'Newton-Schulz', 'matrix sign function',
                'AdamW', 'batch size'],
      license='GPL3',
      packages=find_packages(exclude=['examples',
                                      'tests']),
      include_package_data=True,
      zip_safe=False,
      install_requires=[
          'numpy',
          'svgwrite',
      ],
      extras_require={
          'dev': [
              'pytest',
              'pytest-cov',
              'sphinx',
              'recommonmark',
              'sphinx_rtd_theme',
          ],
      },
      entry_points={
          'console_scripts': [
              'muonbench = muonbench.cli:main',
          ],
      },
      platforms=["POSIX"],
      classifiers=['Intended Audience :: Science/Research',
                   'License :: OSI Approved :: GNU General Public License v3 ' +
                   'or later (GPLv3+)',
                   'Operating System :: POSIX',
                   'Topic :: Scientific/Engineering :: Mathematics',
                   'Programming Language :: Python :: 3.8',
                   'Programming Language :: Python :: 3.9',
                   'Programming Language :: Python :: 3.10',
                   'Development Status :: 3 - Alpha',
                   'Environment :: Console',
                   ],
      )
