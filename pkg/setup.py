from setuptools import setup

def readme():
    with open('README.md') as f:
        return f.read()

setup(name='crowdnms',
      version='0.1.0',
      description='Nearby-object aware non-maximum suppression for crowded scenes',
      long_description=readme(),
      long_description_content_type='text/markdown',
      classifiers=[
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Image Recognition'
      ],
      keywords='non-maximum suppression pedestrian detection crowd soft-nms adaptive-nms miss rate',
      author='Developers',
      license='LPGL-2.1',
      packages=['crowdnms'],
      python_requires='>=3.8',
      install_requires=[
          'numpy >= 1.17',
          'scipy >= 1.6.0',
          'pandas >= 1.5'
      ],
      extras_require={
          "test": ['pytest'],
          },
      tests_require=['pytest'],
      entry_points={
          'console_scripts': ['crowdnms=crowdnms.cli:main'],
          },
      include_package_data=True,
      zip_safe=False)
