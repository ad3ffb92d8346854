from setuptools import setup, find_packages


setup(
    name='Spikekal',
    version='0.1',
    packages=find_packages(exclude=['examples', 'examples.*']),
    install_requires=[
        'greenlet',
        'sortedcontainers',
        'numpy>=1.22',
        'scipy>=1.8',
        'tomli; python_version < "3.11"',
    ],
    extras_require={
        'test': ['pytest'],
    },
    entry_points={
        'console_scripts': [
            'spikekal = Spikekal.Cli:main',
        ],
    },
    author='xyfuture',
    author_email='xyfuture01@gmail.com',
    description='Kalman filtering with a spiking-network gain, classic KF/EKF baselines and a benchmark harness',
    classifiers=[
        'Programming Language :: Python :: 3',
        'License :: OSI Approved :: MIT License',
    ],
)
