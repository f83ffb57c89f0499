from setuptools import setup, find_packages

setup(
    name='sgflow',
    version='0.1.0',
    description='Safe gradient flows for constrained optimization',
    packages=find_packages(),
    install_requires=[
        'numpy',
        'scipy>=1.9',
        'click',
        'rich',
        'tabulate',
        'tqdm',
        'python-dotenv',
    ],
    extras_require={
        'test': ['pytest'],
    },
    entry_points={
        'console_scripts': [
            'sgflow=sgflow.cli:cli',
        ],
    },
    package_data={'sgflow': ['problems/*.json']},
    include_package_data=True,
    python_requires='>=3.10',
    classifiers=[
        'Programming Language :: Python :: 3',
        'Operating System :: OS Independent',
    ],
)
