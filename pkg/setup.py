from setuptools import setup, find_packages

setup(
    name="stratlasso",
    version="0.1.0",
    license="Apache 2.0",
    packages=find_packages(exclude=['tests']),
    install_requires=[
        'numpy', 'scipy', 'pandas', 'matplotlib'],
    extras_require={'tests': ['pytest']},
    entry_points={'console_scripts': ['stratlasso=stratlasso.run:main']},
    description="Lasso estimation and support recovery diagnostics for stratified regression data",
    classifiers=[
        # Trove classifiers
        # Full list: https://pypi.python.org/pypi?%3Aaction=list_classifiers
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: Implementation :: CPython",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    keywords="Lasso Stratified Regression Sparsity",
    python_requires=">=3.8",
)
