from setuptools import setup, find_packages


setup(
   name='pbmharvest',
   version='0.1.0',
   author='',
   author_email='',
   packages=find_packages(exclude=["examples", "examples.*"]),
   license='AGPL-3.0',
   classifiers=[
       "Programming Language :: Python :: 3",
       "License :: OSI Approved :: GNU Affero General Public License v3",
       "Operating System :: OS Independent",
   ],
   description='Position-bias propensity estimation by intervention harvesting',
   long_description=open('README.md').read(),
   long_description_content_type="text/markdown",
   install_requires=[
       "numpy>=1.22",
       "scipy>=1.8",
       "pandas>=1.5",
       "joblib>=1.2",
   ],
   extras_require={
       "cli": [
           "cyclopts>=3.0,<4",
           "rich>=13.0",
           "tomli>=2.0.0;python_version<'3.11'",
       ],
       "test": [
           "pytest>=7.0",
       ],
       "all": [
           "cyclopts>=3.0,<4",
           "rich>=13.0",
           "tomli>=2.0.0;python_version<'3.11'",
           "pytest>=7.0",
       ],
   },
   entry_points={
       "console_scripts": [
           "pbmharvest=pbmharvest.cli.main:main",
       ],
   },
   python_requires=">=3.10",
)
