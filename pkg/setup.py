from setuptools import setup, find_packages

setup(
    name="cacc-lab",
    version="0.3.0",
    author="cacc-lab developers",
    include_package_data=True,
    packages=find_packages(),
    package_data={"cacclab": ["default-environment", "settings/*.edn"]},
    install_requires=["numpy", "scipy", "osqp", "pandas", "kim_edn", "pygments", "pytz", "packaging"],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["cacc-lab = cacclab.cli:main"]},
)
