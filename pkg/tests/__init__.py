# only needed for pytest-cov
