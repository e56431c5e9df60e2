"""Keeps pytest's rootdir at the repository and the tests directory importable."""
