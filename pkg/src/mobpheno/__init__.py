"""Mobility phenotyping from smartphone GPS traces.

Daily displacement profiles, circadian rhythm metrics, place-based daily
phenotypes, group comparisons and severe-sadness prediction, plus a
synthetic cohort generator for end-to-end checks.
"""

__version__ = "1.0.0"
FORMAT_VERSION = 1

__all__ = ["__version__", "FORMAT_VERSION"]
