"""Differentially private synthetic data from a one-shot sanitized
characteristic-function embedding."""

__version__ = "0.1.0"
