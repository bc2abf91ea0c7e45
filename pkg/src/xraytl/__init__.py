"""Experiment harness for transfer-learning strategies on chest X-ray classification."""

__version__ = "0.1.0"
