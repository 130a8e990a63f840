"""Adaptive selection of anomaly detectors and their run-time parameters.

The package trains a convolutional classifier that, given a normalized
sliding window of a univariate series, picks which detector to run and
which parameter setting to run it with. Training labels come from an
exhaustive oracle sweep over a fixed parameter grid.
"""

__version__ = "0.1.0"
