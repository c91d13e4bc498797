"""Deferral benchmark: learned-deferral objectives vs uncertainty-based deferral.

Trains small feed-forward classifiers on an imbalanced synthetic binary task,
compares two learned-deferral training objectives against five
uncertainty-quantification deferral strategies, and evaluates everything with
deferral-rate sweeps on clean and corruption-shifted test data.
"""

__version__ = "0.1.0"

from deferbench import config, data, losses, metrics, nnet, pipelines, report, sweep, uq

__all__ = [
    "config",
    "data",
    "losses",
    "metrics",
    "nnet",
    "pipelines",
    "report",
    "sweep",
    "uq",
]
