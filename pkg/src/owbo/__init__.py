"""Bayesian optimization with output-weighted acquisition functions."""
__version__ = "0.1.0"

from .acquisition import Acquisition, AcquisitionSpec
from .bo import RegretTrace, Truth, run
from .core import Dataset, Domain, ExperimentConfig, InputPrior, make_rng

__all__ = [
    "Acquisition",
    "AcquisitionSpec",
    "Dataset",
    "Domain",
    "ExperimentConfig",
    "InputPrior",
    "RegretTrace",
    "Truth",
    "make_rng",
    "run",
]
