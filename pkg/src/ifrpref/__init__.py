"""Bayesian IFR estimation when testing is preferential.

Modules
-------
distributions   Wallenius' non-central hypergeometric, binomial helpers, CI inversion
model           priors and log posteriors of the small-P and large-P models
sampler         adaptive Metropolis-Hastings kernels and multi-chain runs
diagnostics     R-hat, ESS, HPD intervals
identification  partial-identification intervals for the average IFR
simulation      synthetic-data coverage study
io, cli         data loading, reports and the ``ifrpref`` command
"""

from .errors import ConvergenceError, DataError, DomainError, IdentificationError

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "DataError", "DomainError", "IdentificationError", "__version__"]
