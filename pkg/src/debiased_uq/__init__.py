"""Non-asymptotic confidence intervals for debiased high-dimensional estimators."""

__version__ = "0.1.0"
