"""
Debiased Bayesian average treatment effect estimation

Gaussian process regression with a propensity-corrected prior, Bayesian
bootstrap averaging over the feature distribution, benchmark generators and a
replication harness.
"""

__version__ = "0.1.0"
