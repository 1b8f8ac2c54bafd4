"""Ensemble-based reservoir history matching toolkit.

Finite-volume three-phase forward simulation, a cluster-classify-regress
well-rate surrogate, and adaptive regularized ensemble Kalman inversion with
covariance localization, driven end to end by the ``resmatch`` CLI.
"""

__version__ = "0.1.0"
