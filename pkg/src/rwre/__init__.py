"""Random walks in i.i.d. random environments on Z^d.

Finite-box ballisticity checks, multiscale box geometry, exact exit solvers
and reproducible Monte Carlo estimators.
"""

__version__ = "0.1.0"
