"""Uncertainty-aware data-based airfoil optimization.

A Gaussian stochastic encoder-decoder surrogate with calibrated confidence
intervals, embedded in a constrained multi-objective differential-evolution
loop, benchmarked against a synthetic transonic-aerodynamics oracle.
"""

from uadbo._core import *  # noqa: F401,F403
from uadbo._core import __doc__ as _core_doc  # noqa: F401

__version__ = "0.1.0"
