"""Randomized central limit theorems for homogeneous random fields.

Field simulators, averaging regions, randomized estimators built from i.i.d.
random points, empirical processes, Monte Carlo limit tests and a CLI harness.
"""

__version__ = "0.1.0"

from .errors import RandcltError  # noqa: E402,F401
