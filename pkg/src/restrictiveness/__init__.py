"""Restrictiveness of economic models.

Restrictiveness measures how much of an eligible set of prediction rules a
parametric or semiparametric model class cannot approximate: the expected
discrepancy of the class to a random rule, normalized by that of a simple
baseline.
"""

__version__ = "0.1.0"
