"""Symmetry reduction of semilinear Dirichlet problems on annuli.

Maps doubly-radial solutions on an annulus in R^2m to axially symmetric
solutions on an annulus in R^(m+1), computes least-energy positive and
nodal solutions of the reduced weighted problem and checks their
concentration and Morse-index behaviour as the linear coefficient grows.
"""

from .params import (
    ConvergenceError,
    DegenerateError,
    DomainError,
    GridMismatchError,
    ParameterError,
    ProblemParams,
    ReducedDomain,
)

__all__ = [
    "ConvergenceError",
    "DegenerateError",
    "DomainError",
    "GridMismatchError",
    "ParameterError",
    "ProblemParams",
    "ReducedDomain",
]

__version__ = "0.1.0"
