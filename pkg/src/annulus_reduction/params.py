"""Problem parameters and the package's exception types."""

from __future__ import annotations

import math
from dataclasses import dataclass


class ParameterError(ValueError):
    """Invalid problem or discretization parameter."""


class DomainError(ValueError):
    """A point or value lies outside the admissible range."""


class GridMismatchError(ValueError):
    """Fields or operators live on incompatible grids."""


class DegenerateError(ValueError):
    """Input is degenerate for the requested operation (e.g. a zero field)."""


class ConvergenceError(RuntimeError):
    """An iterative method stopped before reaching its tolerance.

    The last iterate (or whatever partial result the method produced) is
    attached as ``outcome`` so callers can inspect or persist it.
    """

    def __init__(self, message: str, outcome=None):
        super().__init__(message)
        self.outcome = outcome


@dataclass(frozen=True)
class ProblemParams:
    """Parameters ``(m, a, b, p, lam)`` of ``-Δu + λu = |u|^(p-1)u`` on
    ``A = {a < |x| < b} ⊂ R^2m`` and of the reduced problem on ``D ⊂ R^(m+1)``.

    ``p`` must be subcritical in dimension ``m + 1``.
    """

    m: int
    a: float
    b: float
    p: float
    lam: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ParameterError(f"m must be an integer >= 2, got {self.m!r}")
        if not (self.a > 0 and self.b > self.a):
            raise ParameterError(f"need 0 < a < b, got a={self.a!r}, b={self.b!r}")
        if not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam!r}")
        if not self.p > 1:
            raise ParameterError(f"p must exceed 1, got {self.p!r}")
        if self.m > 1 and not self.p < self.critical_exponent:
            raise ParameterError(
                f"p={self.p} is not subcritical in dimension {self.N} "
                f"(need p < {self.critical_exponent})"
            )

    @property
    def N(self) -> int:
        """Dimension of the reduced annulus."""
        return self.m + 1

    @property
    def critical_exponent(self) -> float:
        return (self.m + 3) / (self.m - 1)

    @property
    def domain(self) -> "ReducedDomain":
        return ReducedDomain.from_params(self)

    def with_lambda(self, lam: float) -> "ProblemParams":
        return ProblemParams(self.m, self.a, self.b, self.p, lam)

    @classmethod
    def from_epsilon(cls, m, a, b, p, epsilon) -> "ProblemParams":
        """Build from the singular-perturbation form ``-ε²Δu + u = |u|^(p-1)u``."""
        if not epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {epsilon!r}")
        return cls(m, a, b, p, 1.0 / epsilon**2)


@dataclass(frozen=True)
class ReducedDomain:
    """Annulus ``R1 < |z| < R2`` in ``R^N`` with ``R1 = a²/2``, ``R2 = b²/2``."""

    R1: float
    R2: float
    N: int

    def __post_init__(self):
        if not 0 < self.R1 < self.R2:
            raise ParameterError(f"need 0 < R1 < R2, got {self.R1}, {self.R2}")
        if self.N < 3:
            raise ParameterError(f"N must be >= 3, got {self.N}")

    @classmethod
    def from_params(cls, params: ProblemParams) -> "ReducedDomain":
        return cls(params.a**2 / 2, params.b**2 / 2, params.N)


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere ``S^dim`` (``S^0`` has two points)."""
    return 2 * math.pi ** ((dim + 1) / 2) / math.gamma((dim + 1) / 2)
