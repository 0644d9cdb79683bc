"""Change of variables between doubly-radial functions on ``A ⊂ R^2m`` and
axially symmetric functions on ``D ⊂ R^(m+1)``.

A point with ``|y1| = r cos(theta)``, ``|y2| = r sin(theta)`` corresponds to
``rho = r**2 / 2``, ``phi = 2 theta``; a function ``u(r, theta)`` corresponds
to ``v(rho, phi) = u(sqrt(2 rho), phi / 2)``.  Under this map
``Lap_2m u = 2 rho Lap_(m+1) v``, so ``-Lap u = f(u)`` on ``A`` is equivalent to
``-Lap v = f(v) / (2|z|)`` on ``D``.

The lifted grid is the exact image of the reduced grid, so field transport is
a relabeling of nodal values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .disc import (
    Field,
    Grid,
    LiftedGrid,
    assemble_axisym_laplacian,
    assemble_upstairs_laplacian,
    weighted_norm,
)
from .params import DomainError, GridMismatchError

_SLACK = 1e-12


@dataclass(frozen=True)
class PolarPoint2m:
    """``(r, theta)`` of a point of ``R^2m``; ``theta`` in ``[0, pi/2]``."""

    r: float
    theta: float

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError(f"r must be positive, got {self.r}")
        if not -_SLACK <= self.theta <= math.pi / 2 + _SLACK:
            raise DomainError(f"theta={self.theta} outside [0, pi/2]")


@dataclass(frozen=True)
class PolarPointD:
    """``(rho, phi)`` of a point of ``R^(m+1)``; ``phi`` in ``[0, pi]``."""

    rho: float
    phi: float

    def __post_init__(self):
        if not self.rho > 0:
            raise DomainError(f"rho must be positive, got {self.rho}")
        if not -_SLACK <= self.phi <= math.pi + _SLACK:
            raise DomainError(f"phi={self.phi} outside [0, pi]")


def _check_radius(value, lo, hi, name):
    if lo is not None and not lo * (1 - _SLACK) <= value <= hi * (1 + _SLACK):
        raise DomainError(f"{name}={value} outside [{lo}, {hi}]")


def reduce_point(pt: PolarPoint2m, a: float | None = None, b: float | None = None) -> PolarPointD:
    """``(r, theta) -> (r**2 / 2, 2 theta)``; optionally checks ``a <= r <= b``."""
    _check_radius(pt.r, a, b, "r")
    return PolarPointD(pt.r * pt.r / 2.0, 2.0 * pt.theta)


def lift_point(pt: PolarPointD, R1: float | None = None, R2: float | None = None) -> PolarPoint2m:
    """``(rho, phi) -> (sqrt(2 rho), phi / 2)``; optionally checks ``R1 <= rho <= R2``."""
    _check_radius(pt.rho, R1, R2, "rho")
    return PolarPoint2m(math.sqrt(2.0 * pt.rho), pt.phi / 2.0)


def lift_field(v: Field, target: LiftedGrid | None = None) -> Field:
    """Transport ``v(rho, phi)`` to ``u(r, theta) = v(r**2/2, 2 theta)``.

    Nodes correspond one-to-one, so no interpolation happens.
    """
    if not isinstance(v.grid, Grid):
        raise GridMismatchError("lift_field expects a field on the reduced grid")
    target = LiftedGrid(v.grid) if target is None else target
    if target.base != v.grid:
        raise GridMismatchError("target lifted grid is not the image of the field's grid")
    return Field(target, v.values.copy())


def reduce_field(u: Field, target: Grid | None = None) -> Field:
    """Inverse of :func:`lift_field`."""
    if not isinstance(u.grid, LiftedGrid):
        raise GridMismatchError("reduce_field expects a field on the lifted grid")
    if target is not None and target != u.grid.base:
        raise GridMismatchError("target grid is not the preimage of the field's grid")
    return Field(u.grid.base, u.values.copy())


def sample_upstairs(func, grid: LiftedGrid) -> Field:
    """Evaluate ``func(r, theta)`` on the lifted grid nodes."""
    return Field(grid, np.broadcast_to(func(grid.r2d, grid.theta2d), grid.shape).astype(float))


def sample_reduced(func, grid: Grid) -> Field:
    """Evaluate ``func(rho, phi)`` on the reduced grid nodes."""
    return Field(grid, np.broadcast_to(func(grid.rho2d, grid.phi2d), grid.shape).astype(float))


def laplacian_identity_defect(u: Field) -> Field:
    """Nodal ``Lap_2m u - 2 rho Lap_(m+1) v`` with ``v = reduce_field(u)``; zero on Dirichlet rows."""
    grid = u.grid
    v = reduce_field(u)
    up = assemble_upstairs_laplacian(grid).apply(u).values
    down = assemble_axisym_laplacian(grid.base).apply(v).values
    return Field(grid, up - 2.0 * grid.base.rho2d * down)


def verify_laplacian_identity(u_expr, grid: Grid | LiftedGrid, m: int | None = None) -> float:
    """Max over interior nodes of ``|Lap_2m u - 2 rho Lap_(m+1) v|``.

    ``u_expr`` is a field on the lifted grid or a callable ``u(r, theta)``
    sampled on it.  ``grid`` may be the reduced grid or its image.
    """
    lifted = grid if isinstance(grid, LiftedGrid) else LiftedGrid(grid)
    if m is not None and m != lifted.m:
        raise GridMismatchError(f"grid is for m={lifted.m}, got m={m}")
    u = u_expr if isinstance(u_expr, Field) else sample_upstairs(u_expr, lifted)
    if u.grid != lifted:
        raise GridMismatchError("field is not sampled on the requested grid")
    defect = laplacian_identity_defect(u).values
    return float(np.abs(defect[lifted.interior]).max())


def transported_laplacian(u: Field) -> Field:
    """Upstairs Laplacian induced by the bijection: ``u -> lift(2 rho Lap_(m+1) reduce(u))``.

    This is the discrete operator under which discrete solutions of the
    reduced problem map exactly to discrete solutions upstairs.
    """
    v = reduce_field(u)
    lap = assemble_axisym_laplacian(v.grid).apply(v)
    return lift_field(lap.with_values(2.0 * v.grid.rho2d * lap.values), u.grid)


def upstairs_residual(u: Field, lam: float, p: float, transported: bool = True) -> float:
    """Weighted ``L2(A)`` norm of ``-Lap u + lam u - |u|^(p-1) u`` on interior nodes.

    With ``transported=True`` the Laplacian is :func:`transported_laplacian`
    and the measure is the image of ``dz/(2|z|)``; otherwise the independent
    ``(r, theta)`` discretization and its own quadrature are used, which adds
    the ``O(h^2)`` truncation mismatch between the two schemes.
    """
    if transported:
        lap = transported_laplacian(u).values
        grid = u.grid
        weight = grid.base.volume_weight / (2.0 * grid.base.rho2d) * np.sqrt(grid.sphere_factor)
    else:
        lap = assemble_upstairs_laplacian(u.grid).apply(u).values
        weight = u.grid.volume_weight
    res = -lap + lam * u.values - np.abs(u.values) ** (p - 1) * u.values
    res[~u.grid.interior] = 0.0
    return float(np.sqrt(np.sum(weight * res * res)))


def reduced_residual_field(v: Field, lam: float, p: float) -> Field:
    """``-Lap v + (lam v - |v|^(p-1) v) / (2 rho)`` on interior nodes."""
    lap = assemble_axisym_laplacian(v.grid).apply(v).values
    res = -lap + (lam * v.values - np.abs(v.values) ** (p - 1) * v.values) / (2.0 * v.grid.rho2d)
    res[~v.grid.interior] = 0.0
    return v.with_values(res)


def reduced_residual(v: Field, lam: float, p: float) -> float:
    return weighted_norm(reduced_residual_field(v, lam, p), "volume")
