"""Grids, fields and finite-volume Laplacians on the reduced and lifted annuli.

The reduced annulus ``D ⊂ R^N`` is parameterized by ``(rho, phi)`` in
``[R1, R2] x [0, pi]`` (``phi`` is the polar angle from the symmetry axis).
The lifted annulus ``A ⊂ R^2m`` uses ``(r, theta)`` in ``[a, b] x [0, pi/2]``
with ``|y1| = r cos(theta)`` and ``|y2| = r sin(theta)``.

Both Laplacians are assembled in conservative (finite-volume) form::

    mass * (Lap v) = -K v,    K = D^T diag(face / h) D  (tensor product)

so the operators are self-adjoint for the nodal mass by construction.  Node
masses are exact integrals of the volume density over each dual cell (half
cells at the radial boundaries and at the poles), hence quadrature of
constants reproduces annulus volumes exactly.  At the poles the half-cell
mass turns the angular stencil into the even-reflection form of the limit
``cot(phi) v_phi -> v_phi_phi``.

Radial faces of the reduced grid are fixed by requiring the stencil to be
exact on functions linear in ``rho``; the lifted grid uses plain midpoint
faces, which makes its stencil exact on ``r**2``.  Together these make the
discrete reduction identity exact on the polynomial fields ``r**2`` and
``r**2 cos(2 theta)`` while leaving an honest ``O(h^2)`` defect otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .params import GridMismatchError, ParameterError, ReducedDomain, sphere_area

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)

WEIGHT_KINDS = ("volume", "volume_over_2rho", "upstairs_volume")


def _cell_integrals(lo, hi, density):
    """Gauss-Legendre integral of ``density`` over each ``[lo_k, hi_k]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    return half * (density(pts) @ _GL_WEIGHTS)


def _dual_cells(nodes):
    """Dual-cell bounds: midpoints inside, the end nodes themselves outside."""
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    lo = np.concatenate(([nodes[0]], mids))
    hi = np.concatenate((mids, [nodes[-1]]))
    return lo, hi


def _difference_matrix(n):
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _tensor_stiffness(face1, mass2, mass1_ang, face2):
    """``K = (D1^T F1 D1) ⊗ M2 + M1' ⊗ (D2^T F2 D2)`` over all nodes.

    ``face1`` / ``face2`` are face coefficients already divided by the
    spacing; ``mass2`` is the angular node mass used by radial fluxes and
    ``mass1_ang`` the radial node factor used by angular fluxes.
    """
    n1, n2 = len(mass1_ang), len(mass2)
    d1 = _difference_matrix(n1)
    d2 = _difference_matrix(n2)
    k1 = d1.T @ sp.diags(face1) @ d1
    k2 = d2.T @ sp.diags(face2) @ d2
    return (sp.kron(k1, sp.diags(mass2)) + sp.kron(sp.diags(mass1_ang), k2)).tocsr()


def _tensor_flux_apply(values, face1, mass2, mass1_ang, face2):
    """``K @ values`` evaluated in flux (difference) form.

    Same result as the assembled matrix but without the cancellation between
    the diagonal and off-diagonal entries, which matters on fine grids.
    """
    flux1 = face1[:, None] * np.diff(values, axis=0) * mass2[None, :]
    flux2 = mass1_ang[:, None] * np.diff(values, axis=1) * face2[None, :]
    out = np.zeros_like(values, dtype=float)
    out[:-1] -= flux1
    out[1:] += flux1
    out[:, :-1] -= flux2
    out[:, 1:] += flux2
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on ``[R1, R2] x [0, pi]`` for the reduced annulus in ``R^N``."""

    R1: float
    R2: float
    N: int
    n_rho: int
    n_phi: int

    def __post_init__(self):
        if self.n_rho < 16 or self.n_phi < 16:
            raise ParameterError(f"grid needs at least 16 nodes per direction, got {self.n_rho}x{self.n_phi}")
        ReducedDomain(self.R1, self.R2, self.N)

    @classmethod
    def from_domain(cls, domain: ReducedDomain, n_rho: int, n_phi: int) -> "Grid":
        return cls(domain.R1, domain.R2, domain.N, int(n_rho), int(n_phi))

    @classmethod
    def for_params(cls, params, n_rho: int, n_phi: int) -> "Grid":
        return cls.from_domain(params.domain, n_rho, n_phi)

    def refined(self) -> "Grid":
        """Grid with both spacings halved (existing nodes are kept)."""
        return Grid(self.R1, self.R2, self.N, 2 * self.n_rho - 1, 2 * self.n_phi - 1)

    @property
    def shape(self):
        return (self.n_rho, self.n_phi)

    @property
    def size(self):
        return self.n_rho * self.n_phi

    @cached_property
    def rho(self):
        return np.linspace(self.R1, self.R2, self.n_rho)

    @cached_property
    def phi(self):
        return np.linspace(0.0, np.pi, self.n_phi)

    @property
    def h_rho(self):
        return (self.R2 - self.R1) / (self.n_rho - 1)

    @property
    def h_phi(self):
        return np.pi / (self.n_phi - 1)

    @property
    def h(self):
        return max(self.h_rho, self.h_phi)

    @cached_property
    def sphere_factor(self):
        """Area of ``S^(N-2)``, the orbit of a non-axial point."""
        return sphere_area(self.N - 2)

    @cached_property
    def radial_mass(self):
        lo, hi = _dual_cells(self.rho)
        return (hi**self.N - lo**self.N) / self.N

    @cached_property
    def angular_mass(self):
        lo, hi = _dual_cells(self.phi)
        return _cell_integrals(lo, hi, lambda t: np.sin(t) ** (self.N - 2))

    @cached_property
    def radial_faces(self):
        # face_{i+1/2} - face_{i-1/2} = (N-1) V_i / rho_i  makes the stencil exact on rho.
        rho, mass = self.rho, self.radial_mass
        inc = (self.N - 1) * mass[1:-1] / rho[1:-1]
        start = (0.5 * (rho[0] + rho[1])) ** (self.N - 1)
        return start + np.concatenate(([0.0], np.cumsum(inc)))

    @cached_property
    def angular_faces(self):
        mids = 0.5 * (self.phi[1:] + self.phi[:-1])
        return np.sin(mids) ** (self.N - 2)

    @cached_property
    def volume_weight(self):
        """Nodal quadrature weight for ``dz`` on ``D`` (shape ``n_rho x n_phi``)."""
        return self.sphere_factor * np.outer(self.radial_mass, self.angular_mass)

    @cached_property
    def interior(self):
        """Boolean mask of non-Dirichlet nodes (all but the two radial boundaries)."""
        mask = np.ones(self.shape, dtype=bool)
        mask[0, :] = False
        mask[-1, :] = False
        return mask

    @cached_property
    def rho2d(self):
        return np.broadcast_to(self.rho[:, None], self.shape)

    @cached_property
    def phi2d(self):
        return np.broadcast_to(self.phi[None, :], self.shape)

    @cached_property
    def _stiffness_coefficients(self):
        return (
            self.sphere_factor * self.radial_faces / self.h_rho,
            self.angular_mass,
            self.sphere_factor * self.radial_mass / self.rho**2,
            self.angular_faces / self.h_phi,
        )

    @cached_property
    def stiffness(self):
        """Symmetric ``K`` with ``mass * Lap = -K`` (Dirichlet rows not yet removed)."""
        return _tensor_stiffness(*self._stiffness_coefficients)

    def apply_stiffness(self, values):
        return _tensor_flux_apply(values, *self._stiffness_coefficients)

    def cartesian(self, rho=None, phi=None):
        """Return ``(|z'|, z_N)``: distance from the axis and axial coordinate."""
        rho = self.rho2d if rho is None else rho
        phi = self.phi2d if phi is None else phi
        return rho * np.sin(phi), rho * np.cos(phi)


@dataclass(frozen=True)
class LiftedGrid:
    """Image of a reduced grid under ``r = sqrt(2 rho)``, ``theta = phi / 2``.

    Nodes are uniform in ``r**2`` and ``theta``; this is the ``(r, theta)``
    grid on ``A ⊂ R^2m`` with ``m = N - 1``.
    """

    base: Grid

    @property
    def m(self):
        return self.base.N - 1

    @property
    def shape(self):
        return self.base.shape

    @property
    def size(self):
        return self.base.size

    @property
    def interior(self):
        return self.base.interior

    @cached_property
    def r(self):
        return np.sqrt(2.0 * self.base.rho)

    @cached_property
    def theta(self):
        return self.base.phi / 2.0

    @property
    def h_theta(self):
        return self.base.h_phi / 2.0

    @cached_property
    def sphere_factor(self):
        """``|S^(m-1)|^2``: the two independent sphere orbits of ``y1`` and ``y2``."""
        return sphere_area(self.m - 1) ** 2

    @cached_property
    def radial_mass(self):
        lo, hi = _dual_cells(self.r)
        return (hi ** (2 * self.m) - lo ** (2 * self.m)) / (2 * self.m)

    @cached_property
    def angular_mass(self):
        lo, hi = _dual_cells(self.theta)
        return _cell_integrals(lo, hi, lambda t: (np.cos(t) * np.sin(t)) ** (self.m - 1))

    @cached_property
    def radial_faces(self):
        mids = 0.5 * (self.r[1:] + self.r[:-1])
        return mids ** (2 * self.m - 1)

    @cached_property
    def radial_spacing(self):
        return np.diff(self.r)

    @cached_property
    def angular_faces(self):
        mids = 0.5 * (self.theta[1:] + self.theta[:-1])
        return (np.cos(mids) * np.sin(mids)) ** (self.m - 1)

    @cached_property
    def volume_weight(self):
        return self.sphere_factor * np.outer(self.radial_mass, self.angular_mass)

    @cached_property
    def r2d(self):
        return np.broadcast_to(self.r[:, None], self.shape)

    @cached_property
    def theta2d(self):
        return np.broadcast_to(self.theta[None, :], self.shape)

    @cached_property
    def _stiffness_coefficients(self):
        return (
            self.sphere_factor * self.radial_faces / self.radial_spacing,
            self.angular_mass,
            self.sphere_factor * self.radial_mass / self.r**2,
            self.angular_faces / self.h_theta,
        )

    @cached_property
    def stiffness(self):
        return _tensor_stiffness(*self._stiffness_coefficients)

    def apply_stiffness(self, values):
        return _tensor_flux_apply(values, *self._stiffness_coefficients)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on a :class:`Grid` or :class:`LiftedGrid`."""

    grid: Grid | LiftedGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridMismatchError(f"values of shape {values.shape} on grid of shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field has non-finite entries")
        object.__setattr__(self, "values", values)

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def boundary_max(self) -> float:
        return float(max(np.abs(self.values[0]).max(), np.abs(self.values[-1]).max()))

    def __neg__(self):
        return Field(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class WeightedOperator:
    """``v -> (kinetic * K v) / weight + potential * v`` on one grid.

    ``K`` is the grid's symmetric stiffness, so the operator is self-adjoint
    in the inner product weighted by ``weight``.  ``form`` is the assembled
    symmetric matrix ``kinetic * K + diag(weight * potential)`` over all
    nodes; rows of Dirichlet nodes are discarded on application and the
    Dirichlet problem is the restriction to ``grid.interior``.
    """

    grid: Grid | LiftedGrid
    weight: np.ndarray
    kinetic: float = -1.0
    potential: np.ndarray | None = None
    symmetric: bool = True

    @cached_property
    def form(self) -> sp.csr_matrix:
        form = self.kinetic * self.grid.stiffness
        if self.potential is not None:
            form = form + sp.diags((self.weight * self.potential).ravel())
        return form.tocsr()

    def apply(self, field) -> Field:
        values = field.values if isinstance(field, Field) else np.asarray(field, dtype=float)
        if isinstance(field, Field) and field.grid != self.grid:
            raise GridMismatchError("field and operator live on different grids")
        if values.shape != self.grid.shape:
            raise GridMismatchError(f"expected shape {self.grid.shape}, got {values.shape}")
        out = self.kinetic * self.grid.apply_stiffness(values) / self.weight
        if self.potential is not None:
            out += self.potential * values
        out[~self.grid.interior] = 0.0
        return Field(self.grid, out)

    def restricted(self):
        """Interior block ``(form_II, weight_I)`` of the Dirichlet problem."""
        idx = np.flatnonzero(self.grid.interior.ravel())
        return self.form[idx][:, idx].tocsc(), self.weight.ravel()[idx]

    def inner(self, f, g) -> float:
        return float(np.sum(self.weight * _values(f) * _values(g)))

    def symmetry_defect(self, f, g) -> float:
        """``|<Lf, g>_w - <f, Lg>_w| / (|f|_w |g|_w)`` for interior-supported f, g."""
        f = np.where(self.grid.interior, _values(f), 0.0)
        g = np.where(self.grid.interior, _values(g), 0.0)
        lhs = self.inner(self.apply(f), g)
        rhs = self.inner(f, self.apply(g))
        scale = np.sqrt(self.inner(f, f) * self.inner(g, g))
        return abs(lhs - rhs) / scale


def _values(f):
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def _certified(op: WeightedOperator) -> WeightedOperator:
    """Return ``op`` with ``symmetric`` set from its assembled interior block."""
    block, _ = op.restricted()
    asym = abs(block - block.T).max() if block.nnz else 0.0
    ok = bool(asym <= 1e-12 * max(abs(block).max(), 1.0))
    object.__setattr__(op, "symmetric", ok)
    return op


def assemble_axisym_laplacian(grid: Grid, N: int | None = None) -> WeightedOperator:
    """Discrete ``v_rr + (N-1)/rho v_rho + (N-2) cot(phi)/rho^2 v_phi + v_phiphi/rho^2``.

    Self-adjoint for the weight ``rho^(N-1) sin^(N-2)(phi)`` (integrated over
    dual cells).  ``N`` defaults to the grid's dimension and must match it.
    """
    N = grid.N if N is None else N
    if N < 3:
        raise ParameterError(f"axisymmetric Laplacian needs N >= 3, got {N}")
    if N != grid.N:
        raise GridMismatchError(f"grid built for N={grid.N}, operator requested for N={N}")
    op = WeightedOperator(grid, grid.volume_weight)
    return _certified(op)


def assemble_upstairs_laplacian(grid: LiftedGrid, m: int | None = None) -> WeightedOperator:
    """Discrete Laplacian of ``R^2m`` on functions of ``(r, theta)`` only.

    ``u_rr + (2m-1)/r u_r + (m-1)/r^2 (cot - tan)(theta) u_theta + u_thetatheta/r^2``,
    self-adjoint for ``r^(2m-1) cos^(m-1) sin^(m-1)``.
    """
    m = grid.m if m is None else m
    if m < 2:
        raise ParameterError(f"upstairs Laplacian needs m >= 2, got {m}")
    if m != grid.m:
        raise GridMismatchError(f"grid built for m={grid.m}, operator requested for m={m}")
    return _certified(WeightedOperator(grid, grid.volume_weight))


def weight_array(grid, weight_kind: str) -> np.ndarray:
    if weight_kind == "volume":
        if not isinstance(grid, Grid):
            raise GridMismatchError("'volume' weight lives on the reduced grid")
        return grid.volume_weight
    if weight_kind == "volume_over_2rho":
        if not isinstance(grid, Grid):
            raise GridMismatchError("'volume_over_2rho' weight lives on the reduced grid")
        return grid.volume_weight / (2.0 * grid.rho2d)
    if weight_kind == "upstairs_volume":
        if not isinstance(grid, LiftedGrid):
            raise GridMismatchError("'upstairs_volume' weight lives on the lifted grid")
        return grid.volume_weight
    raise ValueError(f"unknown weight kind {weight_kind!r}; expected one of {WEIGHT_KINDS}")


def weighted_inner_product(f: Field, g: Field, weight_kind: str = "volume") -> float:
    """Quadrature of ``∫ f g dV`` over ``D`` (or ``A``), sphere factors included.

    ``volume``           -- ``dz`` on ``D``
    ``volume_over_2rho`` -- ``dz / (2|z|)`` on ``D``
    ``upstairs_volume``  -- ``dx`` on ``A`` (lifted grid)
    """
    if f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")
    return float(np.sum(weight_array(f.grid, weight_kind) * f.values * g.values))


def weighted_norm(f: Field, weight_kind: str = "volume", mask=None) -> float:
    w = weight_array(f.grid, weight_kind)
    vals = f.values if mask is None else np.where(mask, f.values, 0.0)
    return float(np.sqrt(np.sum(w * vals * vals)))
