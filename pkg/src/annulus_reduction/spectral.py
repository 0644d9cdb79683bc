"""Linearized operators at computed solutions and their low spectrum.

At a solution ``v`` of the reduced problem the linearization is

    L_v = -Lap + (lam - p |v|^(p-1)) / (2 rho)

on ``D``.  Two inner products are used.  The plain volume weight gives the
symmetric-class Morse index.  The weight ``omega dz / (2 rho)`` is the image
of ``dx`` on ``A`` and turns ``L_v`` into the doubly-radial part of the
upstairs linearization, whose first eigenpair ``(mu_1, g_1)`` feeds the test
functions

    Phi^k = g_1(r, theta) [cos^2(theta) psi_k(s1) + sin^2(theta) psi_k(s2)]

built from spherical harmonics ``psi_k`` of degree ``k`` on ``S^(m-1)``.
The harmonics never appear explicitly: with ``psi_k`` of mean zero and mean
square one, ``Q(Phi^k) = <L Phi^k, Phi^k>`` reduces to

    Q0 + nu_k * Q_ang,
    Q0    = ∫_A |∇g|^2 eta + 2m g^2 cos^2(2 theta) / r^2 + (lam - p u^(p-1)) g^2 eta,
    Q_ang = ∫_A g^2 / r^2,

with ``eta = cos^4 + sin^4 = (1 + cos^2 phi) / 2``.  The ``cos^2`` term
collects the cross terms of the ``theta`` derivative after an integration
by parts.  Everything is evaluated on the reduced grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .disc import Field, Grid, WeightedOperator, _cell_integrals, _certified, _dual_cells, _tensor_stiffness
from .params import ConvergenceError, DomainError, GridMismatchError, ProblemParams, sphere_area

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
MEASURES = ("volume", "upstairs")


@dataclass
class Spectrum:
    """Ascending eigenvalues of ``L g = mu W g`` with ``W``-orthonormal eigenfields."""

    eigenvalues: np.ndarray
    eigenfields: list
    count_negative: int
    residuals: np.ndarray


@dataclass(frozen=True)
class PhiKReport:
    k: int
    nu_k: float
    Q_value: float
    Q0: float
    Q_ang: float

    @classmethod
    def from_parts(cls, k, nu, Q0, Q_ang):
        return cls(int(k), float(nu), float(Q0 + nu * Q_ang), float(Q0), float(Q_ang))


@dataclass(frozen=True)
class MorseIndex:
    """Negative-eigenvalue count with the number of eigenvalues too close to zero to call."""

    index: int
    uncertain: int
    tol: float

    @property
    def indeterminate(self) -> bool:
        return self.uncertain > 0

    def __int__(self):
        return self.index


def _upstairs_factor(grid: Grid) -> float:
    # dx on A is |S^(m-1)| dz / (2 rho) with m = N - 1
    return sphere_area(grid.N - 2)


def linearized_operator(v: Field, params: ProblemParams, measure: str = "volume") -> WeightedOperator:
    """``L_v`` as a :class:`WeightedOperator` on the reduced grid.

    ``measure="volume"``: weight ``dz``, potential ``(lam - p|v|^(p-1)) / (2 rho)``.
    ``measure="upstairs"``: weight ``omega dz / (2 rho)`` (the image of ``dx``
    on ``A``), potential ``lam - p|v|^(p-1)``; the action is then the lifted
    upstairs operator ``-Lap_2m + lam - p|u|^(p-1)``.
    """
    grid = v.grid
    if not isinstance(grid, Grid):
        raise GridMismatchError("linearized_operator expects a field on the reduced grid")
    if grid.N != params.N:
        raise GridMismatchError(f"field lives in dimension {grid.N}, problem in {params.N}")
    pot = params.lam - params.p * np.abs(v.values) ** (params.p - 1)
    if measure == "volume":
        op = WeightedOperator(grid, grid.volume_weight, kinetic=1.0, potential=pot / (2.0 * grid.rho2d))
    elif measure == "upstairs":
        omega = _upstairs_factor(grid)
        weight = omega * grid.volume_weight / (2.0 * grid.rho2d)
        op = WeightedOperator(grid, weight, kinetic=omega, potential=pot)
    else:
        raise ValueError(f"unknown measure {measure!r}; expected one of {MEASURES}")
    return _certified(op)


def _interior_problem(L: WeightedOperator):
    if L.kinetic <= 0:
        raise ValueError("eigensolvers need a positive kinetic coefficient (an operator bounded below)")
    form, w = L.restricted()
    pot = np.zeros(len(w)) if L.potential is None else L.potential.ravel()[np.flatnonzero(L.grid.interior.ravel())]
    return form, w, pot


def _embed(L, x):
    full = np.zeros(L.grid.size)
    full[np.flatnonzero(L.grid.interior.ravel())] = x
    return Field(L.grid, full.reshape(L.grid.shape))


def _residual(form, w, mu, x):
    """``|form x - mu W x|_(W^-1) / (|x|_W max(1, |mu|))``."""
    r = form @ x - mu * w * x
    return float(np.sqrt(np.sum(r * r / w)) / (np.sqrt(np.sum(w * x * x)) * max(1.0, abs(mu))))


def _lower_shift(pot):
    # K >= 0, so every eigenvalue is at least min(potential)
    lo = float(pot.min())
    return lo - 1.0 - 0.01 * abs(lo)


def eigs_smallest(L: WeightedOperator, k: int) -> Spectrum:
    """``k`` smallest eigenpairs of the Dirichlet problem ``L g = mu g`` in the ``L.weight`` inner product.

    Shift-invert Lanczos (ARPACK) on ``form g = mu diag(w) g`` with the shift
    below the spectrum, so the wanted eigenvalues are the largest ones of
    the inverted operator.  Raises :class:`ConvergenceError` if any
    eigenpair misses the residual tolerance.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    form, w, pot = _interior_problem(L)
    n = len(w)
    if k >= n - 1:
        raise ValueError(f"k={k} too large for {n} unknowns")
    sigma = _lower_shift(pot)
    v0 = np.ones(n)
    vals, vecs = spla.eigsh(form.tocsc(), k=k, M=sp.diags(w).tocsc(), sigma=sigma, which="LM", v0=v0, tol=1e-14)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    fields, residuals = [], []
    for j in range(k):
        x = vecs[:, j]
        x = x / np.sqrt(np.sum(w * x * x))
        if x[np.argmax(np.abs(x))] < 0:
            x = -x
        mu = float(x @ (form @ x))
        vals[j] = mu
        residuals.append(_residual(form, w, mu, x))
        fields.append(_embed(L, x))
    residuals = np.array(residuals)
    spec = Spectrum(vals, fields, int(np.sum(vals < 0)), residuals)
    if residuals.max() > RESIDUAL_TOL:
        raise ConvergenceError(f"eigenpair residuals {residuals.max():.2e} exceed {RESIDUAL_TOL}", spec)
    return spec


def count_below(L: WeightedOperator, sigma: float) -> int:
    """Number of Dirichlet eigenvalues of ``L`` below ``sigma`` (Sylvester's law of inertia).

    ``form - sigma W`` is factorized with a symmetric fill-reducing ordering
    and no row pivoting, i.e. as ``P^T L D L^T P``; the count is the number
    of negative pivots.  Raises :class:`ConvergenceError` if SuperLU had to
    break the symmetric ordering or met a zero pivot.
    """
    form, w, _ = _interior_problem(L)
    B = (form - sigma * sp.diags(w)).tocsc()
    try:
        lu = spla.splu(B, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise ConvergenceError(f"inertia factorization failed at shift {sigma:g}: {exc}") from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise ConvergenceError(f"inertia factorization lost symmetric ordering at shift {sigma:g}")
    pivots = lu.U.diagonal()
    if np.any(pivots == 0) or not np.all(np.isfinite(pivots)):
        raise ConvergenceError(f"singular pivot at shift {sigma:g}")
    return int(np.sum(pivots < 0))


def morse_index(v: Field, params: ProblemParams, tol_eig: float | None = None) -> MorseIndex:
    """Number of negative eigenvalues of ``L_v`` among axially symmetric functions.

    Counts eigenvalues below ``-tol_eig`` (default ``1e-8 lam``) by inertia;
    eigenvalues in ``[-tol_eig, tol_eig)`` are reported as uncertain.
    """
    tol = 1e-8 * params.lam if tol_eig is None else tol_eig
    L = linearized_operator(v, params)
    below = count_below(L, -tol)
    return MorseIndex(below, count_below(L, tol) - below, tol)


def first_symmetric_eigenpair(v: Field, params: ProblemParams, tol: float = 1e-11, max_iter: int = 200):
    """``(mu_1, g_1)`` of the doubly-radial upstairs linearization.

    Shifted inverse iteration on the ``upstairs`` form, independent of
    :func:`eigs_smallest`.  The shift starts below the spectrum and is
    moved to ``rq - 2 res`` (still below ``mu_1`` once the iterate is
    dominated by the first mode) as the Rayleigh quotient settles.
    ``g_1`` is positive inside and normalized by ``∫_A g_1^2 = 1``.
    """
    L = linearized_operator(v, params, measure="upstairs")
    form, w, pot = _interior_problem(L)
    n = len(w)
    shift = _lower_shift(pot)
    lu = spla.splu((form - shift * sp.diags(w)).tocsc())
    x = np.abs(v.values.ravel()[np.flatnonzero(v.grid.interior.ravel())]) + 1e-3
    x /= np.sqrt(np.sum(w * x * x))
    mu, res = float(x @ (form @ x)), np.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(w * x)
        x = y / np.sqrt(np.sum(w * y * y))
        mu = float(x @ (form @ x))
        res = _residual(form, w, mu, x)
        if res <= tol:
            break
        r_abs = res * max(1.0, abs(mu))
        if r_abs < 0.1 * (mu - shift) and mu - 2.0 * r_abs > shift:
            shift = mu - 2.0 * r_abs
            lu = spla.splu((form - shift * sp.diags(w)).tocsc())
    else:
        raise ConvergenceError(f"inverse iteration stalled at residual {res:.2e} after {max_iter} steps",
                               (mu, _embed(L, x)))
    if x.sum() < 0:
        x = -x
    log.debug("first symmetric eigenpair: mu_1=%.10g after %d steps (n=%d)", mu, it, n)
    return mu, _embed(L, x)


def nu_k(k: int, m: int) -> float:
    """Eigenvalue ``k (k + m - 2)`` of the Laplace-Beltrami operator on ``S^(m-1)``."""
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k!r}")
    if int(m) != m or m < 2:
        raise DomainError(f"m must be an integer >= 2, got {m!r}")
    return float(k * (k + m - 2))


def _eta_stiffness(grid: Grid):
    """``K_eta`` with ``g K_eta g = ∫_D |∇g|^2 eta dz``, ``eta = (1 + cos^2 phi) / 2``."""
    N = grid.N
    lo, hi = _dual_cells(grid.phi)
    ang_mass = _cell_integrals(lo, hi, lambda t: 0.5 * (1 + np.cos(t) ** 2) * np.sin(t) ** (N - 2))
    mids = 0.5 * (grid.phi[1:] + grid.phi[:-1])
    ang_faces = 0.5 * (1 + np.cos(mids) ** 2) * np.sin(mids) ** (N - 2)
    return _tensor_stiffness(
        grid.sphere_factor * grid.radial_faces / grid.h_rho,
        ang_mass,
        grid.sphere_factor * grid.radial_mass / grid.rho**2,
        ang_faces / grid.h_phi,
    )


def phi_k_terms(g1: Field, v: Field, params: ProblemParams):
    """``(Q0, Q_ang)`` for the test functions built on ``g1`` (independent of ``k``)."""
    grid = g1.grid
    if v.grid != grid:
        raise GridMismatchError("g1 and v live on different grids")
    if grid.N != params.N:
        raise GridMismatchError(f"grid dimension {grid.N} does not match m={params.m}")
    omega = _upstairs_factor(grid)
    g = np.where(grid.interior, g1.values, 0.0)
    rho, phi, w = grid.rho2d, grid.phi2d, grid.volume_weight
    eta = 0.5 * (1.0 + np.cos(phi) ** 2)
    grad = float(g.ravel() @ (_eta_stiffness(grid) @ g.ravel()))
    cross = float(np.sum(w * params.m * g * g * np.cos(phi) ** 2 / (2.0 * rho**2)))
    pot = params.lam - params.p * np.abs(v.values) ** (params.p - 1)
    potential = float(np.sum(w * pot * g * g * eta / (2.0 * rho)))
    Q0 = omega * (grad + cross + potential)
    Q_ang = omega * float(np.sum(w * g * g / (2.0 * rho) ** 2))
    return Q0, Q_ang


def quadratic_form_phi_k(g1: Field, v: Field, params: ProblemParams, k: int) -> PhiKReport:
    """``Q_(u_lam)(Phi^k)`` for ``g1`` normalized in ``L2(A)``."""
    nu = nu_k(k, params.m)
    Q0, Q_ang = phi_k_terms(g1, v, params)
    return PhiKReport.from_parts(k, nu, Q0, Q_ang)


def phi_k_norm(g1: Field) -> float:
    """``∫_A |Phi^k|^2 = ∫_A g1^2 eta`` (the same for every ``k``)."""
    grid = g1.grid
    eta = 0.5 * (1.0 + np.cos(grid.phi2d) ** 2)
    return _upstairs_factor(grid) * float(np.sum(grid.volume_weight * g1.values**2 * eta / (2.0 * grid.rho2d)))


def morse_lower_bound_upstairs(reports) -> int:
    """Number of ``Phi^k`` with ``Q(Phi^k) < 0``.

    The ``Phi^k`` are mutually ``L2(A)``-orthogonal, so this bounds the
    upstairs Morse index from below.  The direction ``g_1`` itself is not
    added to the count.
    """
    return sum(1 for r in reports if r.Q_value < 0)


def collinearity_defect(reports) -> float:
    """Largest relative deviation of ``(nu_k, Q)`` pairs from the line through the first two."""
    if len(reports) < 3:
        return 0.0
    r0, r1 = reports[0], reports[1]
    slope = (r1.Q_value - r0.Q_value) / (r1.nu_k - r0.nu_k)
    scale = max(abs(r.Q_value) for r in reports)
    return max(abs(r0.Q_value + slope * (r.nu_k - r0.nu_k) - r.Q_value) for r in reports[2:]) / scale


def monte_carlo_q(g1: Field, v: Field, params: ProblemParams, k: int = 1, samples: int = 400_000,
                  seed: int = 0, fd_step: float = 1e-4):
    """Estimate ``∫_A |∇Phi^k|^2 + (lam - p|u|^(p-1)) Phi^k^2`` by sampling points of ``R^4``.

    Independent of the angular reduction: ``Phi^k`` is evaluated as a
    function of ``x ∈ R^4`` with ``psi_k = sqrt(2) cos(k alpha)`` and its
    gradient is taken by Cartesian central differences.  ``g1`` and ``v``
    are interpolated by bicubic splines in ``(rho, phi)``.  Points are
    drawn cell by cell with probability proportional to ``g1^2`` times the
    cell volume (plus a floor), uniformly inside cells and in the two
    circle angles.  Returns ``(estimate, standard_error)``.  ``m = 2`` only.
    """
    from scipy.interpolate import RectBivariateSpline

    if params.m != 2:
        raise ValueError("the Monte-Carlo check is implemented for m = 2 (A in R^4)")
    grid = g1.grid
    rng = np.random.default_rng(seed)
    g_spl = RectBivariateSpline(grid.rho, grid.phi, g1.values)
    v_spl = RectBivariateSpline(grid.rho, grid.phi, v.values)

    # cells [rho_i, rho_i+1] x [phi_j, phi_j+1]
    rho, phi = grid.rho, grid.phi
    rc = 0.5 * (rho[1:] + rho[:-1])
    pc = 0.5 * (phi[1:] + phi[:-1])
    gc = g_spl(rc, pc)
    cell_vol = np.outer(rc ** (grid.N - 1), np.sin(pc) ** (grid.N - 2)) / (2.0 * rc[:, None])
    score = gc**2 * cell_vol
    score = score + 0.02 * score.mean()
    prob = (score / score.sum()).ravel()
    cells = rng.choice(prob.size, size=samples, p=prob)
    ci, cj = np.unravel_index(cells, score.shape)
    s_rho = rho[ci] + grid.h_rho * rng.random(samples)
    s_phi = phi[cj] + grid.h_phi * rng.random(samples)
    a1 = 2 * np.pi * rng.random(samples)
    a2 = 2 * np.pi * rng.random(samples)
    # density of (rho, phi) is prob / cell area; dx = w / (2r) drho dphi da1 da2
    r = np.sqrt(2.0 * s_rho)
    th = s_phi / 2.0
    wx = r**3 * np.cos(th) * np.sin(th)
    dens = prob[cells] / (grid.h_rho * grid.h_phi) / (4 * np.pi**2) * 2.0 * r / wx

    x = np.stack([r * np.cos(th) * np.cos(a1), r * np.cos(th) * np.sin(a1),
                  r * np.sin(th) * np.cos(a2), r * np.sin(th) * np.sin(a2)], axis=1)

    def phi_of(pts):
        n1 = np.hypot(pts[:, 0], pts[:, 1])
        n2 = np.hypot(pts[:, 2], pts[:, 3])
        rr = np.hypot(n1, n2)
        t = np.arctan2(n2, n1)
        rho_, phi_ = np.clip(rr**2 / 2, grid.R1, grid.R2), 2 * t
        gval = g_spl.ev(rho_, phi_)
        psi1 = np.sqrt(2.0) * np.cos(k * np.arctan2(pts[:, 1], pts[:, 0]))
        psi2 = np.sqrt(2.0) * np.cos(k * np.arctan2(pts[:, 3], pts[:, 2]))
        return gval * (np.cos(t) ** 2 * psi1 + np.sin(t) ** 2 * psi2), rho_, phi_

    val, rho_, phi_ = phi_of(x)
    grad2 = np.zeros(samples)
    for d in range(4):
        e = np.zeros(4)
        e[d] = fd_step
        grad2 += ((phi_of(x + e)[0] - phi_of(x - e)[0]) / (2 * fd_step)) ** 2
    pot = params.lam - params.p * np.abs(v_spl.ev(rho_, phi_)) ** (params.p - 1)
    f = (grad2 + pot * val**2) / dens
    return float(f.mean()), float(f.std(ddof=1) / np.sqrt(samples))
