"""Least-energy positive and nodal solutions of the reduced problem

    -Lap v = (|v|^(p-1) v - lam v) / (2|z|)   in D,     v = 0 on dD,

as minimizers of

    J(v) = ∫ |∇v|^2 / 2 + lam v^2 / (4|z|) - |v|^(p+1) / (2 (p+1) |z|)

over the Nehari manifold (positive solution) or the nodal Nehari set
(sign-changing solution).

Both solvers minimize the constraint-reduced energy with preconditioned
L-BFGS and then polish the iterate with Newton's method on the discrete
equation.  The preconditioner is the linear part
``A = K + diag(w lam / (2 rho))`` of the Euclidean gradient, factorized once
per solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .disc import Field, Grid
from .params import ConvergenceError, DegenerateError, DomainError, GridMismatchError, ProblemParams

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4


@dataclass(frozen=True)
class EnergyBreakdown:
    """Pieces of ``J``; ``total = dirichlet + mass - power``."""

    dirichlet: float
    mass: float
    power: float
    total: float

    @classmethod
    def from_parts(cls, dirichlet, mass, power):
        return cls(float(dirichlet), float(mass), float(power), float(dirichlet + mass - power))


@dataclass
class SolveOutcome:
    field: Field
    energy: EnergyBreakdown
    residual_norm: float
    iterations: int
    converged: bool
    newton_iterations: int = 0
    energy_history: list = dc_field(default_factory=list)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 50_000
    # relative preconditioned-gradient size at which descent hands over to Newton
    switch_tol: float = 1e-9
    memory: int = 10
    max_newton: int = 40
    outer_init: bool = False


class _Discrete:
    """The discrete functional restricted to interior nodes."""

    def __init__(self, grid: Grid, params: ProblemParams):
        if grid.N != params.N or not np.isclose(grid.R1, params.domain.R1) or not np.isclose(grid.R2, params.domain.R2):
            raise GridMismatchError("grid does not match the problem's reduced domain")
        self.grid = grid
        self.params = params
        self.p = params.p
        self.lam = params.lam
        self.idx = np.flatnonzero(grid.interior.ravel())
        self.w = grid.volume_weight.ravel()[self.idx]
        self.w2rho = self.w / (2.0 * grid.rho2d.ravel()[self.idx])
        self.K = grid.stiffness[self.idx][:, self.idx].tocsc()
        self.A = (self.K + sp.diags(self.lam * self.w2rho)).tocsc()
        self._lu = None

    @property
    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(self.A)
        return self._lu

    def to_interior(self, values):
        return np.asarray(values, dtype=float).ravel()[self.idx]

    def to_field(self, x) -> Field:
        full = np.zeros(self.grid.size)
        full[self.idx] = x
        return Field(self.grid, full.reshape(self.grid.shape))

    def nonlinearity(self, x):
        """``w |x|^(p-1) x / (2 rho)`` (Euclidean form of the power term)."""
        return self.w2rho * np.abs(x) ** (self.p - 1) * x

    def power_integral(self, x):
        return float(np.sum(self.w2rho * np.abs(x) ** (self.p + 1)))

    def energy(self, x):
        kin = float(x @ (self.K @ x))
        mass = self.lam * float(np.sum(self.w2rho * x * x))
        return 0.5 * kin + 0.5 * mass - self.power_integral(x) / (self.p + 1)

    def euclid_gradient(self, x):
        return self.A @ x - self.nonlinearity(x)

    def residual_norm(self, x):
        """Weighted L2 norm of the Riesz gradient ``G / w``."""
        g = self.euclid_gradient(x)
        return float(np.sqrt(np.sum(g * g / self.w)))

    def nehari_factor(self, x):
        a = float(x @ (self.A @ x))
        b = self.power_integral(x)
        if b <= 0.0:
            raise DegenerateError("cannot project the zero field onto the Nehari manifold")
        return (a / b) ** (1.0 / (self.p - 1.0))

    def nodal_factors(self, pos, neg):
        """Scalings ``(t+, t-)`` putting ``t+ pos + t- neg`` on the nodal Nehari set.

        Solves ``t+ a+ + t- c = t+^p b+`` and ``t- a- + t+ c = t-^p b-`` where
        ``c = <pos, K neg>`` is the (small, nonnegative) discrete coupling of
        the two parts across the nodal line.
        """
        Apos, Aneg = self.A @ pos, self.A @ neg
        ap, an, c = float(pos @ Apos), float(neg @ Aneg), float(pos @ Aneg)
        bp, bn = self.power_integral(pos), self.power_integral(neg)
        if bp <= 0.0 or bn <= 0.0:
            raise DegenerateError("a sign part collapsed to zero during nodal descent")
        p = self.p
        t = np.array([(ap / bp) ** (1 / (p - 1)), (an / bn) ** (1 / (p - 1))])
        for _ in range(50):
            F = np.array([t[0] * ap + t[1] * c - t[0] ** p * bp, t[1] * an + t[0] * c - t[1] ** p * bn])
            J = np.array([[ap - p * t[0] ** (p - 1) * bp, c], [c, an - p * t[1] ** (p - 1) * bn]])
            step = np.linalg.solve(J, -F)
            t = t + step
            if np.all(np.abs(step) <= 1e-15 * np.abs(t)):
                break
        if np.any(t <= 0):
            raise DegenerateError("nodal Nehari scaling lost positivity")
        return float(t[0]), float(t[1])

    def newton(self, x, tol, max_iter, keep_sign=False):
        """Damped Newton on ``A x - w f(x) = 0``; returns ``(x, residual, iterations)``."""
        res = self.residual_norm(x)
        it = 0
        while res > tol and it < max_iter:
            it += 1
            jac = (self.A - sp.diags(self.p * self.w2rho * np.abs(x) ** (self.p - 1))).tocsc()
            step = spla.spsolve(jac, -self.euclid_gradient(x))
            t = 1.0
            while True:
                trial = x + t * step
                if keep_sign:
                    trial = np.abs(trial)
                trial_res = self.residual_norm(trial)
                if trial_res < res or t < 1e-4:
                    break
                t *= 0.5
            if trial_res >= res:
                break
            x, res = trial, trial_res
        return x, res, it


def _check_boundary(v: Field):
    if v.boundary_max() != 0.0:
        raise DomainError(f"field must vanish on the Dirichlet boundary (max |v| there = {v.boundary_max():.3e})")


def energy(v: Field, params: ProblemParams) -> EnergyBreakdown:
    """``J_lam(v)`` split into Dirichlet, mass and power integrals."""
    _check_boundary(v)
    grid = v.grid
    vals = v.values
    w2rho = grid.volume_weight / (2.0 * grid.rho2d)
    dirichlet = 0.5 * float(np.sum(vals * grid.apply_stiffness(vals)))
    mass = 0.5 * params.lam * float(np.sum(w2rho * vals * vals))
    power = float(np.sum(w2rho * np.abs(vals) ** (params.p + 1))) / (params.p + 1)
    return EnergyBreakdown.from_parts(dirichlet, mass, power)


def gradient(v: Field, params: ProblemParams) -> Field:
    """Riesz gradient of ``J`` in the volume-weighted inner product.

    ``-Lap v + (lam v - |v|^(p-1) v) / (2 rho)`` on interior nodes, zero on
    the boundary.
    """
    _check_boundary(v)
    grid = v.grid
    vals = v.values
    out = grid.apply_stiffness(vals) / grid.volume_weight
    out += (params.lam * vals - np.abs(vals) ** (params.p - 1) * vals) / (2.0 * grid.rho2d)
    out[~grid.interior] = 0.0
    return Field(grid, out)


def nehari_functional(v: Field, params: ProblemParams, test: Field | None = None) -> float:
    """``<J'(v), test>`` (``test`` defaults to ``v``)."""
    test = v if test is None else test
    return float(np.sum(v.grid.volume_weight * gradient(v, params).values * test.values))


def nehari_project(v: Field, params: ProblemParams):
    """Scale ``v`` onto the Nehari manifold: returns ``(t_star, t_star * v)``."""
    _check_boundary(v)
    disc = _Discrete(v.grid, params)
    x = disc.to_interior(v.values)
    t = disc.nehari_factor(x)
    return t, v.with_values(t * v.values)


def bump(grid: Grid, params: ProblemParams, rho_c: float, phi_c: float, width: float | None = None) -> Field:
    """Gaussian bump around the point ``(rho_c, phi_c)`` of ``D``, cut off at the boundary."""
    if width is None:
        width = 2.0 * np.sqrt(2.0 * rho_c / params.lam)
    rho, phi = grid.rho2d, grid.phi2d
    dist2 = rho**2 + rho_c**2 - 2.0 * rho * rho_c * np.cos(phi - phi_c)
    vals = np.exp(-dist2 / (2.0 * width**2)) * (rho - grid.R1) * (grid.R2 - rho)
    vals[~grid.interior] = 0.0
    return Field(grid, vals)


def default_center(grid: Grid, outer: bool = False) -> float:
    span = grid.R2 - grid.R1
    return grid.R2 - 0.1 * span if outer else grid.R1 + 0.1 * span


def _outcome(disc, x, iterations, newton_its, history, tol):
    v = disc.to_field(x)
    res = disc.residual_norm(x)
    return SolveOutcome(
        field=v,
        energy=energy(v, disc.params),
        residual_norm=res,
        iterations=iterations,
        converged=res <= tol,
        newton_iterations=newton_its,
        energy_history=history,
    )


def _descend(disc, x, project, opts, label):
    """Minimize the constraint-reduced energy ``x -> J(project(x))``.

    ``project(x)`` returns the point on the constraint set and the nodal
    scaling vector ``s`` for which ``s * G(project(x))`` is the gradient of
    the reduced energy (the constraint makes the derivative of the scalings
    drop out).  Steps are preconditioned L-BFGS directions with ``A^-1`` as
    the initial inverse Hessian and an Armijo backtracking line search, so
    the energy decreases monotonically.
    """
    x, scale = project(x)
    J = disc.energy(x)
    grad = scale * disc.euclid_gradient(x)
    history = [J]
    pairs = []
    for it in range(1, opts.max_iter + 1):
        pre = disc.lu.solve(grad)
        size = np.sqrt(max(float(grad @ pre), 0.0) / float(x @ (disc.A @ x)))
        if size <= opts.switch_tol:
            return x, it - 1, history
        direction = -_two_loop(grad, pre, pairs, disc.lu.solve)
        slope = float(grad @ direction)
        if slope >= 0.0:
            pairs.clear()
            direction, slope = -pre, -float(grad @ pre)
        step = 1.0
        while True:
            trial, trial_scale = project(x + step * direction)
            J_trial = disc.energy(trial)
            if J_trial <= J + ARMIJO_C * step * slope:
                break
            step *= 0.5
            if step < 1e-12:
                log.debug("%s descent: line search stalled at iteration %d", label, it)
                return x, it, history
        trial_grad = trial_scale * disc.euclid_gradient(trial)
        s_k, y_k = trial - x, trial_grad - grad
        if float(s_k @ y_k) > 0.0:
            pairs.append((s_k, y_k))
            if len(pairs) > opts.memory:
                pairs.pop(0)
        x, J, grad = trial, J_trial, trial_grad
        history.append(J)
    return x, opts.max_iter, history


def _two_loop(grad, pre_grad, pairs, precondition):
    """L-BFGS two-loop recursion with initial inverse Hessian ``gamma A^-1``."""
    if not pairs:
        return pre_grad
    q = grad.copy()
    alphas = []
    for s, y in reversed(pairs):
        a = float(s @ q) / float(y @ s)
        alphas.append(a)
        q -= a * y
    s, y = pairs[-1]
    Ay = precondition(y)
    r = (float(s @ y) / float(y @ Ay)) * precondition(q)
    for (s, y), a in zip(pairs, reversed(alphas)):
        b = float(y @ r) / float(y @ s)
        r += (a - b) * s
    return r


def solve_positive(params: ProblemParams, grid: Grid, init: Field | None = None,
                   opts: SolverOptions | None = None) -> SolveOutcome:
    """Least-energy positive solution ``v_lam`` (minimizer of ``J`` on the Nehari manifold).

    Positivity is enforced by replacing ``v`` with ``|v|`` every iteration,
    which does not change ``J``.  Raises :class:`ConvergenceError` (carrying
    the last outcome) if the residual tolerance is not met.
    """
    opts = SolverOptions() if opts is None else opts
    disc = _Discrete(grid, params)
    if init is None:
        init = bump(grid, params, default_center(grid, opts.outer_init), 0.0)
    x = np.abs(disc.to_interior(init.values))

    def project(y):
        y = np.abs(y)
        t = disc.nehari_factor(y)
        return t * y, t

    x, its, history = _descend(disc, x, project, opts, "positive")
    x, res, newton_its = disc.newton(x, opts.tol, opts.max_newton, keep_sign=True)
    out = _outcome(disc, x, its, newton_its, history, opts.tol)
    log.info("positive solve lam=%g: %d descent + %d Newton iterations, residual %.2e, J=%.8g",
             params.lam, its, newton_its, out.residual_norm, out.energy.total)
    if not out.converged:
        raise ConvergenceError(f"positive solve did not reach tol={opts.tol} (residual {out.residual_norm:.3e})", out)
    return out


def solve_nodal(params: ProblemParams, grid: Grid, init: Field | None = None,
                opts: SolverOptions | None = None) -> SolveOutcome:
    """Least-energy sign-changing solution (minimizer of ``J`` on the nodal Nehari set).

    Each iteration rescales the positive and negative parts separately so
    that ``<J'(v), v+> = <J'(v), v-> = 0``.
    """
    opts = SolverOptions() if opts is None else opts
    disc = _Discrete(grid, params)
    if init is None:
        rc = default_center(grid, opts.outer_init)
        init = bump(grid, params, rc, 0.0).values - bump(grid, params, rc, np.pi).values
        init = Field(grid, init)
    x = disc.to_interior(init.values)

    def project(y):
        pos, neg = np.maximum(y, 0.0), np.minimum(y, 0.0)
        tp, tn = disc.nodal_factors(pos, neg)
        return tp * pos + tn * neg, np.where(y > 0.0, tp, tn)

    x, its, history = _descend(disc, x, project, opts, "nodal")
    x, res, newton_its = disc.newton(x, opts.tol, opts.max_newton)
    out = _outcome(disc, x, its, newton_its, history, opts.tol)
    log.info("nodal solve lam=%g: %d descent + %d Newton iterations, residual %.2e, J=%.8g",
             params.lam, its, newton_its, out.residual_norm, out.energy.total)
    if not out.converged:
        raise ConvergenceError(f"nodal solve did not reach tol={opts.tol} (residual {out.residual_norm:.3e})", out)
    return out


def nodal_regions(v: Field) -> int:
    """Number of connected sign components of ``v`` on the grid (zero nodes excluded).

    Nodes are joined to their four grid neighbours; the two pole rows are
    not identified across ``phi``.
    """
    from scipy.ndimage import label

    vals = v.values
    return int(label(vals > 0)[1] + label(vals < 0)[1])


def schwarz_defect(v: Field) -> float:
    """Largest increase of ``v(rho, .)`` along ``phi``; zero for foliated Schwarz symmetric fields."""
    return float(max(np.diff(v.values, axis=1).max(), 0.0))
