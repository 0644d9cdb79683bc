import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import interior_noise

from annulus_reduction import nehari
from annulus_reduction.disc import Field, Grid
from annulus_reduction.params import (ConvergenceError, DegenerateError, DomainError, GridMismatchError,
                                      ProblemParams)


def smooth_field(grid, seed):
    """Random combination of a few smooth modes vanishing on the Dirichlet rows."""
    rng = np.random.default_rng(seed)
    s = (grid.rho2d - grid.R1) / (grid.R2 - grid.R1)
    vals = np.zeros(grid.shape)
    for i in range(1, 4):
        for j in range(3):
            vals += rng.standard_normal() * np.sin(i * np.pi * s) * np.cos(j * grid.phi2d)
    vals[~grid.interior] = 0.0
    return Field(grid, vals)


def test_zero_field(small_grid, params100):
    zero = Field(small_grid, np.zeros(small_grid.shape))
    assert nehari.energy(zero, params100).total == 0.0
    assert np.all(nehari.gradient(zero, params100).values == 0.0)
    with pytest.raises(DegenerateError):
        nehari.nehari_project(zero, params100)


def test_boundary_contract(small_grid, params100):
    vals = np.ones(small_grid.shape)
    with pytest.raises(DomainError):
        nehari.energy(Field(small_grid, vals), params100)
    with pytest.raises(DomainError):
        nehari.gradient(Field(small_grid, vals), params100)


def test_energy_parts(small_grid, params100):
    e = nehari.energy(smooth_field(small_grid, 1), params100)
    assert e.total == pytest.approx(e.dirichlet + e.mass - e.power)
    assert e.dirichlet > 0 and e.mass > 0 and e.power > 0


def test_fiber_maximum_matches_projection(small_grid, params100):
    # J(t v) = t^2 A / 2 - t^4 B / 4 for p = 3: one interior maximum, at the Nehari scaling
    v = smooth_field(small_grid, 2)
    ts = np.linspace(0.01, 40.0, 40001)
    e = nehari.energy(v, params100)
    A = 2 * (e.dirichlet + e.mass)
    B = 4 * e.power
    J = ts**2 * A / 2 - ts**4 * B / 4
    dJ = np.diff(J)
    assert np.count_nonzero(np.diff(np.sign(dJ))) == 1
    t_scan = ts[np.argmax(J)]
    t_star, w = nehari.nehari_project(v, params100)
    assert t_star == pytest.approx(t_scan, abs=2e-3)
    assert nehari.energy(w, params100).total == pytest.approx(J.max(), rel=1e-6)


@given(seed=st.integers(0, 2**31))
def test_gradient_matches_finite_differences(seed, small_grid, params100):
    v = smooth_field(small_grid, seed)
    w = smooth_field(small_grid, seed + 1)
    eps = 1e-5
    fd = (nehari.energy(v.with_values(v.values + eps * w.values), params100).total
          - nehari.energy(v.with_values(v.values - eps * w.values), params100).total) / (2 * eps)
    g = nehari.gradient(v, params100)
    exact = float(np.sum(small_grid.volume_weight * g.values * w.values))
    assert fd == pytest.approx(exact, rel=1e-6, abs=1e-9 * np.abs(fd))


@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 10.0))
def test_projection_lands_on_nehari(seed, scale, small_grid, params100):
    v = Field(small_grid, scale * interior_noise(small_grid, seed))
    t, w = nehari.nehari_project(v, params100)
    assert t > 0
    e = nehari.energy(w, params100)
    assert abs(nehari.nehari_functional(w, params100)) <= 1e-10 * 2 * (e.dirichlet + e.mass)
    t2, _ = nehari.nehari_project(w, params100)
    assert t2 == pytest.approx(1.0, abs=1e-10)


def test_bump_projection(grid256, params100):
    b = nehari.bump(grid256, params100, 0.55, 0.0)
    _, w = nehari.nehari_project(b, params100)
    norm2 = float(np.sum(grid256.volume_weight * w.values**2))
    assert abs(nehari.nehari_functional(w, params100)) / norm2 <= 1e-10


def test_grid_must_match_problem(small_grid):
    other = ProblemParams(2, 1.0, 3.0, 3.0, 10.0)
    v = Field(small_grid, interior_noise(small_grid, 0))
    with pytest.raises(GridMismatchError):
        nehari.nehari_project(v, other)


def test_positive_solution(positive100, params100):
    out = positive100
    v = out.field
    assert out.converged and out.residual_norm <= 1e-8
    assert v.values.min() >= 0.0
    assert nehari.schwarz_defect(v) <= 1e-8
    hist = np.array(out.energy_history)
    assert np.all(np.diff(hist) <= 1e-9 * np.abs(hist[:-1]))
    assert abs(nehari.nehari_functional(v, params100)) <= 1e-8


def test_nodal_solution(nodal100, positive100, params100):
    v = nodal100.field
    assert nodal100.converged and nodal100.residual_norm <= 1e-8
    pos = v.with_values(np.maximum(v.values, 0.0))
    neg = v.with_values(np.minimum(v.values, 0.0))
    assert abs(nehari.nehari_functional(v, params100, pos)) <= 1e-8
    assert abs(nehari.nehari_functional(v, params100, neg)) <= 1e-8
    assert nehari.nodal_regions(v) == 2
    split = nehari.energy(pos, params100).total + nehari.energy(neg, params100).total
    assert nodal100.energy.total == pytest.approx(split, rel=1e-6)
    # each sign part is (up to the discrete coupling) on the Nehari manifold
    assert nodal100.energy.total >= 2 * positive100.energy.total * (1 - 1e-8)


def test_schwarz_defect_detects_increase(small_grid):
    vals = np.zeros(small_grid.shape)
    vals[5, 10] = 1.0
    assert nehari.schwarz_defect(Field(small_grid, vals)) == 1.0
    vals = np.cos(small_grid.phi2d) + 2.0
    assert nehari.schwarz_defect(Field(small_grid, vals)) == 0.0


def test_nonconvergence_carries_iterate(params100):
    grid = Grid.for_params(params100, 64, 32)
    opts = nehari.SolverOptions(max_iter=2, max_newton=0)
    with pytest.raises(ConvergenceError) as info:
        nehari.solve_positive(params100, grid, opts=opts)
    out = info.value.outcome
    assert not out.converged and out.residual_norm > 1e-8
    assert out.field.grid == grid


def test_nodal_collapse(params100):
    grid = Grid.for_params(params100, 64, 32)
    init = nehari.bump(grid, params100, 0.6, 0.0)
    with pytest.raises(DegenerateError):
        nehari.solve_nodal(params100, grid, init=init)
