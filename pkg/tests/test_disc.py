import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import interior_noise

from annulus_reduction import disc
from annulus_reduction.disc import Field, Grid, LiftedGrid, WeightedOperator
from annulus_reduction.params import GridMismatchError, ParameterError, ProblemParams

# closed form (4 pi / 3)(R2^3 - R1^3) for R1 = 1/2, R2 = 2
ANNULUS_VOLUME = 4 * math.pi / 3 * (8 - 1 / 8)


def test_grid_basics(small_grid):
    assert small_grid.shape == (48, 24)
    assert small_grid.rho[0] == 0.5 and small_grid.rho[-1] == 2.0
    assert small_grid.phi[0] == 0.0 and small_grid.phi[-1] == pytest.approx(math.pi)
    assert not small_grid.interior[0].any() and not small_grid.interior[-1].any()
    # pole rows are interior nodes of the axisymmetric problem
    assert small_grid.interior[1:-1, 0].all()
    ref = small_grid.refined()
    assert ref.shape == (95, 47) and ref.h == pytest.approx(small_grid.h / 2)


def test_grid_too_small(params100):
    with pytest.raises(ParameterError):
        Grid.for_params(params100, 8, 24)


def test_field_checks(small_grid):
    with pytest.raises(GridMismatchError):
        Field(small_grid, np.zeros((3, 3)))
    bad = np.zeros(small_grid.shape)
    bad[3, 3] = np.nan
    with pytest.raises(ValueError):
        Field(small_grid, bad)


@pytest.mark.parametrize("n", [(48, 24), (129, 65)])
def test_volume_of_annulus(params100, n):
    grid = Grid.for_params(params100, *n)
    one = Field(grid, np.ones(grid.shape))
    assert disc.weighted_inner_product(one, one) == pytest.approx(ANNULUS_VOLUME, rel=1e-13)


def test_upstairs_volume(params100):
    lifted = LiftedGrid(Grid.for_params(params100, 65, 33))
    one = Field(lifted, np.ones(lifted.shape))
    # |B_2 \ B_1| in R^4 = pi^2 / 2 (2^4 - 1)
    assert disc.weighted_inner_product(one, one, "upstairs_volume") == pytest.approx(math.pi**2 / 2 * 15, rel=1e-12)


def test_weight_kinds(small_grid):
    f = Field(small_grid, np.ones(small_grid.shape))
    with pytest.raises(ValueError):
        disc.weighted_norm(f, "bogus")
    with pytest.raises(GridMismatchError):
        disc.weighted_norm(f, "upstairs_volume")
    mask = small_grid.rho2d < 1.0
    assert disc.weighted_norm(f, mask=mask) < disc.weighted_norm(f)


def _laplacian_error(grid, func, exact):
    v = Field(grid, func(grid.rho2d, grid.phi2d))
    lap = disc.assemble_axisym_laplacian(grid).apply(v).values
    return np.abs(lap - exact)[grid.interior].max()


def test_axisym_laplacian_of_norm_squared(params100):
    # |z|^2 = rho^2 has Laplacian 2N = 6
    errs = [_laplacian_error(Grid.for_params(params100, n, n // 2), lambda r, p: r**2, 6.0) for n in (33, 65)]
    assert errs[1] < 0.05
    assert errs[0] / errs[1] > 3.5


def test_axisym_laplacian_of_harmonic(params100):
    # rho cos(phi) is a linear function of z, so harmonic
    errs = [_laplacian_error(Grid.for_params(params100, n, n // 2 + 1), lambda r, p: r * np.cos(p), 0.0)
            for n in (65, 129)]
    assert errs[0] < 1e-2 and errs[0] / errs[1] > 3.5


def test_upstairs_laplacian_examples(params100):
    lifted = LiftedGrid(Grid.for_params(params100, 65, 33))
    op = disc.assemble_upstairs_laplacian(lifted)
    inner = lifted.interior
    r, t = lifted.r2d, lifted.theta2d
    assert np.abs(op.apply(np.ones(lifted.shape)).values[inner]).max() < 1e-10
    assert np.abs(op.apply(r**2).values[inner] - 4 * lifted.m).max() < 1e-9
    # harmonic, but the upstairs stencil alone is only second order on it
    err = np.abs(op.apply(r**2 * np.cos(2 * t)).values[inner]).max()
    fine = LiftedGrid(lifted.base.refined())
    rf, tf = fine.r2d, fine.theta2d
    err_fine = np.abs(disc.assemble_upstairs_laplacian(fine).apply(rf**2 * np.cos(2 * tf)).values[fine.interior]).max()
    assert err < 0.02 and err / err_fine > 3.5


def test_operator_errors(small_grid):
    with pytest.raises(ParameterError):
        disc.assemble_axisym_laplacian(small_grid, N=2)
    with pytest.raises(GridMismatchError):
        disc.assemble_axisym_laplacian(small_grid, N=4)
    with pytest.raises(GridMismatchError):
        disc.assemble_upstairs_laplacian(LiftedGrid(small_grid), m=3)
    op = disc.assemble_axisym_laplacian(small_grid)
    with pytest.raises(GridMismatchError):
        op.apply(np.zeros((4, 4)))


def test_symmetry_certificate(small_grid):
    assert disc.assemble_axisym_laplacian(small_grid).symmetric
    assert disc.assemble_upstairs_laplacian(LiftedGrid(small_grid)).symmetric


@given(seed=st.integers(0, 2**31))
def test_symmetry_defect(seed, small_grid):
    op = disc.assemble_axisym_laplacian(small_grid)
    f, g = interior_noise(small_grid, seed), interior_noise(small_grid, seed + 1)
    assert op.symmetry_defect(f, g) <= 1e-10
    up = disc.assemble_upstairs_laplacian(LiftedGrid(small_grid))
    assert up.symmetry_defect(f, g) <= 1e-10


@given(seed=st.integers(0, 2**31))
def test_dirichlet_form_is_positive(seed, small_grid):
    f = interior_noise(small_grid, seed)
    assert float(np.sum(f * small_grid.apply_stiffness(f))) > 0


def test_flux_form_matches_matrix(small_grid):
    f = interior_noise(small_grid, 7)
    a = small_grid.apply_stiffness(f).ravel()
    b = small_grid.stiffness @ f.ravel()
    assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()


def test_weighted_operator_potential(small_grid):
    pot = np.full(small_grid.shape, 2.0)
    op = WeightedOperator(small_grid, small_grid.volume_weight, kinetic=0.0, potential=pot)
    f = interior_noise(small_grid, 3)
    assert np.allclose(op.apply(f).values, 2.0 * f)
