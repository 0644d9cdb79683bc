import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import interior_noise

from annulus_reduction import nehari, spectral
from annulus_reduction.disc import Field, Grid, WeightedOperator
from annulus_reduction.params import ConvergenceError, DomainError, ProblemParams


@pytest.fixture(scope="module")
def eigpair100(positive100, params100):
    return spectral.first_symmetric_eigenpair(positive100.field, params100)


def zero_field(grid):
    return Field(grid, np.zeros(grid.shape))


def test_dirichlet_laplacian_positive(small_grid):
    L = WeightedOperator(small_grid, small_grid.volume_weight, kinetic=1.0)
    spec = spectral.eigs_smallest(L, 4)
    assert np.all(spec.eigenvalues > 0) and spec.count_negative == 0
    assert spec.residuals.max() <= 1e-8


def test_eigenfields_orthonormal_and_perron(small_grid, params100):
    L = spectral.linearized_operator(zero_field(small_grid), params100)
    spec = spectral.eigs_smallest(L, 4)
    G = np.array([[L.inner(f, g) for g in spec.eigenfields] for f in spec.eigenfields])
    assert np.abs(G - np.eye(4)).max() <= 1e-8
    first = spec.eigenfields[0].values[small_grid.interior]
    assert np.all(first > 0)
    assert np.all(np.diff(spec.eigenvalues) >= 0)


def test_eigs_argument_checks(small_grid, params100):
    L = spectral.linearized_operator(zero_field(small_grid), params100)
    with pytest.raises(ValueError):
        spectral.eigs_smallest(L, 0)
    with pytest.raises(ValueError):
        spectral.eigs_smallest(WeightedOperator(small_grid, small_grid.volume_weight), 2)
    with pytest.raises(ValueError):
        spectral.linearized_operator(zero_field(small_grid), params100, measure="bogus")


def test_eigenvalues_self_convergent(params100):
    # second-order scheme: Richardson extrapolants from successive grid pairs
    # must agree to 1e-6 relative for the lowest three eigenvalues
    ev = []
    for n in (64, 128, 256):
        grid = Grid.for_params(params100, 2 * n, n)
        L = spectral.linearized_operator(zero_field(grid), params100)
        ev.append(spectral.eigs_smallest(L, 3).eigenvalues)
    ev = np.array(ev)
    rich = (4 * ev[1:] - ev[:-1]) / 3
    assert np.all(np.abs(rich[1] - rich[0]) / np.abs(rich[1]) <= 1e-6)


@given(seed=st.integers(0, 2**31))
def test_linearized_symmetric(seed, small_grid, params100):
    v = Field(small_grid, np.abs(interior_noise(small_grid, seed)))
    for measure in spectral.MEASURES:
        L = spectral.linearized_operator(v, params100, measure)
        assert L.symmetric
        f, g = interior_noise(small_grid, seed + 1), interior_noise(small_grid, seed + 2)
        assert L.symmetry_defect(f, g) <= 1e-10


def test_linearized_on_solution(positive100, params100):
    v = positive100.field
    grid = v.grid
    Lv = spectral.linearized_operator(v, params100).apply(v).values
    expected = (1 - params100.p) * np.abs(v.values) ** (params100.p - 1) * v.values / (2 * grid.rho2d)
    diff = np.where(grid.interior, Lv - expected, 0.0)
    assert np.sqrt(np.sum(grid.volume_weight * diff**2)) <= 1e-8


def test_morse_indices(positive100, nodal100, params100, grid256):
    assert spectral.morse_index(positive100.field, params100).index == 1
    assert int(spectral.morse_index(nodal100.field, params100)) == 2
    zero = spectral.morse_index(zero_field(grid256), params100)
    assert zero.index == 0 and not zero.indeterminate


def test_morse_index_matches_eigenvalues(positive100, params100):
    L = spectral.linearized_operator(positive100.field, params100)
    spec = spectral.eigs_smallest(L, 3)
    assert spec.count_negative == spectral.morse_index(positive100.field, params100).index
    for sigma in (spec.eigenvalues[0] - 1, 0.5 * (spec.eigenvalues[1] + spec.eigenvalues[2])):
        assert spectral.count_below(L, sigma) == int(np.sum(spec.eigenvalues < sigma))


def test_morse_index_indeterminate(positive100, params100):
    L = spectral.linearized_operator(positive100.field, params100)
    lam2 = spectral.eigs_smallest(L, 2).eigenvalues[1]
    mi = spectral.morse_index(positive100.field, params100, tol_eig=2 * abs(lam2))
    assert mi.indeterminate and mi.uncertain >= 1


def test_first_eigenpair(eigpair100, positive100, params100):
    mu1, g1 = eigpair100
    grid = g1.grid
    assert mu1 <= (1 - params100.p) * params100.lam
    assert np.all(g1.values[grid.interior] > 0)
    omega = spectral._upstairs_factor(grid)
    assert omega * np.sum(grid.volume_weight * g1.values**2 / (2 * grid.rho2d)) == pytest.approx(1.0, abs=1e-12)
    # same operator through ARPACK
    up = spectral.linearized_operator(positive100.field, params100, measure="upstairs")
    assert spectral.eigs_smallest(up, 1).eigenvalues[0] == pytest.approx(mu1, rel=1e-8)


def test_inverse_iteration_budget(positive100, params100):
    with pytest.raises(ConvergenceError):
        spectral.first_symmetric_eigenpair(positive100.field, params100, tol=1e-30, max_iter=3)


@pytest.mark.parametrize("k, m, nu", [(1, 2, 1.0), (2, 3, 6.0), (1, 4, 3.0)])
def test_nu_k(k, m, nu):
    assert spectral.nu_k(k, m) == nu


def test_nu_k_domain():
    with pytest.raises(DomainError):
        spectral.nu_k(0, 2)
    with pytest.raises(DomainError):
        spectral.nu_k(1, 1)


@given(k=st.integers(1, 200), m=st.integers(2, 20))
def test_nu_k_formula(k, m):
    assert spectral.nu_k(k, m) == k * (k + m - 2)
    assert spectral.nu_k(k + 1, m) > spectral.nu_k(k, m)


def test_phi_k_affine(eigpair100, positive100, params100):
    _, g1 = eigpair100
    reports = [spectral.quadratic_form_phi_k(g1, positive100.field, params100, k) for k in range(1, 7)]
    assert spectral.collinearity_defect(reports) <= 1e-10
    for r in reports:
        assert r.Q_value == r.Q0 + r.nu_k * r.Q_ang
        assert r.Q_ang > 0
    # the Phi^k are L2-normalized up to the factor cos^4 + sin^4 >= 1/2
    assert 0.5 <= spectral.phi_k_norm(g1) <= 1.0


def test_q_negative_at_large_lambda():
    P = ProblemParams(2, 1.0, 2.0, 3.0, 800.0)
    grid = Grid.for_params(P, 256, 128)
    v = nehari.solve_positive(P, grid).field
    _, g1 = spectral.first_symmetric_eigenpair(v, P)
    assert spectral.quadratic_form_phi_k(g1, v, P, 1).Q_value < 0


@given(q0=st.floats(-1e4, 1e4), qa=st.floats(0, 1e3), ks=st.lists(st.integers(1, 30), min_size=1, max_size=12))
def test_lower_bound_counting(q0, qa, ks):
    reports = [spectral.PhiKReport.from_parts(k, spectral.nu_k(k, 2), q0, qa) for k in sorted(set(ks))]
    count = spectral.morse_lower_bound_upstairs(reports)
    assert count == sum(r.Q_value < 0 for r in reports)
    assert all(spectral.morse_lower_bound_upstairs(reports[:K]) <= spectral.morse_lower_bound_upstairs(reports[:K + 1])
               for K in range(len(reports)))


def test_lower_bound_all_nonnegative():
    reports = [spectral.PhiKReport.from_parts(k, k, 1.0, 0.5) for k in range(1, 5)]
    assert spectral.morse_lower_bound_upstairs(reports) == 0


def test_monte_carlo_rough_agreement(eigpair100, positive100, params100):
    # 256x128 carries a few percent of quadrature error near the peak; the
    # acceptance suite repeats this at 512x256 against the 5% bound
    _, g1 = eigpair100
    q = spectral.quadratic_form_phi_k(g1, positive100.field, params100, 1).Q_value
    est, err = spectral.monte_carlo_q(g1, positive100.field, params100, 1, samples=50_000, seed=1)
    assert err < 0.02 * abs(q)
    assert abs(est - q) / abs(q) < 0.15


def test_monte_carlo_only_m2():
    P = ProblemParams(3, 1.0, 2.0, 2.0, 10.0)
    grid = Grid.for_params(P, 32, 16)
    with pytest.raises(ValueError):
        spectral.monte_carlo_q(zero_field(grid), zero_field(grid), P)
