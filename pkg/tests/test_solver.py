import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magschrod.grid import SpaceTimeGrid, l2_norm, l2_norm_spacetime, laplacian
from magschrod.solver import (
    CompatibilityError,
    ElectromagneticPotential,
    apply_hamiltonian,
    compatibility_residual_k1,
    dirichlet_data_from_reference,
    magnetic_laplacian,
    solve_forward,
)
from magschrod.stability import make_case2_pair


def eigenmode_error(n):
    g = SpaceTimeGrid.unit(1, n, n, 1.0)
    x = g.axes[0]
    sol = solve_forward(ElectromagneticPotential.zero(g), np.sin(np.pi * x))
    exact = np.sin(np.pi * x)[None] * np.exp(-1j * np.pi**2 * g.t)[:, None]
    return l2_norm_spacetime(g, sol.u - exact), l2_norm_spacetime(g, sol.ut + 1j * np.pi**2 * exact)


def test_free_eigenmode_second_order():
    (e1, d1), (e2, d2) = eigenmode_error(41), eigenmode_error(81)
    assert 3.4 <= e1 / e2 <= 4.6
    assert 3.4 <= d1 / d2 <= 4.6


def test_zero_data_gives_zero_solution():
    g = SpaceTimeGrid.unit(2, 11, 7, 1.0)
    pot, _ = _random_potential(g, np.random.default_rng(0))
    sol = solve_forward(pot, np.zeros(g.shape))
    assert np.all(sol.u == 0) and np.all(sol.ut == 0)


def _random_potential(g, rng, complex_rho=False):
    x = g.coords
    rho = np.cos(x @ rng.normal(size=g.dim))
    if complex_rho:
        rho = rho + 0.3j * np.sin(x[..., 0])
    A = np.stack([np.sin(x @ rng.normal(size=g.dim)) for _ in range(g.dim)], axis=-1)
    return ElectromagneticPotential(g, rho, A), x


@pytest.mark.parametrize("dim, n", [(1, 41), (2, 15)])
def test_unitary_for_real_potentials(dim, n):
    g = SpaceTimeGrid.unit(dim, n, 30, 1.0)
    pot, x = _random_potential(g, np.random.default_rng(1))
    bump = np.prod(np.sin(np.pi * x), axis=-1)
    u0 = bump * np.exp(2j * x[..., 0])
    norms = solve_forward(pot, u0).norms()
    assert np.max(np.abs(np.diff(norms)) / norms[:-1]) <= 1e-10


def test_complex_rho_norm_bounded():
    g = SpaceTimeGrid.unit(1, 41, 41, 1.0)
    pot, x = _random_potential(g, np.random.default_rng(2), complex_rho=True)
    norms = solve_forward(pot, np.sin(np.pi * x[..., 0])).norms()
    growth = np.exp(np.max(np.abs(pot.rho.imag)) * g.t)
    assert np.all(norms <= norms[0] * growth * (1 + g.tau**2))


def test_magnetic_laplacian_reduces_to_laplacian():
    g = SpaceTimeGrid.unit(2, 11, 5, 1.0)
    f = np.exp(1j * g.coords[..., 0]) * g.coords[..., 1] ** 2
    np.testing.assert_allclose(
        magnetic_laplacian(ElectromagneticPotential.zero(g), f), laplacian(g, f), atol=1e-12
    )


def test_plane_wave_with_constant_field():
    a, k = np.array([0.7, -0.4]), np.array([2.0, 1.0])
    errs = []
    for n in (21, 41):
        g = SpaceTimeGrid.unit(2, n, 5, 1.0)
        pot = ElectromagneticPotential(g, 0.0, np.broadcast_to(a, g.shape + (2,)))
        f = np.exp(1j * g.coords @ k)
        err = magnetic_laplacian(pot, f) + np.sum((k + a) ** 2) * f
        errs.append(np.max(np.abs(err[g.interior_mask])))
    assert errs[0] / errs[1] > 3.5


def test_gauge_identity_for_magnetic_laplacian():
    errs = []
    for n in (41, 81):
        g = SpaceTimeGrid.unit(1, n, 5, 1.0)
        x = g.axes[0]
        psi = 0.3 * np.sin(np.pi * x)
        A = (0.3 * np.pi * np.cos(np.pi * x))[:, None]
        pot = ElectromagneticPotential(g, 0.0, A, -0.3 * np.pi**2 * np.sin(np.pi * x))
        f = np.cos(2 * x) + 1j * x**2
        lhs = magnetic_laplacian(pot, np.exp(-1j * psi) * f)
        rhs = np.exp(-1j * psi) * laplacian(g, f)
        errs.append(l2_norm(g, (lhs - rhs) * g.interior_mask))
    assert errs[0] / errs[1] > 3.5


def test_assembled_hamiltonian_matches_pointwise_formula():
    errs = []
    for n in (21, 41):
        g = SpaceTimeGrid.unit(2, n, 5, 1.0)
        x, y = g.coords[..., 0], g.coords[..., 1]
        A = np.stack([np.sin(x + 2 * y), np.cos(x * y)], axis=-1)
        div_A = np.cos(x + 2 * y) - x * np.sin(x * y)
        pot = ElectromagneticPotential(g, 1 + 0.5j * x, A, div_A)
        f = np.exp(1j * x) * (1 + y**2)
        diff = apply_hamiltonian(pot, f) - (-magnetic_laplacian(pot, f) + pot.rho * f)
        errs.append(np.max(np.abs(diff[g.interior_mask])))
    assert errs[0] / errs[1] > 3.5


def test_time_derivative_consistent_with_crank_nicolson_steps():
    # CN makes the centered difference of u equal to a 1-2-1 average of ut
    g = SpaceTimeGrid.unit(1, 41, 81, 0.5)
    pot, x = _random_potential(g, np.random.default_rng(3))
    x = x[..., 0]
    sol = solve_forward(pot, np.sin(np.pi * x) ** 3 * (1 + 1j * x))
    inner = g.interior_mask
    centered = (sol.u[2:] - sol.u[:-2]) / (2 * g.tau)
    averaged = (sol.ut[:-2] + 2 * sol.ut[1:-1] + sol.ut[2:]) / 4
    scale = np.max(np.abs(sol.ut))
    np.testing.assert_allclose(centered[:, inner], averaged[:, inner], atol=1e-10 * scale)


def test_incompatible_data_rejected():
    g = SpaceTimeGrid.unit(1, 11, 5, 1.0)
    pot = ElectromagneticPotential.zero(g)
    u0 = np.ones(g.shape)
    gdata = np.zeros((g.nt, 2))
    with pytest.raises(CompatibilityError):
        solve_forward(pot, u0, gdata)


def test_reference_dirichlet_data():
    g = SpaceTimeGrid.unit(2, 9, 6, 1.0)
    pot = ElectromagneticPotential.zero(g)
    gd = dirichlet_data_from_reference(pot, np.full(g.shape, 2.5), g)
    assert gd.shape == (6, g.boundary_nodes.size)
    np.testing.assert_array_equal(gd, 2.5)
    x1 = g.coords[..., 0]
    gd = dirichlet_data_from_reference(pot, x1, g)
    np.testing.assert_array_equal(gd, np.tile(x1.ravel()[g.boundary_nodes], (6, 1)))


def test_first_order_compatibility_shared_by_admissible_pair():
    g = SpaceTimeGrid.unit(2, 15, 6, 1.0)
    pair = make_case2_pair(g, 0.3)
    u0 = g.coords[..., 0] + 1.0
    gd = dirichlet_data_from_reference(pair.pot1, u0, g)
    r1 = compatibility_residual_k1(pair.pot1, u0, gd)
    r2 = compatibility_residual_k1(pair.pot2, u0, gd)
    assert r1 == pytest.approx(r2, abs=1e-13)


def test_potential_validation():
    g = SpaceTimeGrid.unit(1, 9, 5, 1.0)
    with pytest.raises(ValueError):
        ElectromagneticPotential(g, np.full(g.shape, np.nan))
    with pytest.raises(ValueError):
        ElectromagneticPotential(g, 0.0, np.full(g.shape + (1,), 1j))
    with pytest.raises(ValueError):
        ElectromagneticPotential(g, 5.0, M=1.0)


@settings(max_examples=10, deadline=None)
@given(st.complex_numbers(max_magnitude=3), st.complex_numbers(max_magnitude=3))
def test_solution_map_is_linear(a, b):
    g = SpaceTimeGrid.unit(1, 21, 11, 0.5)
    pot, x = _random_potential(g, np.random.default_rng(4), complex_rho=True)
    x = x[..., 0]
    u0, v0 = 1 + x**2, np.cos(3 * x) + 1j * x
    s1, s2 = solve_forward(pot, u0), solve_forward(pot, v0)
    s = solve_forward(pot, a * u0 + b * v0)
    scale = 1 + abs(a) + abs(b)
    np.testing.assert_allclose(s.u, a * s1.u + b * s2.u, atol=1e-12 * scale)
    np.testing.assert_allclose(s.ut, a * s1.ut + b * s2.ut, atol=1e-10 * scale)
