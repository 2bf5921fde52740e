from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magschrod.grid import SpaceTimeGrid, gradient, laplacian
from magschrod.weights import (
    PseudoconvexityError,
    WeightError,
    build_default_weight,
    certify_pseudoconvexity,
    eval_alpha_phi,
    exp_s_alpha,
    observation_boundary,
    weight_from_beta,
)


@pytest.fixture
def w1():
    g = SpaceTimeGrid.unit(1, 11, 21, 1.5)
    return build_default_weight(g, [-1.0], lam=1.0, s=2.0)


def test_default_weight_oracle(w1):
    assert w1.beta[0] == pytest.approx(1.0)
    assert w1.beta[-1] == pytest.approx(4.0)
    assert w1.K == pytest.approx(8.0)
    assert w1.c0 == pytest.approx(2.0)
    T = w1.grid.T
    assert w1.l(0.0) == pytest.approx(T**2)
    assert w1.l(T) == 0.0


@pytest.mark.parametrize("x0", [[0.5], [0.0], [1.0]])
def test_x0_in_closed_domain_rejected(x0):
    g = SpaceTimeGrid.unit(1, 11, 11, 1.0)
    with pytest.raises(WeightError, match="closed domain"):
        build_default_weight(g, x0)


def test_x0_inside_square_rejected():
    g = SpaceTimeGrid.unit(2, 11, 11, 1.0)
    with pytest.raises(WeightError):
        build_default_weight(g, [0.5, 0.5])


def test_alpha_negative_and_bounded_by_initial_slice(w1):
    f = w1.fields()
    live = f.alpha[:-1]
    assert np.all(live < 0)
    assert np.all(live <= f.alpha[0][None] + 1e-12)
    assert np.all(np.diff(f.alpha[:-1], axis=0) <= 0)
    assert np.all(np.isneginf(f.alpha[-1]))
    assert np.all(f.exp_sa[-1] == 0)


def test_exp_weight_vanishes_monotonically_towards_T():
    g = SpaceTimeGrid.unit(1, 11, 11, 1.0)
    w = build_default_weight(g, [-0.2], lam=1.0, s=1.0)
    t = np.linspace(0, 1.0, 200)
    vals = exp_s_alpha(w, np.full((t.size, 1), 0.5), t)
    assert np.all(np.diff(vals) <= 0)
    assert vals[-1] == 0.0
    alpha, phi = eval_alpha_phi(w, [0.5], 1.0)
    assert alpha == -np.inf and phi == np.inf


def test_initial_weight_lower_bound(w1):
    s = 0.01
    lower = np.exp(s * (1 - np.exp(w1.lam * w1.K)) / w1.l(0.0) ** 2)
    assert lower > 0
    assert np.all(np.exp(s * w1.alpha_at(0)) >= lower)


def test_pointwise_and_grid_evaluators_agree(w1):
    f = w1.fields()
    alpha, phi = eval_alpha_phi(w1, w1.grid.coords[None], w1.grid.t[:-1, None])
    np.testing.assert_allclose(alpha, f.alpha[:-1], rtol=1e-13)
    np.testing.assert_allclose(phi, f.phi[:-1], rtol=1e-13)


def test_analytic_derivatives_match_differences():
    errs = []
    for n in (41, 81):
        g = SpaceTimeGrid.unit(2, n, 5, 2.0)
        w = build_default_weight(g, [-0.3, 0.4], lam=1.0)
        f = w.fields()
        k = 1
        g_err = np.max(np.abs(gradient(g, f.alpha[k]) - f.grad_alpha[k]))
        l_err = np.max(np.abs(laplacian(g, f.alpha[k]) - f.lap_alpha[k])[g.interior_mask])
        errs.append((g_err, l_err))
    for coarse, fine in zip(*errs):
        assert coarse / fine > 3.5


def test_time_derivative_matches_differences():
    g = SpaceTimeGrid.unit(1, 11, 401, 2.0)
    w = build_default_weight(g, [-0.3])
    f = w.fields()
    num = np.gradient(f.alpha[:200], g.tau, axis=0)
    np.testing.assert_allclose(num[1:-1], f.dt_alpha[1:199], rtol=1e-3)


def test_pseudoconvexity_of_default_weight():
    g = SpaceTimeGrid.unit(2, 11, 5, 1.0)
    w = build_default_weight(g, [-1.0, 0.5], lam=1.0)
    cert = certify_pseudoconvexity(w)
    assert cert.epsilon >= 2.0 - 1e-12
    assert cert.sampled_directions == 16
    w0 = replace(w, lam=0.0)
    assert certify_pseudoconvexity(w0).epsilon == pytest.approx(2.0, abs=1e-14)


def test_pseudoconvexity_in_1d_uses_both_signs(w1):
    cert = certify_pseudoconvexity(w1)
    assert cert.sampled_directions == 2
    assert cert.epsilon >= 2.0


def test_affine_beta_refused_with_offending_direction():
    g = SpaceTimeGrid.unit(2, 11, 5, 1.0)
    x, y = g.coords[..., 0], g.coords[..., 1]
    w = weight_from_beta(g, x + y + 3.0)
    with pytest.raises(PseudoconvexityError) as info:
        certify_pseudoconvexity(w)
    xi = info.value.direction
    assert abs(xi @ np.array([1.0, 1.0])) < 1e-12


def test_too_few_directions_rejected():
    g = SpaceTimeGrid.unit(2, 11, 5, 1.0)
    w = build_default_weight(g, [-1.0, 0.5])
    with pytest.raises(ValueError):
        certify_pseudoconvexity(w, n_directions=8)


def test_observation_boundary_1d():
    g = SpaceTimeGrid.unit(1, 11, 5, 1.0)
    gamma = observation_boundary(g, build_default_weight(g, [-1.0]))
    np.testing.assert_array_equal(np.flatnonzero(gamma.mask), [10])


def test_observation_boundary_2d_faces():
    g = SpaceTimeGrid.unit(2, 11, 5, 1.0)
    gamma = observation_boundary(g, build_default_weight(g, [-1.0, 0.5]))
    assert gamma.face_masks["right"].all()
    assert gamma.face_masks["top"].all()
    assert gamma.face_masks["bottom"].all()
    assert not gamma.face_masks["left"].any()


def test_tangency_nodes_are_included():
    # x0 level with the bottom face: grad beta . nu = 0 there
    g = SpaceTimeGrid.unit(2, 11, 5, 1.0)
    gamma = observation_boundary(g, build_default_weight(g, [-1.0, 0.0]))
    assert gamma.face_masks["bottom"].all()


def test_custom_l_validation():
    g = SpaceTimeGrid.unit(1, 11, 11, 1.0)
    beta = (g.axes[0] + 1) ** 2
    with pytest.raises(WeightError):
        weight_from_beta(g, beta, l=lambda t: 1.0 + 0 * t, dl=lambda t: 0 * t)
    w = weight_from_beta(g, beta, l=lambda t: 1 - t, dl=lambda t: -1 + 0 * t)
    assert w.K == pytest.approx(8.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3.0, -0.05), st.floats(0.1, 3.0), st.floats(0.1, 50.0))
def test_exp_weight_monotone_in_s(x0, lam, s):
    g = SpaceTimeGrid.unit(1, 9, 9, 1.0)
    w = build_default_weight(g, [x0], lam=lam)
    lo = w.fields(s).exp_sa
    hi = w.fields(2 * s).exp_sa
    assert np.all(np.isfinite(lo))
    assert np.all(hi <= lo)
