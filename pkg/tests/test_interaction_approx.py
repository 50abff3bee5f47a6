import numpy as np
import pytest
from hypothesis import given, strategies as st

from crowdshape.dynamics import standard_g1, standard_g2, standard_model
from crowdshape.exceptions import IllConditionedExpansionError, InvalidInputError
from crowdshape.moments import full_index, moment_indices, raw_moments
from crowdshape.interaction_approx import (
    PolyCoefficients,
    coefficient_count,
    eval_polynomial,
    fd_weights,
    position_coupling_term,
    taylor_coefficients,
    velocity_weight_sum,
)

MODEL = standard_model()


def poly_field(coeffs, degree):
    def g(z, zl):
        z = np.asarray(z, dtype=float)
        total = 0.0
        for a, b in moment_indices(degree, include_zero=True):
            total = total + coeffs[full_index(a, b)] * z[..., 0] ** a * z[..., 1] ** b
        return total + 0.0 * np.asarray(zl)[..., 0]

    return g


def test_fd_weights_known():
    np.testing.assert_allclose(fd_weights(1, 1), [-0.5, 0, 0.5], atol=1e-15)
    np.testing.assert_allclose(fd_weights(2, 1), [1, -2, 1], atol=1e-14)
    with pytest.raises(InvalidInputError):
        fd_weights(3, 1)


def test_constant_field():
    c = taylor_coefficients(lambda z, zl: 4.2 + 0 * z[..., 0] + 0 * zl[..., 0], (10, 0), 3)
    assert c[0] == pytest.approx(4.2, abs=1e-9)
    np.testing.assert_allclose(c[1:], 0, atol=1e-9)


def test_linear_field():
    c = taylor_coefficients(lambda z, zl: 3 * z[..., 0] + 2 * z[..., 1] + 0 * zl[..., 0], (10, 0), 2)
    np.testing.assert_allclose(c, [0, 3, 2, 0, 0, 0], atol=1e-7)


def test_standard_g1_reconstruction():
    c = taylor_coefficients(MODEL.g1_field, (30, 0), 4)
    direct = standard_g1(np.linalg.norm(np.array([2, 1]) - [30, 0]))
    assert eval_polynomial(c, (2, 1)) == pytest.approx(direct, rel=0.01)


def test_standard_g2_reconstruction():
    c = taylor_coefficients(MODEL.g2_field, (20, 20), 4)
    direct = standard_g2(np.linalg.norm(np.array([1, -1]) - [20, 20]))
    assert eval_polynomial(c, (1, -1)) == pytest.approx(direct, rel=0.01)


def test_eval_at_origin():
    c = np.arange(1.0, 7.0)
    assert eval_polynomial(c, (0, 0)) == 1.0


def test_near_leader_raises():
    with pytest.raises(IllConditionedExpansionError):
        taylor_coefficients(MODEL.g1_field, (0.5, 0), 4)


def test_nonfinite_stencil_raises():
    with pytest.raises(IllConditionedExpansionError), np.errstate(divide="ignore"):
        taylor_coefficients(lambda z, zl: 1 / (z[..., 0] + 0 * zl[..., 0]), (10, 0), 2)


def test_bad_degree_and_step():
    with pytest.raises(InvalidInputError):
        taylor_coefficients(MODEL.g1_field, (10, 0), -1)
    with pytest.raises(InvalidInputError):
        taylor_coefficients(MODEL.g1_field, (10, 0), 2, h=0)


def test_poly_coefficients_validation():
    with pytest.raises(InvalidInputError):
        PolyCoefficients(2, np.zeros(5), np.zeros(6), np.zeros(2))
    with pytest.raises(InvalidInputError):
        PolyCoefficients(1, [0, np.nan, 0], np.zeros(3), np.zeros(2))


@pytest.mark.parametrize("degree", range(0, 5))
def test_polynomial_exactness(degree):
    g = np.random.default_rng(degree)
    for _ in range(10):
        coeffs = g.uniform(-3, 3, coefficient_count(degree))
        got = taylor_coefficients(poly_field(coeffs, degree), (25, -5), degree)
        np.testing.assert_allclose(got, coeffs, atol=1e-7)
        z = g.uniform(-4, 4, (5, 2))
        np.testing.assert_allclose(eval_polynomial(got, z), poly_field(coeffs, degree)(z, np.zeros(2)), atol=1e-8 * 4**degree * 10)


def test_coupling_trivial_cases():
    mom = raw_moments([[0, 0]], 3)
    np.testing.assert_array_equal(position_coupling_term(np.zeros(6), mom, (4, 5)), [0, 0])
    alpha = np.zeros(6)
    alpha[0] = 1
    np.testing.assert_array_equal(position_coupling_term(alpha, mom, (4, 5)), [4, 5])
    beta = np.zeros(6)
    beta[0] = 2.5
    assert velocity_weight_sum(beta, mom) == 2.5
    assert velocity_weight_sum(np.zeros(6), mom) == 0


def test_coupling_needs_enough_moments():
    with pytest.raises(InvalidInputError):
        position_coupling_term(np.ones(6), raw_moments([[1, 1]], 2), (3, 3))
    with pytest.raises(InvalidInputError):
        velocity_weight_sum(np.ones(6), raw_moments([[1, 1]], 1))


def _brute(coeffs, pts, zl):
    polys = np.array([eval_polynomial(coeffs, p) for p in pts])
    return (polys[:, None] * (np.asarray(zl) - pts)).mean(axis=0), polys.mean()


@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(0, 4))
def test_moment_sum_identities(seed, n, degree):
    g = np.random.default_rng(seed)
    pts = g.uniform(-5, 5, (n, 2))
    zl = g.uniform(-30, 30, 2)
    coeffs = g.normal(size=coefficient_count(degree))
    mom = raw_moments(pts, degree + 1)
    pos, vel = _brute(coeffs, pts, zl)
    scale = 1 + np.abs(pos).max() + 30 * 5 ** (degree + 1)
    np.testing.assert_allclose(position_coupling_term(coeffs, mom, zl), pos, atol=1e-9 * scale)
    assert velocity_weight_sum(coeffs, mom) == pytest.approx(vel, abs=1e-9 * (1 + 5**degree))


def test_gain_coupling_oracles():
    g = np.random.default_rng(4)
    pts = g.uniform(-3, 3, (10, 2))
    a = taylor_coefficients(MODEL.g1_field, (30, 0), 4)
    b = taylor_coefficients(MODEL.g2_field, (30, 0), 4)
    mom = raw_moments(pts, 5)
    pos, _ = _brute(a, pts, (30, 0))
    _, vel = _brute(b, pts, (30, 0))
    np.testing.assert_allclose(position_coupling_term(a, mom, (30, 0)), pos, rtol=1e-9, atol=1e-9)
    assert velocity_weight_sum(b, mom) == pytest.approx(vel, rel=1e-9)


def test_batched_coupling_matches_loop():
    g = np.random.default_rng(9)
    coeffs = g.normal(size=(3, 4, 6))
    moms = np.stack([raw_moments(g.uniform(-2, 2, (7, 2)), 3).values for _ in range(3)])
    zl = g.normal(size=(3, 4, 2))
    got = position_coupling_term(coeffs, moms[:, None, :], zl)
    for i in range(3):
        for j in range(4):
            np.testing.assert_allclose(got[i, j], position_coupling_term(coeffs[i, j], moms[i], zl[i, j]))


def test_approximation_quality_monitor():
    # monitored: degree-4 expansion of the standard gains on the disk of radius 5 for leaders at distance >= 15
    g = np.random.default_rng(0)
    worst = 0.0
    for ang in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        zl = 15 * np.array([np.cos(ang), np.sin(ang)])
        c = taylor_coefficients(MODEL.g2_field, zl, 4)
        r = 5 * np.sqrt(g.random(50))
        th = g.random(50) * 2 * np.pi
        z = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        exact = standard_g2(np.linalg.norm(z - zl, axis=1))
        worst = max(worst, np.max(np.abs(eval_polynomial(c, z) - exact) / np.abs(exact)))
    assert np.isfinite(worst)
