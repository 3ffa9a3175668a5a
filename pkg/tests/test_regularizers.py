"""Regularizer values, gradients, plausible-report sets."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from persofed.core import finite_difference_gradient, substream
from persofed.regularizers import (
    PLAUSIBILITY_TOL,
    Regularizer,
    grad_set_contains,
    project_to_grad_set,
    reg_grad_rho,
    reg_grad_theta,
    reg_hessian_theta,
    reg_value,
)

L2SQ = Regularizer(kind="l2_squared", lam=1.5)
L2 = Regularizer(kind="l2", lam=1.5)
SMOOTH = Regularizer(kind="smooth_l2", lam=1.5)


class TestHandValues:
    def test_values_on_a_3_4_5_triangle(self):
        rho = np.array([3.0, 0.0])
        theta = np.array([0.0, 4.0])  # ||delta|| = 5
        assert reg_value(L2SQ, rho, theta) == pytest.approx(1.5 * 25.0)
        assert reg_value(L2, rho, theta) == pytest.approx(1.5 * 5.0)
        assert reg_value(SMOOTH, rho, theta) == pytest.approx(1.5 * math.sqrt(26.0))

    def test_grads_on_a_3_4_5_triangle(self):
        rho = np.array([3.0, 0.0])
        theta = np.array([0.0, 4.0])
        delta = rho - theta
        np.testing.assert_allclose(reg_grad_rho(L2SQ, rho, theta), 3.0 * delta)
        np.testing.assert_allclose(reg_grad_rho(L2, rho, theta), 1.5 * delta / 5.0)
        np.testing.assert_allclose(
            reg_grad_rho(SMOOTH, rho, theta), 1.5 * delta / math.sqrt(26.0)
        )

    def test_l2_subgradient_at_kink_is_zero(self):
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(reg_grad_rho(L2, x, x), [0.0, 0.0])

    def test_grad_theta_is_negated_grad_rho(self):
        rho, theta = np.array([1.0, -2.0]), np.array([0.5, 0.5])
        for reg in (L2SQ, L2, SMOOTH):
            np.testing.assert_array_equal(
                reg_grad_theta(reg, rho, theta), -reg_grad_rho(reg, rho, theta)
            )

    def test_constructor_validation(self):
        with pytest.raises(ValueError, match="kind"):
            Regularizer(kind="l1", lam=1.0)
        with pytest.raises(ValueError, match="lam"):
            Regularizer(kind="l2", lam=0.0)


vec2 = st.lists(st.floats(min_value=-5.0, max_value=5.0), min_size=2, max_size=2).map(np.array)


class TestGradientProperties:
    @given(vec2, vec2)
    @settings(max_examples=60, deadline=None)
    def test_smooth_grads_match_fd(self, rho, theta):
        for reg in (L2SQ, SMOOTH):
            g = reg_grad_rho(reg, rho, theta)
            fd = finite_difference_gradient(lambda r: reg_value(reg, r, theta), rho)
            np.testing.assert_allclose(g, fd, atol=5e-6)

    @given(vec2, vec2)
    @settings(max_examples=60, deadline=None)
    def test_l2_grad_matches_fd_away_from_kink(self, rho, theta):
        if np.linalg.norm(rho - theta) < 0.1:
            theta = theta + 0.5
        g = reg_grad_rho(L2, rho, theta)
        fd = finite_difference_gradient(lambda r: reg_value(L2, r, theta), rho)
        np.testing.assert_allclose(g, fd, atol=5e-6)

    @given(vec2, vec2)
    @settings(max_examples=60, deadline=None)
    def test_every_honest_report_is_plausible(self, rho, theta):
        for reg in (L2SQ, L2, SMOOTH):
            assert grad_set_contains(reg, reg_grad_rho(reg, rho, theta))

    @given(vec2, vec2)
    @settings(max_examples=60, deadline=None)
    def test_bounded_kinds_never_exceed_lam(self, rho, theta):
        for reg in (L2, SMOOTH):
            g = reg_grad_rho(reg, rho, theta)
            assert np.linalg.norm(g) <= reg.lam * (1.0 + 1e-12)

    def test_smooth_l2_hessian_matches_fd(self):
        rng = substream(4, "reg-hess")
        rho, theta = rng.standard_normal(3), rng.standard_normal(3)
        H = reg_hessian_theta(SMOOTH, rho, theta)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-6
            col = (
                reg_grad_theta(SMOOTH, rho, theta + e) - reg_grad_theta(SMOOTH, rho, theta - e)
            ) / 2e-6
            np.testing.assert_allclose(H[:, i], col, atol=1e-8)

    def test_l2_has_no_hessian(self):
        with pytest.raises(ValueError, match="nonsmooth"):
            reg_hessian_theta(L2, np.zeros(2), np.zeros(2))


class TestPlausibleSet:
    def test_l2_squared_accepts_anything_finite(self):
        assert grad_set_contains(L2SQ, np.array([1e12, -1e12]))
        assert not grad_set_contains(L2SQ, np.array([np.nan, 0.0]))
        assert not grad_set_contains(L2, np.array([np.inf, 0.0]))

    def test_ball_boundary_accepted_with_tolerance(self):
        g = np.array([L2.lam, 0.0])
        assert grad_set_contains(L2, g)
        assert grad_set_contains(L2, g * (1.0 + PLAUSIBILITY_TOL / 2))
        assert not grad_set_contains(L2, g * 1.001)

    def test_projection_is_ball_clip(self):
        g = np.array([3.0, 4.0])  # norm 5 > lam
        p = project_to_grad_set(L2, g)
        np.testing.assert_allclose(p, g * (1.5 / 5.0))
        assert np.linalg.norm(p) == pytest.approx(L2.lam)

    def test_projection_identity_inside(self):
        g = np.array([0.1, -0.2])
        np.testing.assert_array_equal(project_to_grad_set(L2, g), g)
        np.testing.assert_array_equal(project_to_grad_set(L2SQ, np.array([99.0])), [99.0])

    @given(vec2)
    @settings(max_examples=60, deadline=None)
    def test_projection_idempotent_and_plausible(self, g):
        for reg in (L2, SMOOTH):
            p = project_to_grad_set(reg, g)
            assert grad_set_contains(reg, p)
            np.testing.assert_allclose(project_to_grad_set(reg, p), p, atol=1e-15)
