import numpy as np
import pytest

from drgcf.dro import worst_case_distribution
from drgcf.oracle import (
    brute_force_worst_case,
    finite_difference_gradient,
    lagrange_alpha_for_eta,
)


def _kl(p, q):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


class TestBruteForce:
    def test_zero_radius_returns_base(self):
        base = np.array([0.2, 0.3, 0.5])
        g = np.array([1.0, -2.0, 0.5])
        p, obj = brute_force_worst_case(base, g, 0.0)
        np.testing.assert_array_equal(p, base)
        assert obj == pytest.approx(float(base @ g))

    def test_constant_affinities(self):
        base = np.ones(4) / 4
        g = np.full(4, 1.5)
        _, obj = brute_force_worst_case(base, g, 0.3, samples=2000,
                                        rng=np.random.default_rng(0))
        assert obj == pytest.approx(1.5, abs=1e-9)

    def test_three_point_cross_check(self):
        """The closed-form tilt attains the same objective the direct search
        finds at the radius the tilt realizes."""
        base = np.ones(3) / 3
        g = np.array([0.0, 1.0, 2.0])
        p_star = worst_case_distribution(base, g, alpha=1.0)
        eta = _kl(p_star, base)
        _, obj = brute_force_worst_case(base, g, eta, samples=10000,
                                        rng=np.random.default_rng(7))
        assert abs(float(p_star @ g) - obj) <= 1e-6

    def test_search_stays_feasible(self):
        rng = np.random.default_rng(1)
        base = rng.dirichlet(np.ones(5))
        g = rng.normal(size=5)
        eta = 0.2
        p, _ = brute_force_worst_case(base, g, eta, samples=3000, rng=rng)
        assert _kl(p, base) <= eta + 1e-9
        assert abs(p.sum() - 1.0) < 1e-9

    def test_closed_form_never_beaten(self):
        """Executable optimality of the exponential tilt on random instances."""
        rng = np.random.default_rng(2)
        done = 0
        while done < 25:
            n = int(rng.integers(2, 7))
            base = rng.dirichlet(np.ones(n) * 2)
            g = rng.normal(size=n)
            if np.ptp(g) < 1e-6:
                continue
            alpha = float(rng.uniform(0.1, 3.0))
            p_star = worst_case_distribution(base, g, alpha)
            eta = _kl(p_star, base)
            if eta < 1e-9:
                continue
            _, obj = brute_force_worst_case(base, g, eta, samples=4000, rng=rng)
            assert float(p_star @ g) >= obj - 1e-6
            done += 1

    def test_support_cap(self):
        with pytest.raises(ValueError):
            brute_force_worst_case(np.ones(9) / 9, np.zeros(9), 0.1)


class TestLagrangeAlphaForEta:
    def test_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            base = rng.dirichlet(np.ones(n) * 2)
            g = rng.normal(size=n)
            if np.ptp(g) < 1e-4:
                continue
            alpha = float(rng.uniform(0.1, 5.0))
            p = worst_case_distribution(base, g, alpha)
            eta = _kl(p, base)
            if eta < 1e-10:
                continue
            back = lagrange_alpha_for_eta(base, g, eta)
            assert back == pytest.approx(alpha, abs=1e-8)

    def test_small_eta_needs_large_alpha(self):
        base = np.ones(3) / 3
        g = np.array([0.0, 1.0, 2.0])
        a1 = lagrange_alpha_for_eta(base, g, 1e-3)
        a2 = lagrange_alpha_for_eta(base, g, 1e-6)
        assert a2 > a1 > 1.0

    def test_constant_affinities_unreachable(self):
        with pytest.raises(ValueError):
            lagrange_alpha_for_eta(np.ones(3) / 3, np.full(3, 2.0), 0.1)

    def test_eta_out_of_range(self):
        base = np.ones(2) / 2
        g = np.array([0.0, 1.0])
        # max achievable KL is -log(0.5) ~ 0.693
        with pytest.raises(ValueError):
            lagrange_alpha_for_eta(base, g, 5.0)
        with pytest.raises(ValueError):
            lagrange_alpha_for_eta(base, g, 0.0)


class TestFiniteDifferences:
    def test_quadratic_exact(self):
        A = np.diag([1.0, 2.0, 3.0])

        def f(x):
            return float(x @ A @ x)

        x0 = np.array([1.0, -2.0, 0.5])
        grad = finite_difference_gradient(f, x0.copy(), step=1e-5)
        np.testing.assert_allclose(grad, 2 * A @ x0, atol=1e-8)

    def test_zero_functional(self):
        grad = finite_difference_gradient(lambda x: 0.0, np.ones((2, 3)), step=1e-4)
        np.testing.assert_array_equal(grad, 0.0)

    def test_matrix_shaped_params(self):
        def f(m):
            return float(np.sum(m**3))

        M = np.random.default_rng(4).normal(size=(3, 2))
        grad = finite_difference_gradient(f, M.copy(), step=1e-5)
        np.testing.assert_allclose(grad, 3 * M**2, atol=1e-7)

    def test_step_validation(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda x: 0.0, np.ones(2), step=0.0)
