import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from conftest import gauss_legendre_check_loss, kernel_density_reference
from ufm.kernels import (
    SmoothKernel,
    _solve_coeffs,
    gaussian_kernel,
    kernel_cdf,
    kernel_k,
    smoothed_grad,
    smoothed_hess,
    smoothed_value,
)

K2 = gaussian_kernel(2)
K14 = gaussian_kernel(14)


class TestKernelDensity:
    def test_order14_coefficients_match_moment_system(self):
        assert np.allclose(_solve_coeffs(14), K14.poly_coeffs, rtol=1e-9)

    def test_order2_is_standard_normal(self):
        assert kernel_k(K2, 0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi))
        assert kernel_cdf(K2, 1.0) == pytest.approx(norm.cdf(1.0), abs=1e-12)

    @pytest.mark.parametrize("z", [0.3, 1.7, 4.1])
    def test_symmetry(self, z):
        assert kernel_k(K14, z) == kernel_k(K14, -z)

    def test_integrates_to_one(self):
        total, _ = quad(lambda z: kernel_k(K14, z), -np.inf, np.inf, limit=200)
        assert abs(total - 1.0) <= 1e-8

    @pytest.mark.parametrize("j", list(range(1, 14)))
    def test_vanishing_moments(self, j):
        val, _ = quad(lambda z: z**j * kernel_k(K14, z), -np.inf, np.inf, limit=200)
        assert abs(val) <= 1e-6

    def test_moment_14_nonzero(self):
        val, _ = quad(lambda z: z**14 * kernel_k(K14, z), -np.inf, np.inf, limit=200)
        assert abs(val) > 1e-3
        assert val == pytest.approx(K14.moment(14), rel=1e-6)

    def test_matches_reference_evaluation(self, rng):
        z = rng.uniform(-6, 6, size=200)
        assert np.allclose(kernel_k(K14, z), kernel_density_reference(K14.poly_coeffs, z),
                           atol=1e-14)

    def test_bad_construction(self):
        with pytest.raises(ValueError):
            SmoothKernel(3, np.array([1.0]))
        with pytest.raises(ValueError):
            SmoothKernel(4, np.array([1.0]))


class TestKernelCdf:
    def test_half_at_zero_any_order(self):
        for kern in (K2, K14, gaussian_kernel(6)):
            assert kernel_cdf(kern, 0.0) == pytest.approx(0.5, abs=1e-12)

    def test_limits(self):
        assert kernel_cdf(K14, -60.0) == 0.0
        assert kernel_cdf(K14, 60.0) == 1.0

    def test_matches_quadrature_at_07(self):
        ref, _ = quad(lambda z: kernel_k(K14, z), -np.inf, 0.7, limit=200)
        assert abs(kernel_cdf(K14, 0.7) - ref) <= 1e-9

    def test_exact_antiderivative_on_random_intervals(self, rng):
        for _ in range(10):
            a, b = np.sort(rng.uniform(-5, 5, size=2))
            ref, _ = quad(lambda z: kernel_k(K14, z), a, b, limit=200)
            assert abs((kernel_cdf(K14, b) - kernel_cdf(K14, a)) - ref) <= 1e-9


class TestSmoothedLoss:
    def test_grad_at_zero_residual(self):
        for tau in (0.1, 0.5, 0.9):
            assert smoothed_grad(K14, 0.3, tau, 2.0, 2.0) == pytest.approx(0.5 - tau)

    def test_grad_saturates(self):
        assert smoothed_grad(K14, 0.3, 0.3, 1e6, 0.0) == pytest.approx(0.7)
        assert smoothed_grad(K14, 0.3, 0.3, -1e6, 0.0) == pytest.approx(-0.3)

    def test_grad_order2_value(self):
        got = smoothed_grad(K2, 0.5, 0.3, 0.2, 0.0)
        assert got == pytest.approx(norm.cdf(0.4) - 0.3, abs=1e-12)

    def test_hess_examples(self):
        assert smoothed_hess(K2, 1.0, 0.5, 0.0, 0.0) == pytest.approx(
            1.0 / math.sqrt(2 * math.pi))
        k0 = K14.poly_coeffs[0] / math.sqrt(2 * math.pi)
        assert smoothed_hess(K14, 0.5, 0.2, 1.3, 1.3) == pytest.approx(2.0 * k0)

    def test_hess_matches_fd_of_grad(self, rng):
        for _ in range(20):
            h = rng.uniform(0.1, 1.0)
            tau = rng.uniform(0.1, 0.9)
            c, y = rng.uniform(-2, 2, size=2)
            d = 1e-6
            fd = (smoothed_grad(K14, h, tau, c + d, y)
                  - smoothed_grad(K14, h, tau, c - d, y)) / (2 * d)
            hess = smoothed_hess(K14, h, tau, c, y)
            assert fd == pytest.approx(hess, rel=1e-6, abs=1e-6)

    def test_grad_matches_fd_of_value(self, rng):
        bad = 0
        for _ in range(100):
            kern = K2 if rng.uniform() < 0.5 else K14
            h = rng.uniform(0.05, 1.0)
            tau = rng.uniform(0.05, 0.95)
            c, y = rng.uniform(-3, 3, size=2)
            d = 1e-6
            fd = (smoothed_value(kern, h, tau, c + d, y)
                  - smoothed_value(kern, h, tau, c - d, y)) / (2 * d)
            g = smoothed_grad(kern, h, tau, c, y)
            if abs(fd - g) > 1e-5 * max(1.0, abs(g)):
                bad += 1
        assert bad == 0

    def test_check_loss_limit(self):
        # rho_{0.5}(2) = 1; smoothing bias vanishes at rate h^order
        assert smoothed_value(K14, 0.3, 0.5, 0.0, 2.0) == pytest.approx(1.0, abs=1e-6)
        assert smoothed_value(K2, 1e-4, 0.25, 1.0, 0.0) == pytest.approx(0.75, abs=1e-3)

    def test_value_matches_independent_quadrature(self, rng):
        c = rng.uniform(-3, 3, size=64)
        y = rng.uniform(-3, 3, size=64)
        for kern, h, tau in ((K2, 0.4, 0.3), (K14, 0.7, 0.8)):
            ours = smoothed_value(kern, h, tau, c, y)
            ref = gauss_legendre_check_loss(kern.poly_coeffs, h, tau, c, y)
            assert np.allclose(ours, ref, atol=1e-10)

    def test_value_minimum_sits_at_grad_root(self):
        y, tau, h = 0.3, 0.7, 0.5
        grid = np.linspace(-3, 3, 6001)
        vals = smoothed_value(K2, h, tau, grid, y)
        c_star = grid[np.argmin(vals)]
        grads = smoothed_grad(K2, h, tau, grid, y)
        root = grid[np.argmin(np.abs(grads))]
        assert abs(c_star - root) <= 2 * (grid[1] - grid[0])
