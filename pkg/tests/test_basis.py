import numpy as np
import pytest
from scipy.integrate import quad

from auctionqr.basis import (Kernel, gauss_legendre, get_kernel,
                             kernel_constants, poly_matrix, poly_vector,
                             quad_grid, regressor_vector)
from auctionqr.errors import InputError


class TestKernels:
    @pytest.mark.parametrize("name", ["epanechnikov", "triweight"])
    def test_integrates_to_one(self, name):
        ker = get_kernel(name)
        t, w = gauss_legendre(-1.0, 1.0, 64)
        assert abs(np.sum(w * ker.pdf(t)) - 1.0) < 1e-10

    @pytest.mark.parametrize("name", ["epanechnikov", "triweight"])
    def test_symmetric_nonnegative_vanishing(self, name):
        ker = get_kernel(name)
        t = np.linspace(-1, 1, 201)
        vals = ker.pdf(t)
        assert np.allclose(vals, vals[::-1])
        assert np.all(vals >= 0)
        assert ker.pdf(1.0) == 0.0 and ker.pdf(-1.0) == 0.0
        assert ker.pdf(1.5) == 0.0

    def test_epanechnikov_second_moment(self):
        ker = get_kernel("epanechnikov")
        t, w = gauss_legendre(-1.0, 1.0, 64)
        assert abs(np.sum(w * t * t * ker.pdf(t)) - 0.2) < 1e-10

    @pytest.mark.parametrize("name", ["epanechnikov", "triweight"])
    def test_cdf_matches_quadrature(self, name):
        ker = get_kernel(name)
        for x in (-0.7, -0.2, 0.0, 0.4, 0.95):
            num, _ = quad(lambda u: float(ker.pdf(u)), -1.0, x)
            assert abs(ker.cdf(x) - num) < 1e-9
        assert ker.cdf(-2.0) == 0.0 and ker.cdf(2.0) == 1.0

    def test_unknown_kernel(self):
        with pytest.raises(InputError):
            get_kernel("gaussian")


class TestPolyVectors:
    def test_t_zero(self):
        assert np.allclose(poly_vector(0.0, 3), [1, 0, 0, 0, 0])

    def test_factorial_weights(self):
        assert np.allclose(poly_vector(1.0, 1), [1, 1, 0.5])
        assert np.allclose(poly_vector(-2.0, 2), [1, -2, 2, -4 / 3])

    def test_negative_order_rejected(self):
        with pytest.raises(InputError):
            poly_vector(1.0, -1)

    def test_poly_matrix_rows(self):
        t = np.array([-2.0, 0.0, 1.0])
        mat = poly_matrix(t, 2)
        for i, ti in enumerate(t):
            assert np.allclose(mat[i], poly_vector(ti, 2))


class TestRegressorVector:
    def test_no_covariates(self):
        assert np.allclose(regressor_vector((), 0.7, 2), poly_vector(0.7, 2))

    def test_kronecker_layout(self):
        assert np.allclose(regressor_vector([2.0], 1.0, 0), [1, 2, 1, 2])

    def test_t_zero_blocks(self):
        v = regressor_vector([3.0, 4.0], 0.0, 1)
        assert np.allclose(v, [1, 3, 4, 0, 0, 0, 0, 0, 0])


class TestQuadGrid:
    def test_interior_window_integrates_kernel(self):
        ker = get_kernel("epanechnikov")
        grid = quad_grid(0.5, 0.3, ker, 32)
        assert grid.lo == -1.0 and grid.hi == 1.0
        assert abs(np.sum(grid.weights * ker.pdf(grid.nodes)) - 1.0) < 1e-8

    def test_left_truncation(self):
        grid = quad_grid(0.0, 0.25, "epanechnikov", 16)
        assert grid.lo == 0.0 and grid.hi == 1.0
        assert np.all(grid.nodes > 0) and np.all(grid.nodes < 1)

    def test_right_truncation(self):
        grid = quad_grid(1.0, 0.3, "epanechnikov", 16)
        assert grid.lo == -1.0 and grid.hi == 0.0

    def test_weights_positive(self):
        grid = quad_grid(0.07, 0.3, "triweight", 32)
        assert np.all(grid.weights > 0)
        assert grid.lo == pytest.approx(-0.07 / 0.3)

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            quad_grid(0.5, 1.0, "epanechnikov")
        with pytest.raises(InputError):
            quad_grid(0.5, 0.3, "epanechnikov", M=4)
        with pytest.raises(InputError):
            quad_grid(1.5, 0.3, "epanechnikov")


class TestKernelConstants:
    def test_omega_symmetric_pd_and_moments(self):
        kc = kernel_constants("epanechnikov", 1, 0.5, 0.3)
        assert np.allclose(kc.omega, kc.omega.T)
        assert np.all(np.linalg.eigvalsh(kc.omega) > 0)
        # pi = [1, t, t^2/2]: omega[1,1] = int t^2 K = 1/5
        assert abs(kc.omega[1, 1] - 0.2) < 1e-10
        assert abs(kc.omega[0, 0] - 1.0) < 1e-10
        # odd moments vanish on the untruncated window
        assert abs(kc.omega[0, 1]) < 1e-12

    def test_omega_constant_on_interior(self):
        kc1 = kernel_constants("epanechnikov", 1, 0.35, 0.3)
        kc2 = kernel_constants("epanechnikov", 1, 0.61, 0.3)
        assert np.allclose(kc1.omega, kc2.omega, atol=1e-12)

    def test_v2_strictly_positive_on_grid(self):
        for alpha in np.linspace(0.0, 1.0, 21):
            kc = kernel_constants("epanechnikov", 1, alpha, 0.3)
            assert kc.v2 > 0.0

    def test_truncated_window_changes_constants(self):
        interior = kernel_constants("epanechnikov", 1, 0.5, 0.3)
        boundary = kernel_constants("epanechnikov", 1, 0.0, 0.3)
        assert not np.allclose(interior.omega, boundary.omega)


class TestRegressorTaylorOracle:
    def test_matches_symbolic_polynomial(self):
        # b stacks scaled derivatives of a known polynomial in (alpha, x)
        rng = np.random.default_rng(7)
        s = 1
        coeffs = rng.normal(size=(s + 2, 2))  # poly sum_k (c_k0 + c_k1 x) t^k/k!

        def value(x, t):
            x1 = np.array([1.0, x])
            import math

            return sum((coeffs[k] @ x1) * t ** k / math.factorial(k)
                       for k in range(s + 2))

        b = coeffs.reshape(-1)
        for x in (0.0, 0.5, 2.0):
            for t in (-0.4, 0.0, 0.9):
                pred = regressor_vector([x], t, s) @ b
                assert pred == pytest.approx(value(x, t), abs=1e-12)
