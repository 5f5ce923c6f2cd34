import math

import numpy as np
import pytest

from msheston.errors import NotCentered
from msheston.group_params import (
    FullModelParams,
    compute_group_params,
    gaussian_average,
    poisson_solve_derivative,
    volatility_factor,
)
from msheston.kernel import HestonParams
from msheston.quadrature import QuadratureSpec

from .helpers import (
    exp_ou_brackets,
    exp_ou_f_bar,
    exp_ou_phi_prime,
    exp_ou_psi_prime,
    exp_ou_unit_v,
)


def _full_model(**overrides):
    defaults = dict(
        heston=HestonParams(
            kappa=1.0, theta=0.24, sigma=0.39, rho=-0.35, z=0.24, r=0.05
        ),
        epsilon=1e-4,
        m=0.06,
        nu=1.0,
        rho_xy=-0.35,
        rho_yz=0.35,
        y0=0.06,
    )
    defaults.update(overrides)
    return FullModelParams(**defaults)


class TestFullModelValidation:
    def test_rejects_unit_correlation(self):
        with pytest.raises(ValueError):
            _full_model(rho_xy=1.0)

    def test_rejects_indefinite_correlation_triple(self):
        # each pairwise correlation is fine, but jointly they are infeasible
        with pytest.raises(ValueError, match="positive-definite"):
            _full_model(rho_xy=0.9, rho_yz=-0.9,
                        heston=HestonParams(kappa=1.0, theta=0.24, sigma=0.39,
                                            rho=0.9, z=0.24, r=0.05))

    def test_rejects_bad_epsilon_and_nu(self):
        with pytest.raises(ValueError):
            _full_model(epsilon=0.0)
        with pytest.raises(ValueError):
            _full_model(nu=-1.0)

    def test_factor_is_second_moment_normalized(self):
        fm = _full_model(nu=0.7, m=-0.3)
        f = volatility_factor(fm)
        val = gaussian_average(lambda y: f(y) ** 2, fm.m, fm.nu)
        assert val == pytest.approx(1.0, abs=1e-10)


class TestGaussianAverage:
    def test_normalization(self):
        val = gaussian_average(lambda y: np.ones_like(np.asarray(y, float)), 0.06, 1.0)
        assert val == pytest.approx(1.0, abs=1e-12)

    def test_mean(self):
        val = gaussian_average(lambda y: np.asarray(y, float), 0.06, 1.0)
        assert val == pytest.approx(0.06, abs=1e-12)

    def test_second_moment_of_factor(self):
        fm = _full_model()
        f = volatility_factor(fm)
        val = gaussian_average(lambda y: f(y) ** 2, fm.m, fm.nu)
        assert val == pytest.approx(1.0, abs=1e-10)


class TestPoissonSolver:
    def test_zero_source(self):
        cp = poisson_solve_derivative(
            lambda y: np.zeros_like(np.asarray(y, float)), 0.0, 1.0
        )
        ys = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(cp(ys), 0.0, atol=1e-12)

    def test_linear_source_has_constant_minus_one_derivative(self):
        # nu^2 chi'' + (m - y) chi' = y - m  is solved by chi' = -1
        m, nu = 0.06, 0.8
        cp = poisson_solve_derivative(lambda y: np.asarray(y, float) - m, m, nu)
        ys = np.linspace(m - 3 * nu, m + 3 * nu, 9)
        np.testing.assert_allclose(cp(ys), -1.0, atol=1e-9)

    def test_not_centered_rejected(self):
        with pytest.raises(NotCentered):
            poisson_solve_derivative(
                lambda y: np.ones_like(np.asarray(y, float)), 0.0, 1.0
            )

    def test_variance_source_ode_residual(self):
        # residual of nu^2 chi'' + (m - y) chi' = source, chi'' by central
        # differences with Richardson extrapolation to kill the h^2 term
        fm = _full_model()
        m, nu = fm.m, fm.nu
        f = volatility_factor(fm)
        src = lambda y: 0.5 * (f(y) ** 2 - 1.0)
        cp = poisson_solve_derivative(src, m, nu)
        ys = np.linspace(m - 5 * nu, m + 5 * nu, 21)

        def second(y, h):
            return (cp(y + h) - cp(y - h)) / (2 * h)

        h = 1e-4
        chi2 = (4.0 * second(ys, h) - second(ys, 2 * h)) / 3.0
        resid = nu**2 * chi2 + (m - ys) * cp(ys) - src(ys)
        scale = 1.0 + np.abs(src(ys)) + np.abs(cp(ys))
        assert np.max(np.abs(resid) / scale) < 1e-8

    def test_matches_closed_form_solutions(self):
        fm = _full_model(nu=1.0, m=0.06)
        m, nu = fm.m, fm.nu
        f = volatility_factor(fm)
        f_bar = exp_ou_f_bar(nu)
        phi_p = poisson_solve_derivative(lambda y: 0.5 * (f(y) ** 2 - 1.0), m, nu)
        psi_p = poisson_solve_derivative(lambda y: f(y) - f_bar, m, nu)
        ys = np.linspace(m - 4 * nu, m + 4 * nu, 17)
        np.testing.assert_allclose(
            phi_p(ys), exp_ou_phi_prime(ys, m, nu), rtol=1e-9, atol=1e-12
        )
        np.testing.assert_allclose(
            psi_p(ys), exp_ou_psi_prime(ys, m, nu), rtol=1e-9, atol=1e-12
        )


class TestGroupParams:
    def test_zero_when_cross_correlations_vanish(self):
        fm = _full_model(rho_xy=0.0, rho_yz=0.0)
        _, v = compute_group_params(fm)
        assert v.is_zero or max(abs(x) for x in v.as_array()) < 1e-12

    @pytest.mark.parametrize(
        "eps,v3_expected",
        [(1e-4, 0.0096), (1e-3, 0.0303), (1e-2, 0.0959), (1e-1, 0.3033)],
    )
    def test_benchmark_v3_column(self, eps, v3_expected):
        fm = _full_model(epsilon=eps)
        _, v = compute_group_params(fm)
        assert v.v3e == pytest.approx(v3_expected, abs=1e-4)

    def test_matches_closed_forms(self):
        fm = _full_model(epsilon=1e-2, nu=1.3, m=-0.4, rho_xy=-0.2, rho_yz=0.55)
        rho_eff, v = compute_group_params(fm)
        unit = exp_ou_unit_v(
            fm.heston.sigma, fm.nu, fm.rho_xy, fm.rho_xz, fm.rho_yz
        )
        np.testing.assert_allclose(
            v.as_array(), math.sqrt(fm.epsilon) * unit, rtol=1e-9, atol=1e-13
        )
        assert rho_eff == pytest.approx(
            fm.rho_xz * exp_ou_f_bar(fm.nu), rel=1e-10
        )

    def test_effective_correlation_bounded(self):
        for nu in (0.2, 1.0, 2.5):
            fm = _full_model(nu=nu)
            rho_eff, _ = compute_group_params(fm)
            assert rho_eff * rho_eff <= 1.0

    def test_sqrt_epsilon_scaling(self):
        _, v1 = compute_group_params(_full_model(epsilon=1e-3))
        _, v4 = compute_group_params(_full_model(epsilon=4e-3))
        np.testing.assert_allclose(v4.as_array(), 2.0 * v1.as_array(), rtol=1e-12)

    @pytest.mark.parametrize("m", [0.0, 0.06, 1.0])
    def test_translation_invariance_in_m(self, m):
        _, v_ref = compute_group_params(_full_model(m=0.06))
        _, v = compute_group_params(_full_model(m=m))
        np.testing.assert_allclose(v.as_array(), v_ref.as_array(), rtol=1e-8)

    def test_phi_weighted_residual(self):
        # the integrated residual of both Poisson solutions against the
        # invariant density stays below 1e-8
        fm = _full_model()
        m, nu = fm.m, fm.nu
        f = volatility_factor(fm)
        f_bar = exp_ou_f_bar(nu)
        for src in (
            lambda y: 0.5 * (f(y) ** 2 - 1.0),
            lambda y: f(y) - f_bar,
        ):
            cp = poisson_solve_derivative(src, m, nu)

            def resid(y):
                h = 1e-4
                chi2 = (cp(y + h) - cp(y - h)) / (2 * h)
                return np.abs(nu**2 * chi2 + (m - y) * cp(y) - src(y))

            spec = QuadratureSpec(abs_tol=1e-10, rel_tol=1e-6, max_subdivisions=64)
            val = gaussian_average(resid, m, nu, spec)
            assert val < 1e-8
