import math

import numpy as np
import pytest
import sympy as sp

from blowuplab import Nonlinearity, Potential, SolverConfig, make_problem, run_to_blowup
from blowuplab.oracles import (CONTACT, PLATEAU, InfeasibleCutoff, Supersolution, WindowOutOfSupport, _H_IN_S,
                               comparison_threshold_check, condition_4_3, cutoff_build, cutoff_feasibility,
                               dirichlet_heat_kernel, exact_ode_blowup, find_supersolution, heat_kernel_lower_bound_fit,
                               heat_kernel_mass, heat_kernel_terms, local_bound_exponent, rescale_window,
                               rescaled_nonlinearity, supersolution_residual)
from blowuplab.solver import advance, SolutionState

from conftest import synthetic_trajectory


class TestExactODE:
    def test_p2(self):
        o = exact_ode_blowup(1.0, 2.0, 1.0)
        assert o.T == 1.0 and o.u(0.5) == 2.0

    def test_p3(self):
        o = exact_ode_blowup(1.0, 3.0, 1.0)
        assert o.T == 0.5
        assert o.u(0.25) == pytest.approx((2 * 0.25) ** -0.5)

    @pytest.mark.parametrize("u0, p, A", [(1.5, 2.0, 3.0), (0.2, 3.5, 0.7)])
    def test_amplitude_identity(self, u0, p, A):
        o = exact_ode_blowup(u0, p, A)
        a = o.alpha
        t = np.linspace(0, o.T, 50, endpoint=False)
        np.testing.assert_allclose((o.T - t) ** a * o.u(t), a**a * A ** (-a), rtol=1e-12)
        assert o.amplitude == pytest.approx(a**a * A ** (-a), rel=1e-14)

    @pytest.mark.parametrize("args", [(0.0, 2.0, 1.0), (1.0, 1.0, 1.0), (1.0, 2.0, -1.0)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            exact_ode_blowup(*args)

    def test_rk2_local_order(self, interval_spec):
        spec = interval_spec(u0="1", boundary="neumann", n=33)
        o = exact_ode_blowup(1.0, 2.0, 1.0)
        s = SolutionState(0.0, spec.initial_data)
        dts = [4e-3, 2e-3, 1e-3]
        errs = [abs(advance(s, spec, dt).u[0] - float(o.u(dt))) for dt in dts]
        orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
        assert min(orders) >= 2.9


class TestSupersolution:
    def test_zero_potential_small_beta(self):
        s = Supersolution(K=1.0, beta=1e-3, r=0.2, x0=0.0, T=1.0, alpha=1.0)
        x = np.linspace(-0.2, 0.2, 10_000)
        assert condition_4_3(s, Potential.constant(0.0), 1.0, 2.0, x).min() > 0

    def test_large_beta_fails(self):
        s = Supersolution(K=1.0, beta=0.9, r=0.2, x0=0.0, T=1.0, alpha=1.0)
        x = np.linspace(-0.2, 0.2, 10_000)
        assert condition_4_3(s, Potential.constant(0.0), 1.0, 2.0, x).min() < 0

    def test_quadratic_potential_search(self):
        V = Potential.expression("x^2")
        res = find_supersolution(M=2.0, V=V, C=2.0, p=2.0, x0=0.0, rho=0.5, T=0.1, u0_max=1.0)
        s = res.supersolution
        assert res.condition_min > 0 and res.residual_min >= 0
        xs = np.linspace(-s.r, s.r, 1001)
        assert np.all((2 * 2.0 / s.alpha) * s.K ** (2.0 - 1) * xs**2 < 1 / 3)

    def test_closed_form_derivatives(self):
        s = Supersolution(K=1.0, beta=0.3, r=0.4, x0=0.1, T=1.0, alpha=1.0)
        x = np.linspace(-0.25, 0.45, 9)
        h = 1e-5
        q = s.q
        np.testing.assert_allclose(s.grad_sq(x), ((q(x + h) - q(x - h)) / (2 * h)) ** 2, rtol=1e-6, atol=1e-12)
        np.testing.assert_allclose(s.lap_q(x), (q(x + h) - 2 * q(x) + q(x - h)) / h**2, rtol=1e-4, atol=1e-6)

    def test_residual_outside_ball_rejected(self):
        s = Supersolution(K=1.0, beta=0.1, r=0.2, x0=0.0, T=1.0, alpha=1.0)
        with pytest.raises(ValueError):
            supersolution_residual(s, Potential.constant(0.0), 1.0, 2.0, np.array([0.0, 0.3]))

    def test_beta_range(self):
        with pytest.raises(ValueError):
            Supersolution(K=1.0, beta=1.0, r=0.2, x0=0.0, T=1.0, alpha=1.0)


class TestCutoff:
    def test_plateau_and_support(self):
        c = cutoff_build(2.0, 2, 1.0)
        assert c(0.4 * 2.0) == 1.0 and c(0.7 * 2.0) == 0.0
        assert np.all(c.phi[c.r <= 1.0] == 1.0) and np.all(c.phi[c.r >= 2.0 * CONTACT] == 0.0)
        assert np.all((c.phi >= 0) & (c.phi <= 1))

    def test_inferred_constant_stable(self):
        a = cutoff_build(1.0, 2, 1.0, points=20001).C_inferred
        b = cutoff_build(1.0, 2, 1.0, points=40001).C_inferred
        assert np.isfinite(a) and abs(b - a) / a < 0.05

    def test_exponent_checks(self):
        grad, lap = cutoff_feasibility(2, 1.0)
        assert (grad.lhs, grad.rhs, grad.passed) == (10, 6.0, True)
        assert lap.passed

    def test_sigma_near_two_rejected_per_term(self):
        with pytest.raises(InfeasibleCutoff) as e:
            cutoff_build(1.0, 2, 1.9)
        assert "|grad phi|^2" in str(e.value) and "|Lap phi^2|" in str(e.value)

    def test_blending_polynomial_symbolically(self):
        s = sp.symbols("s")
        h = sum(sp.Integer(int(c)) * s**k for k, c in enumerate(_H_IN_S.coef))
        x = sp.symbols("x")
        hx = h.subs(s, sp.Rational(2, 3) - x)
        a, b = sp.Rational(2, 3), sp.Rational(1, 2)
        assert [hx.subs(x, a), sp.diff(hx, x).subs(x, a), sp.diff(hx, x, 2).subs(x, a)] == [0, 0, 0]
        assert sp.diff(hx, x, 3).subs(x, a) == -6
        assert [hx.subs(x, b), sp.diff(hx, x).subs(x, b), sp.diff(hx, x, 2).subs(x, b)] == [1, 0, 0]
        # psi = h^l vanishes to order exactly 3l at the contact point
        l = 2
        psi = sp.expand(h**l)
        assert min(sp.Poly(psi, s).monoms())[0] == 3 * l
        assert PLATEAU == 0.5 and CONTACT == float(a)

    def test_h_decreasing_on_blend(self):
        from blowuplab.oracles import cutoff_h
        xs = np.linspace(0.5, 2 / 3, 2001)
        assert np.all(np.diff(cutoff_h(xs)) <= 1e-15)


class TestThreshold:
    def test_margin_arithmetic(self):
        r = comparison_threshold_check(2.0, 1.0, 0.5, 0.1, 0.05, 1.0)
        assert r.B == 0.75 and r.margin == pytest.approx(0.0375, abs=1e-15) and r

    def test_larger_epsilon_fails(self):
        r = comparison_threshold_check(2.0, 1.0, 0.5, 0.2, 0.05, 1.0)
        assert r.margin < 0 and not r

    def test_k_to_kappa(self):
        eps = 0.01
        r = comparison_threshold_check(2.0, 1.0, 1 - 1e-9, eps, 0.0, 1.0)
        assert r.margin == pytest.approx(-eps, abs=1e-8)

    def test_k_at_kappa_rejected(self):
        with pytest.raises(ValueError):
            comparison_threshold_check(2.0, 1.0, 1.0, 0.1, 0.0, 1.0)

    def test_local_bound_exponent(self):
        assert local_bound_exponent(2.0, 0.5, 0.1).m == pytest.approx(0.6)
        with pytest.raises(ValueError):
            local_bound_exponent(2.0, 0.9, 0.2)


class TestRescaling:
    def test_identity_lambda(self):
        x = np.linspace(-2, 2, 401)
        traj = synthetic_trajectory(x, np.linspace(0, 2, 21), lambda t, x: (1 + t) * np.cos(x))
        w = rescale_window(traj, 1.0, 0.0, 2.0, 1.0, s_values=[0.0], y_values=np.linspace(-1, 1, 11))
        assert w.lam == 1.0
        np.testing.assert_allclose(w.v[0], 2 * np.cos(w.y), rtol=1e-4)

    def test_inverse_map(self):
        x = np.linspace(-1, 1, 1025)
        traj = synthetic_trajectory(x, np.linspace(0, 0.9, 91), lambda t, x: np.exp(-x**2) / (1 - t))
        w = rescale_window(traj, 0.5, 0.1, 1.0, 1.0, s_values=[-0.4, 0.0], y_values=np.linspace(-0.5, 0.5, 7))
        t, xs, u = w.physical()
        exact = np.exp(-xs[None, :] ** 2) / (1 - t[:, None])
        assert np.max(np.abs(u / exact - 1)) < 1e-3

    def test_ode_profile_flat_and_self_similar(self):
        o = exact_ode_blowup(1.0, 2.0, 1.0)
        x = np.linspace(-1, 1, 65)
        times = 1 - np.logspace(0, -6, 400)
        traj = synthetic_trajectory(x, times, lambda t, x: o.u(t) + 0 * x)
        for t_hat in (0.9, 0.999):
            w = rescale_window(traj, t_hat, 0.0, 1.0, 1.0, s_values=[0.0, 0.5], y_values=[-0.01, 0.0, 0.01])
            assert w.flatness() == 0.0
            np.testing.assert_allclose(w.v[:, 1], [1.0, 2.0], rtol=1e-3)

    def test_window_out_of_support(self):
        traj = synthetic_trajectory(np.linspace(-1, 1, 9), [0.0, 0.5], lambda t, x: 1 + 0 * x)
        with pytest.raises(WindowOutOfSupport):
            rescale_window(traj, 0.4, 0.0, 1.0, 1.0)
        with pytest.raises(WindowOutOfSupport):
            rescale_window(traj, 1.0, 0.0, 1.0, 1.0)

    def test_pde_window_approaches_flat_profile(self, interval_spec):
        spec = interval_spec(u0="20*(1 - x^2)^2", n=513)
        traj, rep = run_to_blowup(spec, SolverConfig(u_blow=1e10))
        t_hat = rep.T_hat - 1e-6
        w = rescale_window(traj, t_hat, 0.0, rep.T_hat, 1.0, s_values=[0.0], y_values=np.linspace(-1, 1, 21))
        assert w.flatness() < 0.1


class TestRescaledNonlinearity:
    def test_power_is_homogeneous(self):
        assert rescaled_nonlinearity(Nonlinearity.power(2.0), 0.37, 3.0) == 9.0

    def test_shifted_power(self):
        assert rescaled_nonlinearity(Nonlinearity.shifted_power(2.0), 0.1, 1.0) == pytest.approx(1.0201, rel=1e-12)

    def test_shifted_power_limit(self):
        v = np.linspace(0, 10, 1001)
        dev = np.abs(rescaled_nonlinearity(Nonlinearity.shifted_power(2.0), 1e-3, v) - v**2)
        assert dev.max() < 1e-2

    def test_log_power_rejected(self):
        with pytest.raises(ValueError):
            rescaled_nonlinearity(Nonlinearity.log_power(1.5), 0.5, 1.0)


class TestHeatKernel:
    def test_symmetry(self):
        x = np.linspace(0, 1, 41)
        for t in (1e-3, 0.05, 1.0):
            G = dirichlet_heat_kernel(t, x[:, None], x[None, :]).G
            assert np.max(np.abs(G - G.T)) < 1e-12

    def test_sub_markov_mass(self):
        x = np.linspace(0.01, 0.99, 99)
        for t in (1e-2, 0.1, 1.0):
            assert np.all(heat_kernel_mass(t, x) < 1)
        # at short times the deficit 1 - mass at interior points is below double precision
        assert np.all(heat_kernel_mass(1e-4, x) <= 1 + 1e-12)
        assert heat_kernel_mass(1e-5, [0.5])[0] == pytest.approx(1.0, abs=1e-9)

    def test_mass_matches_quadrature(self):
        y = np.linspace(0, 1, 4001)
        G = dirichlet_heat_kernel(0.05, 0.3, y).G
        assert np.trapezoid(G, y) == pytest.approx(heat_kernel_mass(0.05, [0.3])[0], abs=1e-6)

    def test_truncation_tail(self):
        x = np.linspace(0, 1, 21)
        for t in (1e-3, 0.1):
            N = heat_kernel_terms(t)
            a = dirichlet_heat_kernel(t, x[:, None], x[None, :], N).G
            b = dirichlet_heat_kernel(t, x[:, None], x[None, :], 4 * N).G
            assert np.max(np.abs(a - b)) < 1e-12

    def test_flux_is_y_derivative(self):
        x = np.linspace(0.1, 0.9, 9)
        h = 1e-6
        fd = dirichlet_heat_kernel(0.05, x, h).G / h
        np.testing.assert_allclose(dirichlet_heat_kernel(0.05, x, 0.0).flux, fd, rtol=1e-5)

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            dirichlet_heat_kernel(0.0, 0.5, 0.5)

    def test_lower_bound_fit(self):
        grid = np.linspace(0, 1, 21)
        fit = heat_kernel_lower_bound_fit(np.logspace(-2, 0, 7), grid, grid)
        assert fit.c1 > 0 and fit.c2 > 0 and fit.violations == 0
