import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergodic_bsde.core_model import ModelSpec, apriori_constants, ou_factor, validate_rate_matrix
from ergodic_bsde.drivers import ClosedFormBenchmark, constant_driver, driver_from_callables
from ergodic_bsde.errors import MaxStepsExceeded, ModelValidationError
from ergodic_bsde.oracles import discounted_ode_bound, fd_gradient_check
from ergodic_bsde.pde_solver import (
    Grid1D,
    SchemeConfig,
    bsde_operator,
    compute_z,
    solve_discounted_stationary,
    solve_finite_horizon,
    stable_dt,
    step_parabolic,
)

SMALL = Grid1D(-4.0, 4.0, 161)


def _model(drv, q, c_eta=1.0):
    return ModelSpec(factor=ou_factor(c_eta), driver=drv, rates=validate_rate_matrix(q))


def _tanh_model(q=((-1.0, 1.0), (1.0, -1.0)), scales=(0.3, -0.2)):
    fs = [lambda v, z, a=a: a * np.tanh(v[..., 0]) + 0.25 * z[..., 0] ** 2 / (1 + z[..., 0] ** 2) for a in scales]
    return _model(driver_from_callables(fs, 1, c_v=0.3, c_z=0.5, k_f=0.3), q)


class TestGrid:
    def test_spacing_and_window(self):
        g = Grid1D(-6, 6, 801)
        assert g.h == pytest.approx(0.015)
        w = g.central_window(0.8)
        assert g.nodes[w][0] == pytest.approx(-4.8) and g.nodes[w][-1] == pytest.approx(4.8)
        assert g.index_of(0.0) == 400

    def test_invalid(self):
        with pytest.raises(ModelValidationError):
            Grid1D(1, 0, 11)
        with pytest.raises(ModelValidationError):
            SchemeConfig(theta_scheme=0.3)


class TestGradient:
    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), k=st.floats(0.1, 2))
    def test_exact_for_affine(self, a, b, k):
        y = a * SMALL.nodes + b
        np.testing.assert_allclose(compute_z(y, k, SMALL.h), k * a, atol=1e-11)

    @pytest.mark.parametrize("n", [401, 801])
    def test_benchmark_gradient_oracle(self, n):
        b = ClosedFormBenchmark("example1")
        g = Grid1D(-6, 6, n)
        rep = fd_gradient_check(b.y(g.nodes), 1.0, b.z(g.nodes), g.h)
        assert rep.reference <= rep.tolerance
        np.testing.assert_allclose(compute_z(b.y(g.nodes), 1.0, g.h), b.z(g.nodes), atol=2 * g.h**2)

    def test_kink_excluded(self):
        b = ClosedFormBenchmark("example2")
        g = Grid1D(-6, 6, 801)
        kink = np.abs(g.nodes) < 0.5 * g.h
        rep = fd_gradient_check(b.y(g.nodes), 1.0, b.z(g.nodes), g.h, exclude=kink)
        assert rep.reference <= rep.tolerance and rep.details["excluded_nodes"] == [400]


class TestParabolicStep:
    def test_constants_stationary(self):
        m = _model(constant_driver(0.0), [[0.0]], c_eta=0.5)
        op = bsde_operator(m, SMALL, SchemeConfig(dt=0.05))
        y = np.full((1, SMALL.n), 3.7)
        for _ in range(20):
            y = step_parabolic(y, op)
        np.testing.assert_allclose(y, 3.7, rtol=0, atol=1e-12)

    def test_constant_driver_grows_linearly(self):
        m = _model(constant_driver(0.4, m0=2), [[-1, 1], [2, -2]])
        sol = solve_finite_horizon(m, SMALL, 1.0, 2.0, SchemeConfig(dt=0.05))
        np.testing.assert_allclose(sol.y[-1], 1.8, atol=1e-12)

    def test_identical_regimes_stay_identical(self):
        m = _tanh_model(scales=(0.3, 0.3))
        sol = solve_finite_horizon(m, SMALL, lambda i, v: np.cos(v), 1.0, SchemeConfig(dt=0.02))
        np.testing.assert_allclose(sol.y[-1, 0], sol.y[-1, 1], atol=1e-14)

    def test_benchmark_step_near_stationary(self):
        # closed form is stationary up to the O(h^2) truncation error; a fine grid brings it below 1e-6
        b = ClosedFormBenchmark("example1")
        g = Grid1D(-6, 6, 8001)
        op = bsde_operator(b.model(), g, SchemeConfig(dt=0.01))
        y0 = b.y(g.nodes)[None]
        y1 = step_parabolic(y0, op)
        assert np.max(np.abs(y1 - y0)[0, 1:-1]) <= 1e-6 * op.dt

    def test_finite_horizon_from_closed_form(self):
        b = ClosedFormBenchmark("example1")
        g = Grid1D(-6, 6, 801)
        sol = solve_finite_horizon(b.model(), g, lambda i, v: b.y(v), 5.0, SchemeConfig(dt=0.01), save_times=[5.0])
        inner = (g.nodes >= -5) & (g.nodes <= 5)
        err = sol.y[-1, 0] - b.lam * 5.0 - b.y(g.nodes)
        assert np.max(np.abs(err[inner])) <= 5 * g.h**2

    def test_order_preserved(self, rng):
        m = _tanh_model()
        base = rng.normal(size=(2, SMALL.n)) * 0.2
        lo = solve_finite_horizon(m, SMALL, base, 1.5, SchemeConfig(dt=0.01))
        hi = solve_finite_horizon(m, SMALL, base + np.abs(rng.normal(size=base.shape)) * 0.1, 1.5,
                                  SchemeConfig(dt=0.01))
        assert np.all(hi.y[-1] >= lo.y[-1] - 1e-12)

    def test_regime_permutation(self):
        m = _tanh_model(q=((-1.0, 1.0), (2.0, -2.0)), scales=(0.3, -0.2))
        mp = _tanh_model(q=((-2.0, 2.0), (1.0, -1.0)), scales=(-0.2, 0.3))
        init = lambda i, v: np.sin(v) * (1 + i)
        a = solve_finite_horizon(m, SMALL, init, 1.0)
        b = solve_finite_horizon(mp, SMALL, lambda i, v: init(1 - i, v), 1.0)
        np.testing.assert_allclose(a.y[-1], b.y[-1][::-1], atol=1e-13)

    def test_stable_dt(self):
        g = Grid1D(-4, 4, 161)
        assert stable_dt(g, 0.5, 1.0) == pytest.approx(g.h / 3)
        assert stable_dt(g, 0.0, np.inf) == np.inf
        assert stable_dt(g, 0.5, np.inf) == 0.0
        assert stable_dt(g, 0.0, 0.0, q_diag_max=2.0, coupling_clamp=0.0) == pytest.approx(0.5)

    def test_dt_lowered_to_limit(self):
        m = _tanh_model()
        op = bsde_operator(m, SMALL, SchemeConfig(dt=1.0))
        assert op.dt == pytest.approx(op.stability["dt_max"]) and op.dt < 1.0


class TestDiscountedStationary:
    def test_constant_driver(self):
        m = _model(constant_driver(0.3, m0=2), [[-1, 1], [1, -1]])
        sol = solve_discounted_stationary(m, SMALL, 0.2)
        np.testing.assert_allclose(sol.y, 1.5, atol=1e-7)

    def test_bounds(self):
        m = _tanh_model()
        rho = 0.1
        sol = solve_discounted_stationary(m, SMALL, rho)
        c = apriori_constants(m, rho)
        inner = slice(1, -1)
        assert np.max(np.abs(sol.y)) <= c.k_y + 1e-8
        assert np.max(np.abs(sol.z[:, inner])) <= c.k_z + SMALL.h**2
        assert np.max(np.abs(sol.y[0] - sol.y[1])) <= c.k_diff
        assert sol.residual < 1e-8

    def test_finite_horizon_below_ode_bound(self):
        m = _tanh_model()
        rho, T = 0.2, 3.0
        sol = solve_finite_horizon(m, SMALL, 0.0, T, rho=rho)
        assert np.max(np.abs(sol.y[-1])) <= discounted_ode_bound(m.driver.k_f, rho, T, 0.0) + 1e-10

    def test_refinement_ratio(self):
        # successive differences of the discounted solution on nested grids
        b = ClosedFormBenchmark("example1")
        sols = [solve_discounted_stationary(b.model(), Grid1D(-6, 6, n), 0.05).y[0] for n in (201, 401, 801)]
        coarse = Grid1D(-6, 6, 201)
        w = coarse.central_window(0.8)
        d1 = np.max(np.abs(sols[0] - sols[1][::2])[w])
        d2 = np.max(np.abs(sols[1][::2] - sols[2][::4])[w])
        assert 3.0 <= d1 / d2 <= 5.0

    def test_zero_rho_rejected(self):
        with pytest.raises(ModelValidationError):
            solve_discounted_stationary(_tanh_model(), SMALL, 0.0)

    def test_max_steps(self):
        with pytest.raises(MaxStepsExceeded) as exc:
            solve_discounted_stationary(_tanh_model(), SMALL, 0.1, SchemeConfig(max_steps=3))
        assert exc.value.steps == 3 and exc.value.residual > 0

    def test_initial_shape_checked(self):
        with pytest.raises(ModelValidationError):
            solve_finite_horizon(_tanh_model(), SMALL, np.zeros((3, SMALL.n)), 1.0)
