import warnings

import numpy as np
import pytest

from ergodic_bsde.core_model import ModelSpec, apriori_constants, ou_factor, validate_rate_matrix
from ergodic_bsde.drivers import ClosedFormBenchmark, constant_driver, driver_from_callables
from ergodic_bsde.errors import DegenerateFit, HorizonTooShort, ModelValidationError, NonMonotoneLambda
from ergodic_bsde.ergodic_solver import (
    large_time_report,
    long_time_lambda,
    richardson,
    vanishing_discount,
)
from ergodic_bsde.pde_solver import Grid1D, SchemeConfig

LAM2 = 1 / (2 * np.sqrt(2 * np.pi))
RHOS = (0.1, 0.05, 0.025, 0.0125)


class TestRichardson:
    def test_exact_on_linear_data(self):
        rhos = [0.1, 0.05, 0.025]
        est, w, ok = richardson(rhos, [0.3 + 2 * r for r in rhos])
        assert ok and est == pytest.approx(0.3) and sum(w) == pytest.approx(1.0)

    def test_guard_falls_back(self):
        est, w, ok = richardson([0.1, 0.05, 0.025], [0.0, 1.0, 0.0])
        assert not ok and w is None and est == 0.0

    def test_single_point(self):
        assert richardson([0.1], [0.7]) == (0.7, None, False)


class TestVanishingDiscount:
    def test_benchmark_lambda(self, benchmark_ergodic):
        assert abs(benchmark_ergodic["example1", 800].lam) <= 1e-3
        assert abs(benchmark_ergodic["example2", 800].lam - LAM2) <= 2e-3

    def test_constant_driver(self):
        m = ModelSpec(ou_factor(1.0), constant_driver(0.35, m0=2), validate_rate_matrix([[-1, 1], [1, -1]]))
        sol = vanishing_discount(m, Grid1D(-4, 4, 81), RHOS)
        assert sol.lam == pytest.approx(0.35, abs=1e-10)
        np.testing.assert_allclose(sol.y, 0.0, atol=1e-8)
        for _, lam_rho, _ in sol.rho_trace:
            assert lam_rho == pytest.approx(0.35, abs=1e-7)

    def test_gauge_and_estimate_suite(self, two_regime_model, two_regime_ergodic):
        sol = two_regime_ergodic
        g = sol.grid
        c = apriori_constants(two_regime_model)
        assert sol.y[sol.ref_regime, g.index_of(0.0)] == pytest.approx(0.0, abs=1e-12)
        b = sol.diagnostics["bounds"]
        assert b["sup_z"] <= c.k_z + 1e-3
        assert b["sup_diff"] <= c.k_diff + 1e-3
        assert np.all(np.abs(sol.y) <= b["C_y"] * (1 + np.abs(g.nodes)) + 1e-12)

    def test_discounted_bounds_recorded(self, two_regime_ergodic):
        for rec in two_regime_ergodic.diagnostics["discounted"]:
            assert rec["sup_y"] <= rec["K_y"] + 1e-8
            assert rec["sup_diff"] <= rec["K_diff"] + 1e-3

    def test_regauge_invariance(self, two_regime_ergodic):
        sol = two_regime_ergodic
        r = sol.regauged(2.5)
        assert r.lam == sol.lam
        np.testing.assert_allclose(r.y[0] - r.y[1], sol.y[0] - sol.y[1], atol=1e-13)
        np.testing.assert_array_equal(r.z, sol.z)

    def test_gauge_does_not_depend_on_v0(self, two_regime_model):
        g = Grid1D(-6, 6, 401)
        a = vanishing_discount(two_regime_model, g, RHOS, v0=0.0)
        b = vanishing_discount(two_regime_model, g, RHOS, v0=1.5)
        assert a.lam == pytest.approx(b.lam, abs=1e-9)
        np.testing.assert_allclose(a.y, b.y, atol=1e-8)

    def test_threads_identical(self, two_regime_model):
        g = Grid1D(-6, 6, 201)
        a = vanishing_discount(two_regime_model, g, RHOS, threads=1)
        b = vanishing_discount(two_regime_model, g, RHOS, threads=4)
        assert a.lam == b.lam
        np.testing.assert_array_equal(a.y, b.y)

    def test_bad_sequences(self, two_regime_model):
        g = Grid1D(-6, 6, 101)
        with pytest.raises(ModelValidationError):
            vanishing_discount(two_regime_model, g, (0.05, 0.1))
        with pytest.raises(ModelValidationError):
            vanishing_discount(two_regime_model, g, RHOS, v0=10.0)

    def test_non_monotone_warning(self):
        # a tiny first step followed by a large one makes the increments grow
        b = ClosedFormBenchmark("example2")
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            vanishing_discount(b.model(), Grid1D(-6, 6, 201), (0.4, 0.39, 0.01), polish=False)
        assert any(issubclass(w.category, NonMonotoneLambda) for w in rec)


class TestLongTime:
    def test_benchmark_slopes(self):
        g = Grid1D(-6, 6, 401)
        assert abs(long_time_lambda(ClosedFormBenchmark("example1").model(), g, 10, 20)) <= 1e-3
        assert abs(long_time_lambda(ClosedFormBenchmark("example2").model(), g, 10, 20) - LAM2) <= 2e-3

    def test_agrees_with_vanishing_discount(self, two_regime_model, two_regime_ergodic, benchmark_ergodic):
        assert abs(long_time_lambda(two_regime_model, two_regime_ergodic.grid, 10, 20) - two_regime_ergodic.lam) <= 3e-3
        for variant in ("example1", "example2"):
            sol = benchmark_ergodic[variant, 800]
            lt = long_time_lambda(ClosedFormBenchmark(variant).model(), sol.grid, 10, 20)
            assert abs(lt - sol.lam) <= 3e-3

    def test_horizon_too_short(self, two_regime_model):
        with pytest.raises(HorizonTooShort):
            long_time_lambda(two_regime_model, Grid1D(-6, 6, 201), 0.05, 0.3, tol=1e-8)

    def test_bad_horizons(self, two_regime_model):
        with pytest.raises(ModelValidationError):
            long_time_lambda(two_regime_model, Grid1D(-6, 6, 101), 2.0, 1.0)


class TestLargeTime:
    def test_start_at_profile_is_invariant(self, two_regime_model, two_regime_ergodic):
        sol = two_regime_ergodic
        h = sol.grid.h
        rep = large_time_report(two_regime_model, sol.grid, sol, sol.y, [1, 2, 3, 4], noise_floor=5 * h * h)
        assert np.ptp(rep.delta_y, axis=0).max() <= 5 * h * h
        assert abs(rep.L) <= 5 * h * h
        assert rep.degenerate and np.isnan(rep.K_v_fit)

    @pytest.mark.parametrize("variant", ["example1", "example2"])
    def test_benchmark_residuals_monotone(self, benchmark_ergodic, variant):
        sol = benchmark_ergodic[variant, 800]
        rep = large_time_report(ClosedFormBenchmark(variant).model(), sol.grid, sol, 0.0,
                                [2, 3, 4, 5, 6, 8, 10, 14, 20])
        r = rep.residuals[:-1]
        assert np.all(np.diff(r) <= 1e-12)

    def test_two_regime_report(self, two_regime_model, two_regime_ergodic):
        sol = two_regime_ergodic
        h = sol.grid.h
        rep = large_time_report(two_regime_model, sol.grid, sol, 0.0, np.arange(4, 21, 2))
        assert np.all(np.diff(rep.residuals[:-1]) < 0)
        assert rep.fit_quality > 0.9 and rep.K_v_fit > 0
        noise = rep.residuals[-2]
        assert np.ptp(rep.L_by_regime) <= 5 * h * h + noise
        assert rep.L_window_spread <= 5 * h * h + noise

    def test_needs_three_horizons(self, two_regime_model, two_regime_ergodic):
        with pytest.raises(ModelValidationError):
            large_time_report(two_regime_model, two_regime_ergodic.grid, two_regime_ergodic, 0.0, [1, 2])

    def test_grid_mismatch(self, two_regime_model, two_regime_ergodic):
        with pytest.raises(ModelValidationError):
            large_time_report(two_regime_model, Grid1D(-6, 6, 401), two_regime_ergodic, 0.0, [1, 2, 3])

    def test_degenerate_fit_raised(self, two_regime_model, two_regime_ergodic):
        sol = two_regime_ergodic
        # a decaying bump leaves one residual above the floor, too few for a line
        bump = sol.y + 1e-3 * np.exp(-sol.grid.nodes**2)
        with pytest.raises(DegenerateFit):
            large_time_report(two_regime_model, sol.grid, sol, bump, [0.01, 8.0, 16.0], noise_floor=1e-5)
