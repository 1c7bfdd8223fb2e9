import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ergodic_bsde.core_model import (
    DriverSet,
    FactorModel,
    ModelSpec,
    ValidationConfig,
    apriori_constants,
    ou_factor,
    truncate_scalar,
    truncate_vector,
    validate_factor,
    validate_model,
    validate_rate_matrix,
)
from ergodic_bsde.errors import (
    AssumptionViolation,
    DegenerateDissipativity,
    ModelValidationError,
    NegativeOffDiagonal,
    RowSumViolation,
    ZeroDiscount,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def _model(k_f=1.0, c_v=1.0, c_eta=2.0, c_z=1.0, q=((-0.5, 0.5), (0.5, -0.5))):
    q = np.asarray(q, dtype=float)
    drv = DriverSet(m0=q.shape[0], d=1, f=lambda i, v, z: np.zeros(np.shape(v)[:-1]), c_v=c_v, c_z=c_z, k_f=k_f)
    return ModelSpec(ou_factor(c_eta), drv, validate_rate_matrix(q))


class TestRateMatrix:
    def test_symmetric_two_state(self):
        r = validate_rate_matrix([[-1, 1], [1, -1]])
        assert (r.q_min, r.q_max, r.m0) == (1.0, 1.0, 2)
        assert r.irreducible

    def test_single_regime(self):
        r = validate_rate_matrix([[0.0]])
        assert r.m0 == 1 and r.q_min == np.inf and not r.irreducible

    def test_row_sum_violation(self):
        with pytest.raises(RowSumViolation) as e:
            validate_rate_matrix([[-1, 2], [1, -1]])
        assert e.value.path == "[0]"

    def test_negative_off_diagonal(self):
        with pytest.raises(NegativeOffDiagonal):
            validate_rate_matrix([[1, -1], [1, -1]])

    def test_reducible_chain(self):
        r = validate_rate_matrix([[0, 0], [1, -1]])
        assert r.q_min == 0 and not r.irreducible

    def test_rejects_nonsquare_and_nonfinite(self):
        with pytest.raises(ModelValidationError):
            validate_rate_matrix([[0, 0]])
        with pytest.raises(ModelValidationError):
            validate_rate_matrix([[np.nan]])

    def test_row_sum_tolerance(self):
        validate_rate_matrix([[-1, 1 + 5e-13], [1, -1]])
        with pytest.raises(RowSumViolation):
            validate_rate_matrix([[-1, 1 + 1e-11], [1, -1]])

    def test_embedded_jump_probabilities(self):
        r = validate_rate_matrix([[-3, 1, 2], [0, 0, 0], [1, 1, -2]])
        p = r.embedded_jump_probs()
        np.testing.assert_allclose(p[0], [0, 1 / 3, 2 / 3])
        np.testing.assert_allclose(p[1], 0)
        np.testing.assert_allclose(p[2], [0.5, 0.5, 0])

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (3, 3), elements=st.floats(0, 5)))
    def test_idempotent(self, off):
        np.fill_diagonal(off, 0)
        q = off - np.diag(off.sum(axis=1))
        r1 = validate_rate_matrix(q)
        r2 = validate_rate_matrix(r1.q)
        np.testing.assert_array_equal(r1.q, r2.q)
        assert (r1.q_min, r1.q_max) == (r2.q_min, r2.q_max)


class TestAprioriConstants:
    def test_k_y(self):
        c = apriori_constants(_model(k_f=1.0), rho=0.5)
        assert c.k_y == pytest.approx(2.0)

    def test_k_z(self):
        assert apriori_constants(_model(c_v=1.0, c_eta=2.0)).k_z == pytest.approx(1.0)

    def test_k_diff(self):
        c = apriori_constants(_model(k_f=1, c_v=1, c_eta=2, c_z=1, q=((-0.5, 0.5), (0.5, -0.5))))
        assert c.k_diff == pytest.approx(6.0)

    def test_zero_discount(self):
        with pytest.raises(ZeroDiscount):
            apriori_constants(_model(), rho=0.0, need_k_y=True)
        assert np.isnan(apriori_constants(_model(), rho=0.0).k_y)

    def test_degenerate_dissipativity(self):
        with pytest.raises(DegenerateDissipativity):
            apriori_constants(_model(c_v=2.0, c_eta=2.0))

    def test_single_regime_k_diff_inapplicable(self):
        assert np.isnan(apriori_constants(_model(q=((0.0,),))).k_diff)

    def test_reducible_k_diff_infinite(self):
        assert apriori_constants(_model(q=((0, 0), (1, -1)))).k_diff == np.inf

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.0, 1.0), st.floats(0.05, 3), st.floats(0.01, 2))
    def test_monotone(self, k_f, dk, c_v, gap, rho):
        base = apriori_constants(_model(k_f=k_f, c_v=c_v, c_eta=c_v + gap), rho)
        more_f = apriori_constants(_model(k_f=k_f + dk, c_v=c_v, c_eta=c_v + gap), rho)
        more_eta = apriori_constants(_model(k_f=k_f, c_v=c_v, c_eta=c_v + gap + dk), rho)
        assert more_f.k_y > base.k_y and more_f.k_diff > base.k_diff
        assert more_eta.k_z <= base.k_z
        assert min(base.k_y, base.k_z, base.k_diff) >= 0


class TestTruncation:
    def test_examples(self):
        assert truncate_scalar(3.0, 2.0) == 2.0
        np.testing.assert_allclose(truncate_vector([3.0, 4.0], 10.0), [3, 4])
        np.testing.assert_allclose(truncate_vector([3.0, 4.0], 1.0), [0.6, 0.8])
        np.testing.assert_array_equal(truncate_vector([0.0, 0.0], 1.0), [0, 0])

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, 3, elements=finite), st.floats(0, 100))
    def test_vector_norm_and_direction(self, z, k):
        qz = truncate_vector(z, k)
        nz, nq = np.linalg.norm(z), np.linalg.norm(qz)
        assert nq == pytest.approx(min(nz, k), rel=1e-12, abs=1e-12)
        assert qz @ z == pytest.approx(nq * nz, rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(finite, st.floats(0, 100))
    def test_scalar_clamp(self, y, k):
        p = truncate_scalar(y, k)
        assert -k <= p <= k
        assert p == y or abs(p) == k


class TestValidators:
    def test_kappa_norm(self):
        f = FactorModel(d=1, eta=lambda v: -v, kappa=np.array([[2.0]]), c_eta=1.0)
        with pytest.raises(ModelValidationError):
            validate_factor(f)

    def test_dissipativity_violation(self):
        f = FactorModel(d=1, eta=lambda v: -0.5 * v, kappa=np.array([[1.0]]), c_eta=1.0)
        with pytest.raises(AssumptionViolation):
            validate_factor(f, ValidationConfig(n_samples=500))

    def test_two_dimensional_factor(self):
        validate_factor(ou_factor(0.7, d=2))

    def test_driver_k_f_violation(self):
        drv = DriverSet(1, 1, lambda i, v, z: np.full(np.shape(v)[:-1], 2.0), 0.0, 0.0, 1.0)
        with pytest.raises(AssumptionViolation):
            validate_model(ModelSpec(ou_factor(1.0), drv, validate_rate_matrix([[0.0]])))

    def test_driver_v_lipschitz_violation(self):
        drv = DriverSet(1, 1, lambda i, v, z: np.sin(3 * v[..., 0]), 0.5, 0.0, 1.0)
        with pytest.raises(AssumptionViolation):
            validate_model(ModelSpec(ou_factor(1.0), drv, validate_rate_matrix([[0.0]])))

    def test_driver_z_lipschitz_violation(self):
        drv = DriverSet(1, 1, lambda i, v, z: 2 * z[..., 0] ** 2, 0.0, 0.5, 0.0)
        with pytest.raises(AssumptionViolation):
            validate_model(ModelSpec(ou_factor(1.0), drv, validate_rate_matrix([[0.0]])))

    def test_quadratic_driver_passes(self):
        drv = DriverSet(1, 1, lambda i, v, z: 0.5 * z[..., 0] ** 2 + 0.1 * np.tanh(v[..., 0]), 0.1, 0.5, 0.1)
        validate_model(ModelSpec(ou_factor(1.0), drv, validate_rate_matrix([[0.0]])))

    def test_dimension_mismatch(self):
        drv = DriverSet(2, 1, lambda i, v, z: 0 * v[..., 0], 0.0, 0.0, 0.0)
        with pytest.raises(ModelValidationError):
            validate_model(ModelSpec(ou_factor(1.0), drv, validate_rate_matrix([[0.0]])))

    def test_gap_required(self):
        drv = DriverSet(1, 1, lambda i, v, z: 0 * v[..., 0], 1.0, 0.0, 0.0)
        with pytest.raises(DegenerateDissipativity):
            validate_model(ModelSpec(ou_factor(1.0), drv, validate_rate_matrix([[0.0]])))
        validate_model(ModelSpec(ou_factor(1.0), drv, validate_rate_matrix([[0.0]]), borderline=True))
