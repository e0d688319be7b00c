import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smartsize.covariance import (CorrelationStructure, CovarianceError, Pooling, Structure, VarianceSpec,
                                  correlation_estimates, estimate_rho, estimate_sigma, estimate_variance_spec,
                                  pool_variances, variance_table, working_covariance)
from smartsize.design import EmbeddedDtr, SmartDesign, enumerate_dtrs, weight
from smartsize.mean_model import MeanModelSpec, design_matrix

from conftest import TIMES, random_trial


class TestStructures:
    def test_exchangeable_matrix(self):
        R = CorrelationStructure("exchangeable", 0.4).matrix(3)
        np.testing.assert_allclose(R, [[1, .4, .4], [.4, 1, .4], [.4, .4, 1]])

    def test_ar1_matrix(self):
        R = CorrelationStructure("ar1", 0.5).matrix(3)
        np.testing.assert_allclose(R, [[1, .5, .25], [.5, 1, .5], [.25, .5, 1]])

    @pytest.mark.parametrize("rho", [-0.5, -0.6, 1.0])
    def test_exchangeable_pd_region(self, rho):
        with pytest.raises(CovarianceError):
            CorrelationStructure("exchangeable", rho).matrix(3)

    def test_unstructured_validated(self):
        with pytest.raises(CovarianceError):
            CorrelationStructure("unstructured", [[1, 0.2], [0.3, 1]])

    @given(rho=st.floats(-0.49, 0.99), s=st.floats(0.1, 10))
    def test_working_covariance_entries(self, rho, s):
        V = working_covariance(VarianceSpec(s), CorrelationStructure("exchangeable", rho), (1, 0, 1), 3)
        assert V[0, 0] == pytest.approx(s * s)
        assert V[0, 2] == pytest.approx(rho * s * s)

    def test_regimen_specific_sd(self):
        var = VarianceSpec({(1, 0, 1): [1.0, 2.0, 3.0]}, "none")
        V = working_covariance(var, CorrelationStructure("identity"), (1, 0, 1), 3)
        np.testing.assert_allclose(np.diag(V), [1, 4, 9])

    def test_nonpositive_sd(self):
        with pytest.raises(CovarianceError):
            VarianceSpec(0.0)


def loop_moments(design, data, spec, theta):
    """Plain-loop oracle for the moment estimators."""
    dtrs = enumerate_dtrs(design)
    p = spec.n_params
    var = np.zeros((len(dtrs), 3))
    cross = np.zeros(len(dtrs))
    for k, d in enumerate(dtrs):
        mu = design_matrix(spec, d) @ theta
        wsum = 0.0
        for rec in data.records:
            w = weight(design, d, rec)
            e = np.array(rec.y) - mu
            wsum += w
            var[k] += w * e ** 2
            cross[k] += w * sum(e[i] * e[j] for i, j in itertools.combinations(range(3), 2))
        var[k] /= wsum - p
    return var, cross


class TestMomentEstimators:
    @pytest.fixture
    def setup(self, design, rng):
        spec = MeanModelSpec(design, TIMES, 1.0)
        data = random_trial(design, 40, rng)
        theta = rng.normal(scale=0.2, size=spec.n_params)
        return design, spec, data, theta

    def test_variance_table_against_loops(self, setup):
        design, spec, data, theta = setup
        var, _ = loop_moments(design, data, spec, theta)
        for k, d in enumerate(enumerate_dtrs(design)):
            for j, t in enumerate(TIMES):
                assert estimate_sigma(data, design, spec, theta, d, t) ** 2 == pytest.approx(var[k, j], rel=1e-12)

    def test_pooled_sigma(self, setup):
        design, spec, data, theta = setup
        var, _ = loop_moments(design, data, spec, theta)
        vs = estimate_variance_spec(data, design, spec, theta, Pooling.ALL)
        assert vs.sigma ** 2 == pytest.approx(var.mean(), rel=1e-12)

    def test_exchangeable_rho_against_loops(self, setup):
        design, spec, data, theta = setup
        var, cross = loop_moments(design, data, spec, theta)
        vs = estimate_variance_spec(data, design, spec, theta, Pooling.ALL)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fits = estimate_rho("exchangeable", data, design, spec, theta, vs, common=False)
        for k, d in enumerate(enumerate_dtrs(design)):
            expect = cross[k] / (vs.sigma ** 2 * data.n * 3)
            expect = np.clip(expect, -0.5 + 1e-6, 1 - 1e-6)
            assert fits[d].rho == pytest.approx(expect, rel=1e-10)

    def test_common_rho_is_mean(self, setup):
        design, spec, data, theta = setup
        vs = estimate_variance_spec(data, design, spec, theta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            per = estimate_rho("ar1", data, design, spec, theta, vs, common=False)
            common = estimate_rho("ar1", data, design, spec, theta, vs, common=True)
        vals = {round(c.rho, 12) for c in common.values()}
        assert len(vals) == 1
        assert vals.pop() == pytest.approx(np.mean([c.rho for c in per.values()]), abs=1e-10)

    def test_pooling_modes(self):
        v = np.array([[1.0, 2.0, 3.0], [5.0, 6.0, 7.0]])
        np.testing.assert_allclose(pool_variances(v, "all"), 4.0)
        np.testing.assert_allclose(pool_variances(v, "time"), [[2, 2, 2], [6, 6, 6]])
        np.testing.assert_allclose(pool_variances(v, "dtr"), [[3, 4, 5], [3, 4, 5]])
        np.testing.assert_allclose(pool_variances(v, "none"), v)

    def test_too_few_weights(self):
        W = np.ones((3, 1))
        with pytest.raises(CovarianceError):
            variance_table(W, np.zeros((1, 3, 3)), p=7)


class TestClamping:
    def test_exchangeable_clamped_and_flagged(self):
        # perfectly correlated residuals give rho = 1
        E = np.tile(np.array([1.0, 1.0, 1.0]), (1, 10, 1)) * np.linspace(-1, 1, 10)[None, :, None]
        W = np.ones((10, 1))
        sig2 = np.array([np.mean(E ** 2)])
        (fit,) = correlation_estimates("exchangeable", W, E, sig2 * 1.0)
        assert fit.clamped
        assert fit.rho < 1.0
        fit.matrix(3)

    def test_unstructured_projected_to_pd(self):
        rng = np.random.default_rng(3)
        E = rng.normal(size=(1, 4, 3))  # n < T+1: sample matrix is singular
        W = np.ones((4, 1))
        fits = correlation_estimates("unstructured", W, E, np.array([0.05]))
        assert np.linalg.eigvalsh(fits[0].matrix(3))[0] > 0

    def test_warning_emitted(self, rng):
        design = SmartDesign("II")
        spec = MeanModelSpec(design, TIMES, 1.0)
        data = random_trial(design, 30, rng)
        same = np.repeat(data.y[:, :1], 3, axis=1)
        data.y[:] = same
        vs = VarianceSpec(float(np.std(same)) * 0.5)
        with pytest.warns(RuntimeWarning, match="clamped"):
            estimate_rho("exchangeable", data, design, spec, np.zeros(7), vs)

    @settings(max_examples=30, deadline=None)
    @given(scale=st.floats(0.01, 100))
    def test_scale_invariance(self, scale):
        rng = np.random.default_rng(0)
        E = rng.normal(size=(2, 20, 3))
        W = rng.uniform(0, 4, size=(20, 2))
        s2 = variance_table(W, E, 3).mean(axis=1)
        a = correlation_estimates("exchangeable", W, E, s2, common=False)
        b = correlation_estimates("exchangeable", W, scale * E, scale ** 2 * s2, common=False)
        for x, y in zip(a, b):
            assert x.rho == pytest.approx(y.rho, rel=1e-9, abs=1e-12)
