import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from commlim import models
from commlim.errors import ParameterDomainError, SingularFisherError
from commlim.models import ModelSpec


def _enumerated_moments(model):
    xs = models.sample_space(model)
    p = models.pmf(model, model.theta0_array)
    s = models.score(model, xs)
    return p, s


class TestModelSpec:
    def test_defaults(self):
        assert ModelSpec("product_bernoulli", 3).theta0 == (0.5, 0.5, 0.5)
        assert ModelSpec("multinomial", 3).theta0 == (0.25, 0.25, 0.25)
        assert ModelSpec("gaussian_location", 2).theta0 == (0.0, 0.0)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            ModelSpec("gaussian", 2)

    def test_sparse_needs_s(self):
        with pytest.raises(ValueError):
            ModelSpec("sparse_gaussian", 4)
        with pytest.raises(ValueError):
            ModelSpec("sparse_gaussian", 4, s=3)

    def test_bernoulli_theta0_must_be_interior_range(self):
        with pytest.raises(ParameterDomainError):
            ModelSpec("product_bernoulli", 2, theta0=(0.5, 1.5))

    def test_dict_round_trip(self):
        m = ModelSpec("multinomial", 3, theta0=(0.1, 0.2, 0.3))
        assert ModelSpec.from_dict(m.to_dict()) == m

    def test_uniform_keyword(self):
        m = ModelSpec.from_dict({"family": "multinomial", "d": 4, "theta0": "uniform"})
        assert m.theta0 == (0.25,) * 4

    def test_with_d(self):
        assert ModelSpec("product_bernoulli", 2, theta0=0.3).with_d(5).theta0 == (0.3,) * 5


class TestSample:
    def test_degenerate_bernoulli(self):
        out = models.sample(ModelSpec("product_bernoulli", 4), np.ones(4), 5, 11)
        assert out.shape == (5, 4)
        assert np.all(out == 1)

    def test_point_mass_multinomial(self):
        out = models.sample(ModelSpec("multinomial", 2), (1.0, 0.0), 3, 5)
        assert list(out) == [1, 1, 1]

    def test_gaussian_mean_clt(self):
        x = models.sample(ModelSpec("gaussian_location", 1), [0.0], 10**6, 123)
        assert abs(x.mean()) < 4e-3

    def test_deterministic_given_seed(self):
        m = ModelSpec("product_bernoulli", 3)
        a = models.sample(m, [0.2, 0.5, 0.7], 50, 9)
        b = models.sample(m, [0.2, 0.5, 0.7], 50, 9)
        assert np.array_equal(a, b)

    def test_out_of_simplex(self):
        with pytest.raises(ParameterDomainError):
            models.sample(ModelSpec("multinomial", 2), (0.7, 0.6), 3, 0)

    def test_out_of_unit_interval(self):
        with pytest.raises(ParameterDomainError):
            models.sample(ModelSpec("product_bernoulli", 2), (-0.1, 0.5), 3, 0)


class TestScore:
    def test_gaussian_identity(self):
        np.testing.assert_allclose(models.score(ModelSpec("gaussian_location", 2), [0.3, -1.2]), [0.3, -1.2])

    def test_bernoulli_half(self):
        # bit 1 is +1 in the signed coding: (1 + 0) / (2 * 1/4)
        assert models.score(ModelSpec("product_bernoulli", 1), [1])[0] == pytest.approx(2.0)

    def test_multinomial_last_outcome(self):
        m = ModelSpec("multinomial", 2, theta0=(1 / 3, 1 / 3))
        np.testing.assert_allclose(models.score(m, 3), [-3.0, -3.0])

    @pytest.mark.parametrize("model", [
        ModelSpec("product_bernoulli", 3, theta0=(0.2, 0.5, 0.9)),
        ModelSpec("multinomial", 3, theta0=(0.1, 0.3, 0.2)),
    ])
    def test_mean_zero_and_fisher_by_enumeration(self, model):
        p, s = _enumerated_moments(model)
        np.testing.assert_allclose(p @ s, 0.0, atol=1e-12)
        cov = (s * p[:, None]).T @ s
        np.testing.assert_allclose(cov, models.fisher_info(model).matrix, atol=1e-12, rtol=1e-12)

    def test_gaussian_mean_and_covariance_monte_carlo(self):
        m = ModelSpec("gaussian_location", 2, sigma=2.0)
        x = models.sample(m, m.theta0_array, 200000, 1)
        s = models.score(m, x)
        se = s.std(axis=0) / math.sqrt(len(s))
        assert np.all(np.abs(s.mean(axis=0)) < 4 * se)
        np.testing.assert_allclose(np.cov(s.T), models.fisher_info(m).matrix, atol=0.01)


class TestFisher:
    def test_bernoulli(self):
        f = models.fisher_info(ModelSpec("product_bernoulli", 3))
        np.testing.assert_allclose(f.matrix, 4 * np.eye(3))
        assert f.per_coordinate == pytest.approx(4.0)

    def test_gaussian(self):
        np.testing.assert_allclose(models.fisher_info(ModelSpec("gaussian_location", 2, sigma=2.0)).matrix,
                                   0.25 * np.eye(2))

    def test_multinomial(self):
        m = ModelSpec("multinomial", 2, theta0=(1 / 3, 1 / 3))
        np.testing.assert_allclose(models.fisher_info(m).matrix, [[6, 3], [3, 6]], atol=1e-12)

    def test_boundary_is_singular(self):
        with pytest.raises(SingularFisherError):
            models.fisher_info(ModelSpec("multinomial", 2, theta0=(0.5, 0.5)))

    def test_multinomial_bessel_is_top_eigenvalue(self):
        m = ModelSpec("multinomial", 2, theta0=(1 / 3, 1 / 3))
        assert models.bessel_constant(m) == pytest.approx(9.0)


class TestLikelihoodRatio:
    def test_identity(self):
        m = ModelSpec("multinomial", 3)
        for x in (1, 2, 3, 4):
            assert models.likelihood_ratio(m, m.theta0_array, x) == pytest.approx(1.0)

    def test_bernoulli_value(self):
        assert models.likelihood_ratio(ModelSpec("product_bernoulli", 1), [0.6], [1]) == pytest.approx(1.2)

    def test_multinomial_value(self):
        m = ModelSpec("multinomial", 2, theta0=(1 / 3, 1 / 3))
        assert models.likelihood_ratio(m, [0.4, 1 / 3], 1) == pytest.approx(1.2)

    def test_zero_density_is_zero(self):
        m = ModelSpec("multinomial", 2, theta0=(1 / 3, 1 / 3))
        assert models.likelihood_ratio(m, [0.0, 0.5], 1) == 0.0

    def test_reweighting_recovers_pmf(self):
        m = ModelSpec("product_bernoulli", 2, theta0=(0.3, 0.6))
        theta = np.array([0.35, 0.5])
        xs = models.sample_space(m)
        lr = np.array([models.likelihood_ratio(m, theta, x) for x in xs])
        p0 = models.pmf(m, m.theta0_array)
        np.testing.assert_allclose(lr * p0, models.pmf(m, theta), atol=1e-12)
        assert float(lr @ p0) == pytest.approx(1.0, abs=1e-12)


class TestHypothesisCube:
    def test_bernoulli_corners(self):
        cube = models.hypothesis_cube(ModelSpec("product_bernoulli", 2), 0.1)
        params = cube.parameters()
        assert len(cube) == 4
        assert set(np.round(params.ravel(), 12)) == {0.4, 0.6}
        assert len({tuple(p) for p in params}) == 4

    def test_sparse_count(self):
        cube = models.hypothesis_cube(ModelSpec("gaussian_location", 4), 0.1, sparse=(1, 0))
        assert len(cube) == 8
        assert np.all(np.count_nonzero(cube.parameters(), axis=1) == 1)

    def test_sparse_count_general(self):
        cube = models.hypothesis_cube(ModelSpec("gaussian_location", 6), 0.2, sparse=(2, 3))
        assert len(cube) == 4 * math.comb(6, 2)

    def test_zero_delta(self):
        cube = models.hypothesis_cube(ModelSpec("product_bernoulli", 3), 0.0)
        assert np.all(cube.parameters() == 0.5)

    def test_margin_error_names_coordinate(self):
        m = ModelSpec("product_bernoulli", 3, theta0=(0.5, 0.05, 0.5))
        with pytest.raises(ParameterDomainError) as info:
            models.hypothesis_cube(m, 0.1)
        assert info.value.coordinate == 1
        assert "coordinate 1" in str(info.value)

    def test_multinomial_dependent_mass(self):
        with pytest.raises(ParameterDomainError) as info:
            models.hypothesis_cube(ModelSpec("multinomial", 3), 0.1)
        assert info.value.coordinate == 3


class TestModelProperties:
    @given(st.lists(st.floats(0.05, 0.95), min_size=1, max_size=4))
    def test_bernoulli_pmf_sums_to_one(self, theta):
        m = ModelSpec("product_bernoulli", len(theta))
        assert float(models.pmf(m, theta).sum()) == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5))
    def test_multinomial_score_covariance(self, w):
        w = np.array(w)
        theta0 = tuple(w[:-1] / w.sum())
        m = ModelSpec("multinomial", len(theta0), theta0=theta0)
        p, s = _enumerated_moments(m)
        fisher = models.fisher_info(m).matrix
        np.testing.assert_allclose(p @ s, 0.0, atol=1e-9)
        np.testing.assert_allclose((s * p[:, None]).T @ s, fisher, rtol=1e-10, atol=1e-10)
