import math

import numpy as np
import pytest
from scipy import stats

from commlim import blackboard as bb
from commlim import models, protocols
from commlim.errors import DecodeError, InsufficientBudgetError
from commlim.models import ModelSpec


def simplex(d, theta=None):
    theta0 = tuple(np.full(d, 1.0 / d)) if theta is None else tuple(theta)
    return ModelSpec("multinomial", d, theta0=theta0)


class TestShardedRawBits:
    def test_tree_budget_valid(self):
        b = protocols.build_sharded_raw_bits(3, 2, ModelSpec("product_bernoulli", 4))
        assert bb.validate_budget(b.tree())

    def test_insufficient_budget(self):
        with pytest.raises(InsufficientBudgetError):
            protocols.build_sharded_raw_bits(2, 1, ModelSpec("product_bernoulli", 3))

    def test_expected_risk_closed_form(self):
        d, n, k = 8, 800, 1
        b = protocols.build_sharded_raw_bits(n, k, ModelSpec("product_bernoulli", d))
        assert b.expected_risk(np.full(d, 0.5)) == pytest.approx(d * d / (4 * n * k))

    def test_one_report_per_coordinate(self):
        d = 5
        b = protocols.build_sharded_raw_bits(d, 1, ModelSpec("product_bernoulli", d))
        assert b.expected_risk(np.full(d, 0.5)) == pytest.approx(d / 4)

    def test_all_ones(self):
        b = protocols.build_sharded_raw_bits(4, 2, ModelSpec("product_bernoulli", 3))
        np.testing.assert_array_equal(protocols.estimate(b, "1" * 8).theta, np.ones(3))

    def test_unbiased(self):
        d = 4
        model = ModelSpec("product_bernoulli", d)
        b = protocols.build_sharded_raw_bits(8, 1, model)
        theta = np.array([0.1, 0.4, 0.6, 0.8])
        rng = np.random.default_rng(3)
        est = np.array([b.decode(b.simulate(theta, rng)).theta for _ in range(10**5)])
        se = est.std(axis=0) / math.sqrt(len(est))
        assert np.all(np.abs(est.mean(axis=0) - theta) < 4 * se)

    def test_encode_matches_tree(self):
        model = ModelSpec("product_bernoulli", 3)
        b = protocols.build_sharded_raw_bits(3, 2, model)
        x = models.sample(model, [0.3, 0.5, 0.7], 3, 4)
        assert protocols.execute_tree(b, list(x)) == "".join(map(str, b.encode(x).ravel()))


class TestProbitGrouping:
    def test_half_maps_to_zero(self):
        b = protocols.build_probit_grouping(4, 1, ModelSpec("gaussian_location", 2))
        np.testing.assert_allclose(b.decode("1100").theta, [0.0, 0.0], atol=1e-15)

    def test_all_positive_is_finite(self):
        b = protocols.build_probit_grouping(3, 1, ModelSpec("gaussian_location", 1), clamp=10.0)
        theta = b.decode("111").theta
        assert theta[0] == pytest.approx(stats.norm.ppf(5 / 6))

    def test_consistency(self):
        m = 10**5
        model = ModelSpec("gaussian_location", 1)
        b = protocols.build_probit_grouping(m, 1, model)
        est = b.decode(b.simulate([0.4], 2)).theta
        assert abs(est[0] - 0.4) < 0.01

    def test_tree_matches_encode(self):
        model = ModelSpec("gaussian_location", 3)
        b = protocols.build_probit_grouping(3, 2, model)
        x = models.sample(model, [0.1, -0.2, 0.3], 3, 8)
        assert bb.validate_budget(b.tree())
        assert protocols.execute_tree(b, list(x)) == "".join(map(str, b.encode(x).ravel()))

    def test_needs_gaussian(self):
        with pytest.raises(ValueError):
            protocols.build_probit_grouping(4, 1, ModelSpec("product_bernoulli", 2))


class TestSimulateAndInfer:
    def test_success_probability_uniform(self):
        b = protocols.build_simulate_and_infer(100, 3, simplex(4))
        assert b.success_probability(np.full(4, 0.25)) == pytest.approx(0.75**4)
        assert b.success_probability(np.full(4, 0.25)) == pytest.approx(0.31640625)

    def test_k1_rejected(self):
        with pytest.raises(InsufficientBudgetError):
            protocols.build_simulate_and_infer(100, 1, simplex(4))

    def test_no_complete_group(self):
        with pytest.raises(InsufficientBudgetError):
            protocols.build_simulate_and_infer(3, 2, simplex(4))

    def test_group_arithmetic(self):
        b = protocols.build_simulate_and_infer(101, 3, simplex(16))
        assert (b.block, b.m, b.group) == (6, 3, 6)
        assert b.groups == 16 and b.idle == 5
        small = protocols.build_simulate_and_infer(10, 3, simplex(4))
        assert (small.block, small.m) == (4, 1)

    def test_point_mass_is_degenerate(self):
        model = ModelSpec("multinomial", 4, theta0=(0.2, 0.2, 0.2, 0.2))
        b = protocols.build_simulate_and_infer(40, 2, model)
        dec = b.decode(b.simulate(np.zeros(4), 0))
        assert dec.degenerate
        assert dec.counters["successes"] == 0
        np.testing.assert_allclose(dec.theta, np.full(4, 0.2))

    def test_decode_shape_mismatch(self):
        b = protocols.build_simulate_and_infer(8, 2, simplex(4))
        with pytest.raises(DecodeError):
            b.decode("0101")

    @pytest.mark.parametrize("theta", [(0.25, 0.25, 0.25, 0.25), (0.1, 0.2, 0.3, 0.4), (0.05, 0.5, 0.05, 0.4)])
    def test_exact_enumeration(self, theta):
        """Enumerate every transcript of one group (d=4, k=2, m=2)."""
        theta = np.array(theta)
        b = protocols.build_simulate_and_infer(4, 2, simplex(4))
        assert b.m == 2
        tree = b.tree()
        assert bb.validate_budget(tree)
        py = bb.transcript_distribution(tree, b.sampling_model, theta)
        index_mass = np.zeros(4)
        for y, p in enumerate(py):
            if p > 0:
                idx = b.recorded_indices(bb.transcript_string(y, tree.depth))
                if idx.size:
                    index_mass[idx[0]] += p
        success = index_mass.sum()
        assert success == pytest.approx(np.prod(1 - theta), abs=1e-12)
        np.testing.assert_allclose(index_mass / success, theta, atol=1e-12)

    def test_tree_matches_encode(self):
        b = protocols.build_simulate_and_infer(5, 2, simplex(4))
        rng = np.random.default_rng(1)
        for _ in range(30):
            x = (rng.random((5, 4)) < 0.3).astype(int)
            assert protocols.execute_tree(b, list(x)) == "".join(map(str, b.encode(x).ravel()))

    def test_success_frequency_monte_carlo(self):
        d = 6
        theta = np.full(d, 1 / d)
        b = protocols.build_simulate_and_infer(6000, 3, simplex(d))
        rng = np.random.default_rng(4)
        succ = sum(b.decode(b.simulate(theta, rng)).counters["successes"] for _ in range(20))
        total = 20 * b.groups
        p = b.success_probability(theta)
        assert abs(succ / total - p) < 3 * math.sqrt(p * (1 - p) / total)


class TestBuild:
    def test_unknown(self):
        with pytest.raises(ValueError):
            protocols.build("nope", 2, 1, ModelSpec("product_bernoulli", 2))

    @pytest.mark.parametrize("name,model", [
        ("sharded_bits", ModelSpec("product_bernoulli", 3)),
        ("probit_grouping", ModelSpec("gaussian_location", 3)),
        ("simulate_and_infer", simplex(3)),
    ])
    def test_output_dimension(self, name, model):
        b = protocols.build(name, 12, 2, model)
        dec = b.decode(b.simulate(model.theta0_array, 0))
        assert dec.theta.shape == (3,)
