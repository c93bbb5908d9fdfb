import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from commlim import blackboard as bb
from commlim import models
from commlim.blackboard import Callback, Node, ProtocolTree, Threshold, TruthTable
from commlim.errors import CapacityError, UnsupportedEnumerationError
from commlim.models import ModelSpec

BERN1 = ModelSpec("product_bernoulli", 1)
FORWARD = TruthTable((0, 1))


def two_sensor_forward():
    """Sensor 0 then sensor 1, each forwarding its bit."""
    return ProtocolTree(2, 1, (Node(0, FORWARD, 1, 2), Node(1, FORWARD), Node(1, FORWARD)))


def all_inputs(model, n):
    return list(itertools.product(list(models.sample_space(model)), repeat=n))


class TestValidateBudget:
    def test_valid(self):
        assert bb.validate_budget(two_sensor_forward()).valid

    def test_label_seen_twice(self):
        tree = ProtocolTree(2, 1, (Node(0, FORWARD, 1, 2), Node(0, FORWARD), Node(1, FORWARD)))
        rep = bb.validate_budget(tree)
        assert not rep.valid
        assert rep.violating_path is not None

    def test_random_trees_valid(self):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(1, 4))
            k = tuple(int(v) for v in rng.integers(0, 3, n))
            assert bb.validate_budget(bb.random_tree(n, k, BERN1, seed))


class TestSensorFactor:
    def test_right_exit(self):
        tree = ProtocolTree(1, 1, (Node(0, FORWARD),))
        assert bb.sensor_factor(tree, 0, "1", [1]) == 1.0

    def test_left_exit(self):
        tree = ProtocolTree(1, 1, (Node(0, FORWARD),))
        assert bb.sensor_factor(tree, 0, "0", [1]) == 0.0

    def test_product_sums_to_one(self):
        tree = bb.random_tree(3, (1, 2, 1), ModelSpec("product_bernoulli", 2), 4)
        xs = models.sample_space(ModelSpec("product_bernoulli", 2))
        inputs = [xs[1], xs[3], xs[0]]
        total = 0.0
        for y in range(2**tree.depth):
            ys = bb.transcript_string(y, tree.depth)
            total += np.prod([bb.sensor_factor(tree, j, ys, inputs[j]) for j in range(3)])
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            bb.sensor_factor(two_sensor_forward(), 0, "1", [1])


class TestExecute:
    def test_forward_bit(self):
        assert bb.execute(ProtocolTree(1, 1, (Node(0, FORWARD),)), [[1]]) == "1"

    def test_constant_zero(self):
        zero = TruthTable((0, 0))
        tree = ProtocolTree(2, 1, (Node(0, zero, 1, 2), Node(1, zero), Node(1, zero)))
        for x in all_inputs(BERN1, 2):
            assert bb.execute(tree, x) == "00"

    def test_agrees_with_factorization(self):
        rng = np.random.default_rng(0)
        model = ModelSpec("multinomial", 2)
        xs = models.sample_space(model)
        for t in range(10**4 // 50):
            tree = bb.random_tree(2, (1, 2), model, t)
            for _ in range(50):
                x = [xs[rng.integers(len(xs))] for _ in range(2)]
                y = bb.execute(tree, x)
                assert bb.sensor_factor(tree, 0, y, x[0]) * bb.sensor_factor(tree, 1, y, x[1]) == 1.0

    def test_deterministic(self):
        tree = bb.random_tree(2, 2, ModelSpec("product_bernoulli", 2), 1, p_fractional=0.5)
        x = [np.array([1, 0]), np.array([0, 1])]
        assert bb.execute(tree, x, 77) == bb.execute(tree, x, 77)

    def test_batch_matches_scalar(self):
        model = ModelSpec("gaussian_location", 2)
        tree = bb.random_tree(2, 2, model, 3)
        x = models.sample(model, model.theta0_array, 400, 1).reshape(200, 2, 2)
        batch = bb.execute_batch(tree, x)
        single = [int(bb.execute(tree, list(row)), 2) for row in x]
        assert list(batch) == single


class TestTranscriptDistribution:
    def test_two_forwarders(self):
        np.testing.assert_allclose(bb.transcript_distribution(two_sensor_forward(), BERN1, [0.5]), [0.25] * 4)

    def test_gaussian_threshold(self):
        tree = ProtocolTree(1, 1, (Node(0, Threshold((1.0,), 0.0)),))
        np.testing.assert_allclose(
            bb.transcript_distribution(tree, ModelSpec("gaussian_location", 1), [0.0]), [0.5, 0.5]
        )

    def test_monte_carlo_histogram(self):
        model = ModelSpec("product_bernoulli", 2, theta0=(0.3, 0.6))
        tree = bb.random_tree(3, (2, 1, 1), model, 12)
        exact = bb.transcript_distribution(tree, model, model.theta0_array)
        N = 10**6
        x = models.sample(model, model.theta0_array, 3 * N, 5).reshape(N, 3, 2)
        hist = np.bincount(bb.execute_batch(tree, x), minlength=exact.size) / N
        assert 0.5 * np.abs(hist - exact).sum() < 4e-3

    def test_capacity(self):
        tree = ProtocolTree(1, 25, ())
        with pytest.raises(CapacityError):
            bb.transcript_distribution(tree, BERN1, [0.5])

    def test_callback_unsupported(self):
        tree = ProtocolTree(1, 1, (Node(0, Callback(lambda x, s: 1)),))
        with pytest.raises(UnsupportedEnumerationError):
            bb.transcript_distribution(tree, BERN1, [0.5])

    def test_sensor_relabeling(self):
        m = ModelSpec("product_bernoulli", 1)
        tree = bb.random_tree(2, (1, 2), m, 8)
        swapped = ProtocolTree(
            2, tuple(reversed(tree.budgets)),
            tuple(Node(1 - nd.label, nd.predicate, nd.left, nd.right) for nd in tree.nodes),
        )
        # relabeling sensors while swapping their marginals leaves the law unchanged
        a = bb.transcript_distribution(tree, m, [0.3])
        b = bb.transcript_distribution(swapped, m, [0.3])
        np.testing.assert_allclose(a, b, atol=1e-15)


class TestIdentities:
    def test_heterogeneous_budgets(self):
        model = ModelSpec("product_bernoulli", 1)
        tree = bb.random_tree(2, (1, 2), model, 3)
        rep = bb.check_protocol_identities(tree, [np.array([1]), np.array([0])])
        assert rep.leave_one_out == pytest.approx((2.0, 4.0))
        assert rep.holds()

    def test_negative_control(self):
        bad = ProtocolTree(2, 1, (Node(0, FORWARD, 1, 2), Node(0, FORWARD), Node(1, FORWARD)))
        rep = bb.check_protocol_identities(bad, [np.array([1]), np.array([1])])
        assert not rep.holds()

    def test_json_round_trip(self):
        model = ModelSpec("gaussian_location", 2)
        tree = bb.random_tree(2, 2, model, 9)
        back = bb.from_json(bb.to_json(tree))
        assert back == tree

    def test_fractional_round_trip(self):
        tree = bb.random_tree(2, 1, ModelSpec("multinomial", 2), 2, p_fractional=1.0)
        assert bb.from_json(bb.to_json(tree)) == tree


class TestRandomTree:
    def test_single_node(self):
        tree = bb.random_tree(1, 1, BERN1, 0)
        assert len(tree.nodes) == 1 and tree.nodes[0].label == 0

    def test_some_interactive(self):
        count = sum(bb.is_interactive(bb.random_tree(3, 2, BERN1, s)) for s in range(50))
        assert count > 25

    def test_cap(self):
        with pytest.raises(CapacityError):
            bb.random_tree(5, 5, BERN1, 0)


@st.composite
def tree_and_inputs(draw):
    family = draw(st.sampled_from(["product_bernoulli", "multinomial"]))
    d = draw(st.integers(1, 3))
    model = ModelSpec(family, d)
    n = draw(st.integers(1, 3))
    budgets = tuple(draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)))
    seed = draw(st.integers(0, 2**32 - 1))
    tree = bb.random_tree(n, budgets, model, seed, p_fractional=draw(st.floats(0, 1)))
    space = models.sample_space(model)
    inputs = [space[draw(st.integers(0, len(space) - 1))] for _ in range(n)]
    return model, tree, inputs


class TestBlackboardProperties:
    @given(tree_and_inputs())
    def test_total_weight_identities(self, case):
        _, tree, inputs = case
        assert bb.check_protocol_identities(tree, inputs).holds(1e-9)

    @given(tree_and_inputs())
    def test_distribution_sums_to_one(self, case):
        model, tree, _ = case
        p = bb.transcript_distribution(tree, model, model.theta0_array)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= 0)
