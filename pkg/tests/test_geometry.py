import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from commlim import geometry as geo
from commlim.errors import CapacityError, NoFinitePsi2Error, ParameterDomainError
from commlim.models import ModelSpec

GAUSS1 = ModelSpec("gaussian_location", 1)


class TestConditionalMean:
    def test_hypercube_pair(self):
        A = geo.PointSet(((1, 1, 1, 1), (1, 1, 1, -1)))
        p, n2 = geo.conditional_mean_norm(geo.Hypercube(4), A)
        assert p == pytest.approx(2 / 16)
        assert n2 == pytest.approx(3.0)

    def test_full_space(self):
        p, n2 = geo.conditional_mean_norm(geo.Hypercube(3), geo.Indicator((1,) * 8))
        assert p == 1.0 and n2 == pytest.approx(0.0, abs=1e-15)

    def test_gaussian_tail(self):
        p, n2 = geo.conditional_mean_norm(GAUSS1, geo.Halfspace((1.0,), 1.0))
        q = stats.norm.sf(1.0)
        assert p == pytest.approx(0.15865525393145707, rel=1e-14)
        assert n2 == pytest.approx((stats.norm.pdf(1.0) / q) ** 2, rel=1e-12)
        assert n2 == pytest.approx(2.3259, abs=1e-3)

    def test_gaussian_box_matches_halfspace(self):
        box = geo.Box((1.0, -np.inf), (np.inf, np.inf))
        half = geo.Halfspace((1.0, 0.0), 1.0)
        m = ModelSpec("gaussian_location", 2)
        assert geo.conditional_mean_norm(m, box) == pytest.approx(geo.conditional_mean_norm(m, half), rel=1e-13)

    def test_bernoulli_indicator(self):
        m = ModelSpec("product_bernoulli", 1, theta0=0.5)
        p, n2 = geo.conditional_mean_norm(m, geo.Indicator((0, 1)))
        assert p == pytest.approx(0.5) and n2 == pytest.approx(4.0)

    def test_zero_measure(self):
        with pytest.raises(ParameterDomainError):
            geo.conditional_mean_norm(geo.Hypercube(2), geo.Indicator((0, 0, 0, 0)))


class TestVerifyBounds:
    def test_singleton(self):
        for d in (2, 5, 9):
            A = geo.PointSet(((1,) * d,))
            (rec,) = geo.verify_geometric_bounds(geo.Hypercube(d), [A])
            assert rec.norm2 == pytest.approx(d)
            assert rec.gaussian_bound == pytest.approx(2 * d * math.log(2))
            assert rec.ok

    def test_halfspace_grid(self):
        sets = [geo.Halfspace((1.0,), t) for t in np.linspace(-3, 3, 61)]
        recs = geo.verify_geometric_bounds(GAUSS1, sets, psi2_sigma=geo.score_psi2(GAUSS1))
        assert all(r.ok for r in recs)
        assert min(r.slacks["gaussian"] for r in recs) > 0

    def test_psi2_only_when_given(self):
        (rec,) = geo.verify_geometric_bounds(geo.Hypercube(2), [geo.PointSet(((1, 1),))])
        assert rec.psi2_bound is None
        assert {r["bound_name"] for r in rec.rows()} == {"bessel", "gaussian"}

    def test_gaussian_bound_not_applied_to_skewed_bernoulli(self):
        m = ModelSpec("product_bernoulli", 2, theta0=0.3)
        (rec,) = geo.verify_geometric_bounds(m, [geo.Indicator((1, 0, 0, 0))])
        assert rec.gaussian_bound is None


class TestExhaustive:
    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_no_violations(self, d):
        rep = geo.exhaustive_hypercube_check(d, psi2_sigma=geo.score_psi2(geo.Hypercube(d)))
        assert rep.subsets == 2 ** (2**d) - 1
        assert all(v == 0 for v in rep.violations.values())
        assert rep.max_norm_half == pytest.approx(1.0, abs=1e-12)

    def test_cap(self):
        with pytest.raises(CapacityError):
            geo.exhaustive_hypercube_check(5)


class TestBruteForce:
    def test_half_cube_d3(self):
        res = geo.brute_force_max_norm(3, 4)
        assert res.norm == pytest.approx(1.0, abs=1e-12)
        assert res.exhaustive
        # witness is a facet {x : x_j = c}
        assert any(abs(col.sum()) == 4 for col in np.asarray(res.witness).T)

    def test_edge_d2(self):
        assert geo.brute_force_max_norm(2, 2).norm == pytest.approx(1.0)

    def test_full_cube(self):
        assert geo.brute_force_max_norm(3, 8).norm2 == pytest.approx(0.0, abs=1e-15)

    def test_search_is_lower_bound(self):
        res = geo.brute_force_max_norm(6, 32, search=True, seed=1)
        assert not res.exhaustive
        assert res.norm == pytest.approx(1.0, abs=1e-12)

    def test_large_without_search(self):
        with pytest.raises(CapacityError):
            geo.brute_force_max_norm(6, 32)


class TestCaps:
    def test_d20_t1(self):
        cap = geo.cap_mean_norm(20, 1)
        assert cap.size == 21
        assert cap.norm == pytest.approx(4.046218, abs=1e-6)
        assert cap.norm2 == pytest.approx(16.3719, abs=1e-4)
        assert cap.norm2 <= 2 * math.log(2**20 / 21)

    def test_singleton(self):
        assert geo.cap_mean_norm(17, 0).norm == pytest.approx(math.sqrt(17))

    def test_sweep_matches_direct(self):
        for cap in geo.cap_sweep(31):
            direct = geo.cap_mean_norm(31, cap.t)
            assert (cap.size, cap.norm2) == (direct.size, direct.norm2)

    def test_best_ratio_d500(self):
        best = geo.best_cap_ratio(500)
        assert best.t == 142
        assert best.ratio == pytest.approx(0.92646, abs=5e-6)

    def test_radius_domain(self):
        with pytest.raises(ParameterDomainError):
            geo.cap_mean_norm(10, 5)


class TestPsi2:
    def test_normal(self):
        assert geo.psi2_norm(geo.Normal()) == pytest.approx(math.sqrt(8 / 3), rel=1e-10)

    def test_rademacher(self):
        assert geo.psi2_norm(geo.RADEMACHER) == pytest.approx(1 / math.sqrt(math.log(2)), rel=1e-10)

    def test_uniform_quadrature(self):
        assert geo.psi2_norm(stats.uniform(-1, 2)) == pytest.approx(0.77271, abs=1e-5)

    @pytest.mark.parametrize("dist", [stats.laplace(), stats.t(5), stats.cauchy()])
    def test_heavy_tails(self, dist):
        with pytest.raises(NoFinitePsi2Error):
            geo.psi2_norm(dist)

    def test_scaling(self):
        for dist in (geo.Normal(), geo.RADEMACHER, geo.Discrete((-2.0, 0.5, 3.0), (0.2, 0.5, 0.3))):
            assert geo.psi2_norm(dist.scaled(3.0)) == pytest.approx(3 * geo.psi2_norm(dist), rel=1e-9)

    def test_bernoulli_score(self):
        m = ModelSpec("product_bernoulli", 2)
        assert geo.score_psi2(m) == pytest.approx(2 / math.sqrt(math.log(2)), rel=1e-10)

    @pytest.mark.parametrize("dist", [
        geo.Normal(), geo.RADEMACHER,
        geo.score_law(ModelSpec("product_bernoulli", 1, theta0=0.2)),
        geo.score_law(ModelSpec("multinomial", 3, theta0=(0.1, 0.2, 0.3))),
    ])
    def test_variance_domination(self, dist):
        assert geo.variance_ratio(dist) <= math.log(2) + 1e-12

    def test_variance_ratio_values(self):
        assert geo.variance_ratio(geo.Normal()) == pytest.approx(0.375)
        assert geo.variance_ratio(geo.RADEMACHER) == pytest.approx(math.log(2))


class TestTensorPower:
    def test_constant(self):
        cmp = geo.tensor_power_compare(geo.Constant(), 8)
        assert cmp.hypercube == pytest.approx(0.0, abs=1e-15)
        assert cmp.gaussian == 0.0

    def test_halfspace(self):
        step = geo.StepFunction(0.0)
        big = geo.tensor_power_compare(step, 16)
        small = geo.tensor_power_compare(step, 4)
        assert big.gaussian == pytest.approx(math.sqrt(2 / math.pi))
        assert big.hypercube == pytest.approx(0.785522, abs=1e-6)
        assert big.gap < 0.10
        assert big.gap < small.gap

    def test_generic_callable_uses_quadrature(self):
        cmp = geo.tensor_power_compare(lambda x: np.exp(np.asarray(x)), 12)
        # E[Z e^Z] / E[e^Z] = 1 for a standard normal
        assert cmp.gaussian == pytest.approx(1.0, rel=1e-8)

    def test_order_cap(self):
        with pytest.raises(CapacityError):
            geo.tensor_power_compare(geo.StepFunction(), 21)


class TestGeometryProperties:
    @given(st.integers(1, 6), st.data())
    def test_random_subsets_satisfy_all_bounds(self, d, data):
        size = 2**d
        mask = data.draw(st.lists(st.booleans(), min_size=size, max_size=size).filter(any))
        cube = geo.Hypercube(d)
        (rec,) = geo.verify_geometric_bounds(cube, [geo.Indicator(tuple(mask))], psi2_sigma=geo.score_psi2(cube))
        assert rec.ok
        assert rec.norm2 <= min(rec.bessel_bound, rec.psi2_bound, rec.gaussian_bound) + 1e-9

    @given(st.floats(-3, 3), st.floats(0.5, 2.0))
    def test_gaussian_halfspace(self, t, sigma):
        m = ModelSpec("gaussian_location", 1, sigma=sigma)
        (rec,) = geo.verify_geometric_bounds(m, [geo.Halfspace((1.0,), t)], psi2_sigma=geo.score_psi2(m))
        assert rec.ok

    @given(st.floats(0.05, 50), st.lists(st.floats(-5, 5), min_size=1, max_size=5), st.data())
    def test_psi2_homogeneity(self, c, values, data):
        if not any(values):
            return
        w = np.array(data.draw(st.lists(st.floats(0.1, 1), min_size=len(values), max_size=len(values))))
        dist = geo.Discrete(tuple(values), tuple(w / w.sum()))
        assert geo.psi2_norm(dist.scaled(c)) == pytest.approx(c * geo.psi2_norm(dist), rel=1e-9)
        assert geo.psi2_norm(dist.scaled(-c)) == pytest.approx(c * geo.psi2_norm(dist), rel=1e-9)

    @given(st.integers(2, 120), st.data())
    def test_cap_ratio_at_most_one(self, d, data):
        t = data.draw(st.integers(0, (d - 1) // 2))
        assert geo.cap_mean_norm(d, t).ratio <= 1.0
