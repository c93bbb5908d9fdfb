"""The acceptance experiments, one function per criterion.

Every function takes keyword parameters (defaults are the shipped settings)
and returns a :class:`CriterionResult`.  A criterion passes only if all of its
checks pass and it finishes inside its time limit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from . import blackboard, bounds, geometry, models, oracle, protocols, risk
from .models import ModelSpec
from .rng import stream


@dataclass
class CriterionResult:
    number: str
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0
    limit_seconds: float = math.inf

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number} ({self.name}): {self.summary} [{self.seconds:.2f}s / {self.limit_seconds:g}s]"

    def to_dict(self) -> dict:
        return {
            "criterion": self.number, "name": self.name, "passed": self.passed, "summary": self.summary,
            "seconds": self.seconds, "limit_seconds": self.limit_seconds, "details": self.details,
        }


def _timed(number: str, name: str, limit: float):
    def wrap(fn: Callable) -> Callable:
        def run(**params) -> CriterionResult:
            start = time.perf_counter()
            ok, summary, details = fn(**params)
            secs = time.perf_counter() - start
            within = secs <= limit
            if not within:
                summary += f"; runtime {secs:.1f}s exceeds {limit:g}s"
            return CriterionResult(number, name, bool(ok and within), summary, details, secs, limit)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        run.number = number
        return run

    return wrap


# ---------------------------------------------------------------------------
# random small instances shared by criteria 1 and 2


def random_finite_model(rng: np.random.Generator, d_max: int = 3, margin: bool = False) -> ModelSpec:
    d = int(rng.integers(1, d_max + 1))
    if rng.random() < 0.5:
        return ModelSpec("product_bernoulli", d)
    # theta0 = 1/(2d) leaves room for cubes of half-width 0.1
    return ModelSpec("multinomial", d, theta0=(0.5 / d,) * d if margin else None)


def random_budgets(rng: np.random.Generator, n_max: int, k_max: int) -> tuple:
    n = int(rng.integers(1, n_max + 1))
    ks = [int(v) for v in rng.integers(0, k_max + 1, size=n)]
    if sum(ks) == 0:
        ks[int(rng.integers(n))] = int(rng.integers(1, k_max + 1))
    return n, tuple(ks)


# ---------------------------------------------------------------------------
# criteria


@_timed("1", "protocol identities", 10.0)
def protocol_identities(trees: int = 1000, n_max: int = 3, k_max: int = 2, seed: int = 0, tol: float = 1e-9,
                        p_fractional: float = 0.3):
    """Total weight 1 and leave-one-out weight ``2^{k_i}`` on random budget-valid trees."""
    rng = stream(seed, 1)
    worst, violations = 0.0, 0
    for j in range(trees):
        model = random_finite_model(rng)
        n, ks = random_budgets(rng, n_max, k_max)
        tree = blackboard.random_tree(n, ks, model, int(rng.integers(2**31)), p_fractional=p_fractional)
        assert blackboard.validate_budget(tree).valid
        inputs = list(models.sample(model, model.theta0_array, n, int(rng.integers(2**31))))
        rep = blackboard.check_protocol_identities(tree, inputs, shared=float(rng.random()))
        worst = max(worst, rep.max_slack)
        violations += not rep.holds(tol)
    return violations == 0, f"{trees} trees, {violations} violations, max slack {worst:.2e}", {
        "trees": trees, "violations": violations, "max_slack": worst}


def bernoulli_forward_bit():
    model = ModelSpec("product_bernoulli", 1)
    tree = blackboard.ProtocolTree(1, 1, [blackboard.Node(0, blackboard.TruthTable((0, 1)))])
    return model, tree


@_timed("2", "information chain", 60.0)
def information_chain(instances: int = 500, n_max: int = 3, k_max: int = 2, d_max: int = 3,
                      deltas=(0.05, 0.1), seed: int = 0, tol: float = 1e-10, closed_tol: float = 1e-9):
    """``0 <= I <= Dbar <= UB`` on random instances plus the one-sensor closed form."""
    rng = stream(seed, 2)
    worst, violations = math.inf, 0
    for j in range(instances):
        model = random_finite_model(rng, d_max, margin=True)
        n, ks = random_budgets(rng, n_max, k_max)
        tree = blackboard.random_tree(n, ks, model, int(rng.integers(2**31)))
        cube = models.hypothesis_cube(model, float(deltas[j % len(deltas)]))
        rep = oracle.kl_chain_quantities(tree, cube)
        s = min(rep.slacks())
        worst = min(worst, s)
        violations += s < -tol
    model, tree = bernoulli_forward_bit()
    rep = oracle.kl_chain_quantities(tree, models.hypothesis_cube(model, 0.1))
    target_i = math.log(2) + 0.6 * math.log(0.6) + 0.4 * math.log(0.4)
    closed = {"I": rep.mutual_information, "Dbar": rep.dbar, "UB": rep.upper_bound, "I_expected": target_i}
    closed_ok = (abs(rep.mutual_information - target_i) <= closed_tol and abs(rep.dbar - target_i) <= closed_tol
                 and abs(rep.upper_bound - 0.04) <= closed_tol)
    ok = violations == 0 and closed_ok
    return ok, (f"{instances} instances, {violations} violations, min slack {worst:.2e}; "
                f"closed form I={rep.mutual_information:.6f} Dbar={rep.dbar:.6f} UB={rep.upper_bound:.6f}"), {
        "instances": instances, "violations": violations, "min_slack": worst, "closed_form": closed}


@_timed("3", "geometry exhaustive", 120.0)
def geometry_exhaustive(dims=(2, 3, 4), tol: float = 1e-12):
    """Every nonempty subset of small hypercubes against the bessel and gaussian bounds."""
    details, ok = {}, True
    for d in dims:
        rep = geometry.exhaustive_hypercube_check(d)
        half_ok = abs(rep.max_norm_half - 1.0) <= tol
        ok &= rep.violations["bessel"] == 0 and rep.violations["gaussian"] == 0 and half_ok
        details[str(d)] = {"subsets": rep.subsets, "violations": rep.violations, "min_slack": rep.min_slack,
                           "max_norm_half": rep.max_norm_half}
    total = sum(v["subsets"] for v in details.values())
    viol = sum(sum(v["violations"].values()) for v in details.values())
    halves = ", ".join(f"d={d}: {v['max_norm_half']:.12f}" for d, v in details.items())
    return ok, f"{total} subsets, {viol} violations; max norm at half size {halves}", details


@_timed("4", "constant-2 near-tightness", 5.0)
def cap_tightness(d: int = 500, threshold: float = 0.95):
    """Best Hamming-ball ratio ``norm^2 / (2 ln(2^d/|A|))`` over all radii."""
    best = geometry.best_cap_ratio(d)
    return best.ratio >= threshold, f"d={d}: best ratio {best.ratio:.5f} at radius {best.t} (need >= {threshold})", {
        "d": d, "best_ratio": best.ratio, "best_radius": best.t, "threshold": threshold}


@_timed("5", "gaussian halfspace bound", 1.0)
def gaussian_halfspace(lo: float = -3.0, hi: float = 3.0, points: int = 601, tol: float = 1e-9):
    """``(phi(t)/Q(t))^2 <= 2 ln(1/Q(t))`` on a grid, via the model-level conditional mean."""
    model = ModelSpec("gaussian_location", 1)
    worst = math.inf
    for t in np.linspace(lo, hi, points):
        (rec,) = geometry.verify_geometric_bounds(model, [geometry.Halfspace((1.0,), float(t))])
        worst = min(worst, rec.slacks["gaussian"])
    return worst >= -tol, f"{points} thresholds, min slack {worst:.3e}", {"min_slack": worst, "points": points}


@_timed("6", "probit grouping constant", 60.0)
def probit_constant(n: int = 20000, d: int = 10, k: int = 1, replications: int = 200, seed: int = 6,
                    band=(1.45, 1.70)):
    """``n * risk / d^2`` at ``theta = 0`` for the one-bit sign protocol."""
    cfg = risk.ExperimentConfig(ModelSpec("gaussian_location", d), "probit_grouping", n, k,
                                replications=replications, seed=seed, experiment_id="c6")
    rep = risk.run_experiment(cfg)
    val = n * rep.sup_risk / d**2
    se = n * rep.sup.se / d**2
    ok = band[0] <= val <= band[1]
    return ok, f"n*risk/d^2 = {val:.4f} +- {se:.4f} (band [{band[0]}, {band[1]}], pi/2 = {math.pi / 2:.4f})", {
        "normalized": val, "se": se, "risk": rep.sup_risk, "band": list(band)}


@_timed("7", "sharded bits exactness", 30.0)
def sharded_exactness(n: int = 800, d: int = 8, k: int = 1, replications: int = 2000, seed: int = 7,
                      z: float = 3.0):
    """Measured risk of per-coordinate sharding against ``d^2/(4nk)`` at ``theta = 1/2``."""
    cfg = risk.ExperimentConfig(ModelSpec("product_bernoulli", d), "sharded_bits", n, k,
                                replications=replications, seed=seed, experiment_id="c7")
    rep = risk.run_experiment(cfg)
    target = d * d / (4 * n * k)
    dev = abs(rep.sup_risk - target) / rep.sup.se
    return dev <= z, f"risk {rep.sup_risk:.6f} (SE {rep.sup.se:.6f}) vs {target:.6f}: {dev:.2f} SE", {
        "risk": rep.sup_risk, "se": rep.sup.se, "target": target, "deviation_se": dev}


def _uniform_simplex(d: int) -> ModelSpec:
    return ModelSpec("multinomial", d, theta0=(1.0 / d,) * d)


def sim_success_frequency(d: int, n: int, k: int, replications: int, seed: int) -> dict:
    model = _uniform_simplex(d)
    bundle = protocols.build("simulate_and_infer", n, k, model)
    theta = model.theta0_array
    succ = sum(bundle.decode(bundle.simulate(theta, stream(seed, d, r))).counters["successes"]
               for r in range(replications))
    total = bundle.groups * replications
    p = bundle.success_probability(theta)
    freq = succ / total
    se = math.sqrt(p * (1 - p) / total)
    return {"d": d, "frequency": freq, "expected": p, "se": se, "deviation_se": abs(freq - p) / se, "groups": total}


def sim_goodness_of_fit(d: int, k: int, successes: int, seed: int, n: int = 200000) -> dict:
    weights = np.arange(1, d + 1, dtype=float)
    theta = weights / weights.sum()
    model = ModelSpec("multinomial", d, theta0=tuple(theta))
    bundle = protocols.build("simulate_and_infer", n, k, model)
    counts = np.zeros(d, dtype=np.int64)
    r = 0
    while counts.sum() < successes:
        idx = bundle.recorded_indices(bundle.simulate(theta, stream(seed, r)))
        counts += np.bincount(idx, minlength=d)
        r += 1
    res = stats.chisquare(counts, theta * counts.sum())
    return {"d": d, "successes": int(counts.sum()), "chi2": float(res.statistic), "p_value": float(res.pvalue)}


@_timed("8", "simulate-and-infer", 600.0)
def simulate_and_infer(freq_dims=(4, 16), freq_n: int = 20000, freq_k: int = 3, freq_reps: int = 20,
                       gof_d: int = 8, gof_k: int = 3, gof_successes: int = 100000, p_min: float = 0.001,
                       k_values=(2, 3, 4, 5), k_sweep_d: int = 64, k_sweep_n: int = 200000,
                       d_values=(8, 16, 32, 64), d_sweep_k: int = 2, replications: int = 1000,
                       slope_tol: float = 0.15, exponent_tol: float = 0.15, seed: int = 8, z: float = 3.0):
    """(a) success frequency, (b) chi-square fit of recorded indices, (c) k-slope and (d) d-exponent."""
    freq = [sim_success_frequency(d, freq_n, freq_k, freq_reps, seed) for d in freq_dims]
    a_ok = all(f["deviation_se"] <= z for f in freq)
    gof = sim_goodness_of_fit(gof_d, gof_k, gof_successes, seed)
    b_ok = gof["p_value"] > p_min
    base = risk.ExperimentConfig(_uniform_simplex(k_sweep_d), "simulate_and_infer", k_sweep_n, k_values[0],
                                 replications=replications, seed=seed, experiment_id="c8k")
    k_reports = risk.sweep(base, "k", k_values)
    k_fit = risk.fit_scaling_exponents(k_reports, ["k"])
    slope = k_fit.coefficients["k"]
    target = -math.log(2)
    c_ok = abs(slope - target) <= slope_tol * abs(target)
    base_d = risk.ExperimentConfig(_uniform_simplex(d_values[-1]), "simulate_and_infer", k_sweep_n, d_sweep_k,
                                   replications=replications, seed=seed + 1, experiment_id="c8d")
    d_reports = risk.sweep(base_d, "d", d_values, couple_n=True)
    d_fit = risk.fit_scaling_exponents(d_reports, ["log d"], offsets={"log n": -1.0})
    expo = d_fit.coefficients["log d"]
    d_ok = abs(expo - 1.0) <= exponent_tol
    summary = (
        "(a) " + ", ".join(f"d={f['d']}: {f['frequency']:.4f} vs {f['expected']:.4f} ({f['deviation_se']:.2f} SE)" for f in freq)
        + f"; (b) chi2 p={gof['p_value']:.3f} at {gof['successes']} successes"
        + f"; (c) k-slope {slope:.4f} (target {target:.4f} +- {slope_tol:.0%})"
        + f"; (d) d-exponent of n*risk {expo:.4f} (target 1 +- {exponent_tol})"
    )
    details = {
        "a": freq, "a_ok": a_ok, "b": gof, "b_ok": b_ok,
        "c": {"slope": slope, "se": k_fit.standard_errors["k"], "risks": [r.sup_risk for r in k_reports if isinstance(r, risk.RiskReport)], "ok": c_ok},
        "d": {"exponent": expo, "se": d_fit.standard_errors["log d"], "risks": [r.sup_risk for r in d_reports if isinstance(r, risk.RiskReport)],
              "n": [r.n for r in d_reports if isinstance(r, risk.RiskReport)], "ok": d_ok},
    }
    return a_ok and b_ok and c_ok and d_ok, summary, details


@_timed("9", "tensor power trick", 1.0)
def tensor_power(B_small: int = 4, B_large: int = 16, max_gap: float = 0.10):
    """Hypercube lift of a halfspace step against ``sqrt(2/pi)``."""
    step = geometry.StepFunction(0.0, 0.5)
    small = geometry.tensor_power_compare(step, B_small)
    large = geometry.tensor_power_compare(step, B_large)
    ok = large.gap < max_gap and large.gap < small.gap
    return ok, (f"B={B_large}: {large.hypercube:.5f} vs {large.gaussian:.5f} (gap {large.gap:.2%}); "
                f"B={B_small}: gap {small.gap:.2%}"), {
        "gaussian": large.gaussian, "hypercube_large": large.hypercube, "gap_large": large.gap,
        "hypercube_small": small.hypercube, "gap_small": small.gap}


@_timed("10", "utilities", 5.0)
def utilities(grid: int = 1000, roundtrip_tol: float = 1e-10, psi2_tol: float = 1e-9):
    """Entropy inverse, the f-entropy inequality, Chernoff domination, Hamming ratios, psi2 norms."""
    ys = np.linspace(0.0, 1.0, grid)
    roundtrip = max(abs(bounds.h2(bounds.h2_inv(float(y))) - y) for y in ys)
    f_slack = min(2 * math.log(2) * (1 - y) - bounds.f_entropy(float(y)) for y in ys)
    _, relaxed = bounds.chernoff_tails(50.0, 0.5, "upper")
    exact = bounds.binomial_upper_tail(100, 1, 2, 75)
    ham = {d: bounds.hamming_ratio(d, d / 5) for d in range(5, 101, 5)}
    ham_ok = all(ham[d] <= math.exp(-d / 8) for d in ham)
    normal = geometry.psi2_norm(geometry.Normal())
    rad = geometry.psi2_norm(geometry.RADEMACHER)
    e_normal = abs(normal / math.sqrt(8 / 3) - 1)
    e_rad = abs(rad * math.sqrt(math.log(2)) - 1)
    checks = {
        "h2_roundtrip": roundtrip <= roundtrip_tol,
        "f_entropy": f_slack >= -1e-12,
        "chernoff": relaxed >= exact,
        "hamming": ham_ok,
        "psi2_normal": e_normal <= psi2_tol,
        "psi2_rademacher": e_rad <= psi2_tol,
    }
    summary = (f"h2 round trip {roundtrip:.1e}; f slack {f_slack:.2e}; Chernoff {relaxed:.3e} >= {exact:.3e}; "
               f"Hamming ok={ham_ok}; psi2 normal rel err {e_normal:.1e}, Rademacher {e_rad:.1e}")
    return all(checks.values()), summary, {"checks": checks, "roundtrip": roundtrip, "f_slack": f_slack,
                                            "chernoff_relaxed": relaxed, "binomial_exact": exact,
                                            "psi2_normal": normal, "psi2_rademacher": rad}


CRITERIA = {
    "1": protocol_identities,
    "2": information_chain,
    "3": geometry_exhaustive,
    "4": cap_tightness,
    "5": gaussian_halfspace,
    "6": probit_constant,
    "7": sharded_exactness,
    "8": simulate_and_infer,
    "9": tensor_power,
    "10": utilities,
}


def run_criterion(number, **params) -> CriterionResult:
    key = str(number)
    if key not in CRITERIA:
        raise KeyError(f"unknown criterion {number!r}; expected one of {sorted(CRITERIA, key=int)}")
    return CRITERIA[key](**params)
