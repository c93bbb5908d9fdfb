"""Conditional score means on sets, the inequalities that bound them, and
related extremal computations on the hypercube.

For a set ``A`` with ``P = P0(A)`` the quantity of interest is
``||E[S0 | A]||^2``.  Three upper bounds are checked:

* ``bessel``:   ``I0 (1 - P) / P``              (any model)
* ``psi2``:     ``sigma^2 ln(2 / P)``            (``sigma`` the psi2 norm of the 1-D score)
* ``gaussian``: ``2 I0 ln(1 / P)``               (Rademacher or Gaussian scores only)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from math import comb
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import logsumexp, ndtr

from . import models
from .errors import CapacityError, NoFinitePsi2Error, ParameterDomainError
from .models import ModelSpec

TOL = 1e-9
EXHAUSTIVE_MAX_D = 4
MAX_LIFT = 20


@dataclass(frozen=True)
class Hypercube:
    """Uniform law on ``{+-1}^d`` with score ``S0(x) = x`` (so ``I0 = 1``)."""

    d: int

    def points(self) -> np.ndarray:
        return models._pm_cube(self.d)


Distribution = Union[Hypercube, ModelSpec]


# ---------------------------------------------------------------------------
# subsets


@dataclass(frozen=True)
class PointSet:
    """Explicit list of hypercube points."""

    points: tuple

    def __post_init__(self):
        pts = tuple(tuple(int(v) for v in p) for p in self.points)
        if not pts:
            raise ParameterDomainError("empty point set")
        if any(v not in (-1, 1) for p in pts for v in p):
            raise ParameterDomainError("hypercube points must have +-1 entries")
        object.__setattr__(self, "points", tuple(sorted(set(pts))))


@dataclass(frozen=True)
class Indicator:
    """Truth table over a finite sample space (hypercube order or model order)."""

    table: tuple

    def __post_init__(self):
        object.__setattr__(self, "table", tuple(bool(v) for v in self.table))


@dataclass(frozen=True)
class Halfspace:
    """``{x : w . x >= b}`` for Gaussian models."""

    w: tuple
    b: float

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(v) for v in np.atleast_1d(self.w)))
        if not any(self.w):
            raise ParameterDomainError("halfspace normal must be nonzero")


@dataclass(frozen=True)
class Box:
    """Product of intervals ``[lo_j, hi_j]`` (infinite ends allowed) for Gaussian models."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ParameterDomainError("box needs lo < hi coordinatewise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


SubsetSpec = Union[PointSet, Indicator, Halfspace, Box]


def _q(t):
    return ndtr(-np.asarray(t, dtype=float))


def _interval_mass(a: float, b: float) -> float:
    # difference of tails on the side away from zero keeps relative precision
    if a >= 0:
        return float(_q(a) - _q(b))
    if b <= 0:
        return float(ndtr(b) - ndtr(a))
    return float(1.0 - _q(b) - ndtr(a))


def _phi(t: float) -> float:
    return 0.0 if math.isinf(t) else math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)


def _finite_mean(dist: Distribution, A: SubsetSpec):
    if isinstance(dist, Hypercube):
        pts = dist.points()
        if isinstance(A, PointSet):
            sel = np.array(A.points, dtype=float)
            if sel.shape[1] != dist.d:
                raise ParameterDomainError(f"points have dimension {sel.shape[1]}, cube has {dist.d}")
            return len(sel) / len(pts), sel.mean(axis=0)
        if isinstance(A, Indicator):
            mask = np.array(A.table, dtype=bool)
            if mask.size != len(pts):
                raise ParameterDomainError(f"truth table needs {len(pts)} entries")
            p = mask.mean()
            return p, (pts[mask].mean(axis=0) if p > 0 else np.zeros(dist.d))
        raise ParameterDomainError(f"{type(A).__name__} sets are not defined on the hypercube")
    if not isinstance(A, Indicator):
        raise ParameterDomainError(f"finite models need an Indicator set, got {type(A).__name__}")
    space = models.sample_space(dist)
    mask = np.array(A.table, dtype=bool)
    if mask.size != len(space):
        raise ParameterDomainError(f"truth table needs {len(space)} entries")
    w = models.pmf(dist, dist.theta0_array) * mask
    p = float(w.sum())
    if p <= 0:
        return 0.0, np.zeros(dist.d)
    return p, (w @ models.score(dist, space)) / p


def _gaussian_mean(model: ModelSpec, A: SubsetSpec):
    sigma, t0 = model.sigma, model.theta0_array
    if isinstance(A, Halfspace):
        w = np.array(A.w)
        if w.size != model.d:
            raise ParameterDomainError(f"halfspace normal has dimension {w.size}, model has {model.d}")
        nw = float(np.linalg.norm(w))
        t = (A.b - float(w @ t0)) / (sigma * nw)
        p = float(_q(t))
        return p, (w / nw) * (_phi(t) / p / sigma if p > 0 else 0.0)
    if isinstance(A, Box):
        if len(A.lo) != model.d:
            raise ParameterDomainError(f"box has dimension {len(A.lo)}, model has {model.d}")
        a = (np.array(A.lo) - t0) / sigma
        b = (np.array(A.hi) - t0) / sigma
        masses = np.array([_interval_mass(x, y) for x, y in zip(a, b)])
        p = float(np.prod(masses))
        if p <= 0:
            return 0.0, np.zeros(model.d)
        mean = np.array([(_phi(x) - _phi(y)) / m for x, y, m in zip(a, b, masses)]) / sigma
        return p, mean
    raise ParameterDomainError(f"Gaussian models need Halfspace or Box sets, got {type(A).__name__}")


def conditional_mean(dist: Distribution, A: SubsetSpec) -> tuple:
    """``(P0(A), E[S0 | A])``."""
    if isinstance(dist, ModelSpec) and dist.is_gaussian:
        p, mean = _gaussian_mean(dist, A)
    else:
        p, mean = _finite_mean(dist, A)
    if p <= 0:
        raise ParameterDomainError("set has zero probability")
    return float(p), np.asarray(mean, dtype=float)


def conditional_mean_norm(dist: Distribution, A: SubsetSpec) -> tuple:
    """``(P0(A), ||E[S0 | A]||^2)``."""
    p, mean = conditional_mean(dist, A)
    return p, float(mean @ mean)


# ---------------------------------------------------------------------------
# psi2 norms


@dataclass(frozen=True)
class Discrete:
    values: tuple
    probs: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        p = tuple(float(x) for x in self.probs)
        if len(v) != len(p) or not v or any(x < 0 for x in p) or not math.isclose(sum(p), 1.0, abs_tol=1e-12):
            raise ParameterDomainError("discrete law needs matching values and probabilities summing to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    def scaled(self, c: float) -> "Discrete":
        return Discrete(tuple(c * x for x in self.values), self.probs)

    def variance(self) -> float:
        v, p = np.array(self.values), np.array(self.probs)
        m = p @ v
        return float(p @ (v - m) ** 2)


@dataclass(frozen=True)
class Normal:
    scale: float = 1.0

    def scaled(self, c: float) -> "Normal":
        return Normal(abs(c) * self.scale)

    def variance(self) -> float:
        return self.scale**2


RADEMACHER = Discrete((-1.0, 1.0), (0.5, 0.5))


def _log_mgf_sq(dist, a: float) -> float:
    """``log E[exp(X^2 / a^2)]`` (``inf`` when it diverges)."""
    if isinstance(dist, Normal):
        r = 2.0 * dist.scale**2 / a**2
        return math.inf if r >= 1 else -0.5 * math.log1p(-r)
    if isinstance(dist, Discrete):
        v, p = np.array(dist.values), np.array(dist.probs)
        keep = p > 0
        return float(logsumexp(v[keep] ** 2 / a**2, b=p[keep]))
    lo, hi = dist.support()
    if _diverges(dist, a):
        return math.inf

    def f(x):
        return math.exp(min(x * x / (a * a) + dist.logpdf(x), 700.0))

    val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)
    return math.log(val) if val > 0 else -math.inf


def _far_points(dist) -> list:
    return [x for x in (dist.isf(1e-280), dist.ppf(1e-280)) if np.isfinite(x)]


def _diverges(dist, a: float) -> bool:
    # the integrand must be negligible at the extreme quantiles
    if all(np.isfinite(dist.support())):
        return False
    return any(x * x / (a * a) + dist.logpdf(x) > -30.0 for x in _far_points(dist))


def _tail_is_heavy(dist) -> bool:
    lo, hi = dist.support()
    if np.isfinite(lo) and np.isfinite(hi):
        return False
    rates = []
    for q in (1e-100, 1e-280):
        xs = [x for x in (dist.isf(q), -dist.ppf(q)) if np.isfinite(x) and x > 0]
        if not xs:
            continue
        x = max(xs)
        lp = max(dist.logpdf(x), dist.logpdf(-x))
        rates.append(-lp / x / x)
    # sub-Gaussian tails have -log pdf(x) / x^2 bounded away from zero
    return len(rates) == 2 and rates[1] < 0.5 * rates[0]


def psi2_norm(dist, rtol: float = 1e-12, cap: float = 1e8) -> float:
    """``inf{a > 0 : E exp(X^2/a^2) <= 2}`` for a ``Normal``, ``Discrete`` or
    frozen scipy continuous distribution."""
    # psi2 is absolutely homogeneous: solve at unit scale to avoid under/overflow
    if isinstance(dist, Discrete):
        scale = max(abs(v) for v, p in zip(dist.values, dist.probs) if p > 0)
        if scale == 0:
            return 0.0
        if scale != 1.0:
            return scale * psi2_norm(Discrete(tuple(v / scale for v in dist.values), dist.probs), rtol, cap)
    elif isinstance(dist, Normal):
        if dist.scale == 0:
            return 0.0
        if dist.scale != 1.0:
            return abs(dist.scale) * psi2_norm(Normal(1.0), rtol, cap)
    elif _tail_is_heavy(dist):
        raise NoFinitePsi2Error("tail is heavier than Gaussian; E exp(X^2/a^2) diverges for every a")

    def g(a):
        return _log_mgf_sq(dist, a) - math.log(2.0)

    if isinstance(dist, Normal):
        lo = math.sqrt(2.0) * dist.scale * (1 + 1e-12)
    else:
        # Jensen: E exp(X^2/a^2) >= exp(E X^2 / a^2), so the root is at least this
        second = float(np.dot(dist.probs, np.square(dist.values))) if isinstance(dist, Discrete) else float(dist.moment(2))
        lo = math.sqrt(second / math.log(2.0))
    if g(lo) <= 0:
        return lo  # Jensen is tight when |X| is constant
    hi = 2.0 * lo
    while g(hi) > 0:
        hi *= 2.0
        if hi > cap:
            raise NoFinitePsi2Error(f"E exp(X^2/a^2) > 2 for all a up to {cap}")
    return float(optimize.brentq(g, lo, hi, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps), maxiter=500))


def score_law(dist: Distribution, coordinate: int = 0):
    """Law of one coordinate of the score at ``theta0``."""
    if isinstance(dist, Hypercube):
        return RADEMACHER
    if dist.is_gaussian:
        return Normal(1.0 / dist.sigma)
    t = dist.theta0_array
    if dist.family == "product_bernoulli":
        p = t[coordinate]
        if not 0 < p < 1:
            raise ParameterDomainError(f"score undefined at theta0 = {p}")
        return Discrete((1.0 / p, -1.0 / (1.0 - p)), (p, 1.0 - p))
    last = 1.0 - t.sum()
    tj = t[coordinate]
    if tj <= 0 or last <= 0:
        raise ParameterDomainError("score undefined on the simplex boundary")
    return Discrete((1.0 / tj, -1.0 / last, 0.0), (tj, last, max(0.0, 1.0 - tj - last)))


def score_psi2(dist: Distribution) -> float:
    """Largest psi2 norm over score coordinates."""
    d = dist.d
    if isinstance(dist, Hypercube) or dist.is_gaussian:
        return psi2_norm(score_law(dist))
    return max(psi2_norm(score_law(dist, j)) for j in range(d))


def variance_ratio(dist) -> float:
    """``Var(X) / ||X||_psi2^2``; Jensen gives at most ``ln 2`` for centered ``X``."""
    return dist.variance() / psi2_norm(dist) ** 2


# ---------------------------------------------------------------------------
# bounds and slack reports


def _bessel(dist: Distribution) -> float:
    return 1.0 if isinstance(dist, Hypercube) else models.bessel_constant(dist)


def _gaussian_applies(dist: Distribution) -> bool:
    if isinstance(dist, Hypercube):
        return True
    if dist.is_gaussian:
        return True
    return dist.family == "product_bernoulli" and bool(np.all(dist.theta0_array == 0.5))


@dataclass(frozen=True)
class SlackRecord:
    set_id: str
    P: float
    norm2: float
    bessel_bound: float
    psi2_bound: Optional[float]
    gaussian_bound: Optional[float]
    slacks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(s >= -TOL for s in self.slacks.values())

    def rows(self) -> list:
        bounds = {"bessel": self.bessel_bound, "psi2": self.psi2_bound, "gaussian": self.gaussian_bound}
        return [
            {"set_id": self.set_id, "P": self.P, "norm2": self.norm2, "bound_name": k,
             "bound_value": v, "slack": self.slacks[k]}
            for k, v in bounds.items() if v is not None
        ]


def bounds_for(dist: Distribution, p: float, psi2_sigma: Optional[float] = None) -> dict:
    i0 = _bessel(dist)
    out = {"bessel": i0 * (1.0 - p) / p, "psi2": None, "gaussian": None}
    if psi2_sigma is not None:
        out["psi2"] = psi2_sigma**2 * math.log(2.0 / p)
    if _gaussian_applies(dist):
        out["gaussian"] = 2.0 * i0 * math.log(1.0 / p)
    return out


def verify_geometric_bounds(dist: Distribution, sets: Sequence, psi2_sigma: Optional[float] = None,
                            ids: Optional[Sequence[str]] = None) -> list:
    """One :class:`SlackRecord` per set.  The psi2 bound is used only when
    ``psi2_sigma`` is given (pass ``score_psi2(dist)`` to compute it)."""
    out = []
    for j, A in enumerate(sets):
        p, n2 = conditional_mean_norm(dist, A)
        b = bounds_for(dist, p, psi2_sigma)
        slacks = {k: v - n2 for k, v in b.items() if v is not None}
        out.append(SlackRecord(ids[j] if ids else str(j), p, n2, b["bessel"], b["psi2"], b["gaussian"], slacks))
    return out


# ---------------------------------------------------------------------------
# exhaustive hypercube scans


def _subset_masks(d: int):
    if d > EXHAUSTIVE_MAX_D:
        raise CapacityError(f"exhaustive subset scans are limited to d <= {EXHAUSTIVE_MAX_D}")
    pts = models._pm_cube(d)
    m = len(pts)
    codes = np.arange(1, 2**m, dtype=np.int64)
    member = ((codes[:, None] >> np.arange(m)[None, :]) & 1).astype(np.float64)
    return pts, codes, member


@dataclass(frozen=True)
class ExhaustiveReport:
    d: int
    subsets: int
    min_slack: dict
    violations: dict
    max_norm_half: float


def exhaustive_hypercube_check(d: int, psi2_sigma: Optional[float] = None) -> ExhaustiveReport:
    """Check every nonempty subset of ``{+-1}^d`` against the bessel and
    gaussian bounds (and the psi2 bound when ``psi2_sigma`` is given)."""
    pts, codes, member = _subset_masks(d)
    count = member.sum(axis=1)
    mean = (member @ pts) / count[:, None]
    n2 = np.einsum("ij,ij->i", mean, mean)
    p = count / len(pts)
    with np.errstate(divide="ignore"):
        bounds = {"bessel": (1.0 - p) / p, "gaussian": 2.0 * np.log(1.0 / p)}
        if psi2_sigma is not None:
            bounds["psi2"] = psi2_sigma**2 * np.log(2.0 / p)
    min_slack = {k: float(np.min(v - n2)) for k, v in bounds.items()}
    violations = {k: int(np.sum(v - n2 < -TOL)) for k, v in bounds.items()}
    half = count == len(pts) // 2
    return ExhaustiveReport(d, len(codes), min_slack, violations, float(np.sqrt(n2[half].max())))


@dataclass(frozen=True)
class MaxNormResult:
    norm2: float
    witness: np.ndarray
    exhaustive: bool

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm2)


def brute_force_max_norm(d: int, m: int, search: bool = False, restarts: int = 4, seed: int = 0) -> MaxNormResult:
    """Largest ``||mean(A)||^2`` over ``A`` of size ``m`` in ``{+-1}^d``.

    Exhaustive for ``d <= 4``.  With ``search=True`` larger ``d`` use greedy
    swaps started from Hamming balls; those results are lower bounds only.
    """
    size = 2**d
    if not 1 <= m <= size:
        raise ParameterDomainError(f"set size must be in [1, {size}], got {m}")
    pts = models._pm_cube(d)
    if d <= EXHAUSTIVE_MAX_D:
        best, arg = -1.0, None
        for combo in combinations(range(size), m):
            s = pts[list(combo)].sum(axis=0)
            val = float(s @ s)
            if val > best + 1e-12:
                best, arg = val, combo
        return MaxNormResult(best / m**2, pts[list(arg)], True)
    if not search:
        raise CapacityError(f"d={d} is beyond exhaustive search; pass search=True for a heuristic")
    rng = np.random.default_rng(seed)
    best, arg = -1.0, None
    for r in range(restarts):
        center = np.ones(d) if r == 0 else rng.choice([-1.0, 1.0], size=d)
        dist = (pts != center).sum(axis=1) + 1e-3 * rng.random(size)
        chosen = np.zeros(size, dtype=bool)
        chosen[np.argsort(dist)[:m]] = True
        val, chosen = _greedy_swaps(pts, chosen)
        if val > best:
            best, arg = val, chosen.copy()
    return MaxNormResult(best / m**2, pts[arg], False)


def _greedy_swaps(pts: np.ndarray, chosen: np.ndarray, max_iter: int = 10000):
    s = pts[chosen].sum(axis=0)
    for _ in range(max_iter):
        inside, outside = np.flatnonzero(chosen), np.flatnonzero(~chosen)
        if not outside.size:
            break
        # ||s - a + b||^2 for every swap (a out, b in)
        diff = pts[outside][None, :, :] - pts[inside][:, None, :]
        vals = np.einsum("ijk,ijk->ij", s + diff, s + diff)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        if vals[i, j] <= s @ s + 1e-9:
            break
        chosen[inside[i]], chosen[outside[j]] = False, True
        s = s + diff[i, j]
    return float(s @ s), chosen


# ---------------------------------------------------------------------------
# Hamming balls


@dataclass(frozen=True)
class CapResult:
    d: int
    t: int
    size: int
    norm: float
    norm2: float
    ratio: float  # norm2 / (2 ln(2^d / |A|))


def _cap_from_sums(d: int, t: int, num: int, den: int) -> CapResult:
    # mean coordinate = num / (d * den); norm^2 = d * mean^2, exact until the final division
    norm2 = float(Fraction(num * num, d * den * den))
    log_ratio = d * math.log(2.0) - math.log(den)
    ratio = norm2 / (2.0 * log_ratio) if log_ratio > 0 else math.inf
    return CapResult(d, t, den, math.sqrt(norm2), norm2, ratio)


def cap_mean_norm(d: int, t: int) -> CapResult:
    """Mean of the Hamming ball of radius ``t`` around ``(1,...,1)``, in exact integers."""
    if not 0 <= t < d / 2:
        raise ParameterDomainError(f"need 0 <= t < d/2, got t={t}, d={d}")
    num = sum(comb(d, j) * (d - 2 * j) for j in range(t + 1))
    den = sum(comb(d, j) for j in range(t + 1))
    return _cap_from_sums(d, t, num, den)


def cap_sweep(d: int) -> list:
    """``cap_mean_norm(d, t)`` for every admissible radius, computed incrementally."""
    out, num, den, c = [], 0, 0, 1
    for t in range(0, (d + 1) // 2):
        if t:
            c = c * (d - t + 1) // t
        num += c * (d - 2 * t)
        den += c
        out.append(_cap_from_sums(d, t, num, den))
    return out


def best_cap_ratio(d: int) -> CapResult:
    return max(cap_sweep(d), key=lambda r: r.ratio)


# ---------------------------------------------------------------------------
# tensor power trick


@dataclass(frozen=True)
class StepFunction:
    """``1`` above ``threshold``, ``0`` below and ``at_jump`` exactly at it.

    A value of ``1/2`` at the jump is the pointwise limit of continuous ramps,
    which is the natural stand-in when the lifted sum lands on the threshold.
    """

    threshold: float = 0.0
    at_jump: float = 0.5

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.threshold, 1.0, np.where(x < self.threshold, 0.0, self.at_jump))

    def gaussian(self) -> tuple:
        c = self.threshold
        return _phi(c), float(_q(c))


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __call__(self, x):
        return np.full(np.shape(x), float(self.value))

    def gaussian(self) -> tuple:
        return 0.0, self.value


@dataclass(frozen=True)
class TensorComparison:
    B: int
    hypercube: float
    gaussian: float
    gap: float  # relative to the Gaussian value (absolute when that is 0)


def _gaussian_pair(a) -> tuple:
    if hasattr(a, "gaussian"):
        return a.gaussian()
    f1 = lambda z: z * float(a(z)) * _phi(z)  # noqa: E731
    f0 = lambda z: float(a(z)) * _phi(z)  # noqa: E731
    # normal mass beyond |z| = 40 is below 1e-300; a finite range avoids inf * 0
    def total(f):
        return integrate.quad(f, -40.0, 40.0, points=[0.0], limit=400)[0]

    return total(f1), total(f0)


def tensor_power_compare(a: Callable, B: int, max_order: int = MAX_LIFT) -> TensorComparison:
    """``|E[W a(W)]| / E[a(W)]`` for ``W = sum of B signs / sqrt(B)`` against the
    Gaussian value ``|E[Z a(Z)]| / E[a(Z)]``."""
    if not 1 <= B <= max_order:
        raise CapacityError(f"lift order must be in [1, {max_order}], got {B}")
    m = np.arange(B + 1)
    w = np.array([comb(B, int(j)) for j in m], dtype=float) / 2.0**B
    vals = (2 * m - B) / math.sqrt(B)
    av = np.asarray(a(vals), dtype=float)
    mass = float(w @ av)
    hyp = abs(float(w @ (vals * av))) / mass if mass > 0 else 0.0
    g1, g0 = _gaussian_pair(a)
    gauss = abs(g1) / g0 if g0 > 0 else 0.0
    gap = abs(hyp - gauss) / gauss if gauss > 0 else abs(hyp - gauss)
    return TensorComparison(B, hyp, gauss, gap)
