"""Constant-free lower-bound rates, Fano's inequality, entropy and tail utilities.

Rates drop the unspecified universal constant; they are meant to be compared
with measured risks as ratios.  Logs are natural unless stated otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Optional

from .errors import InapplicableBoundError, ParameterDomainError

THEOREMS = (
    "thm1_general",
    "thm2_subgaussian",
    "cor3_multinomial",
    "cor4_gaussian",
    "prop5_bernoulli_cube",
    "prop5_bernoulli_simplex",
    "thm6_sparse",
)


class PreconditionWarning(UserWarning):
    """A rate was evaluated outside the regime where the lower bound is stated."""


@dataclass(frozen=True)
class RateQuery:
    theorem: str
    n: int
    d: int
    k: int
    s: Optional[int] = None
    i0: Optional[float] = None
    sigma2: Optional[float] = None
    R: Optional[float] = None  # score diameter, only used to flag thm2's side condition

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ValueError(f"unknown theorem {self.theorem!r}; expected one of {THEOREMS}")
        for name in ("n", "d", "k"):
            if getattr(self, name) <= 0:
                raise ParameterDomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.theorem == "thm1_general" and not (self.i0 and self.i0 > 0):
            raise ParameterDomainError("thm1_general needs a positive i0")
        if self.theorem == "thm2_subgaussian" and not (self.sigma2 and self.sigma2 > 0):
            raise ParameterDomainError("thm2_subgaussian needs a positive sigma2")
        if self.theorem == "thm6_sparse" and not (self.s and self.s > 0):
            raise ParameterDomainError("thm6_sparse needs a positive s")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise ParameterDomainError(f"sigma2 must be positive, got {self.sigma2}")

    def unmet_preconditions(self) -> list:
        """Human-readable list of the stated side conditions that fail."""
        n, d, k = self.n, self.d, self.k
        out = []
        two_k = min(2**k, d)
        lin_k = min(k, d)
        if self.theorem in ("thm1_general", "cor3_multinomial", "prop5_bernoulli_simplex") and n < d * d / two_k:
            out.append(f"n >= d^2/(2^k ^ d) = {d * d / two_k:g}")
        if self.theorem in ("thm2_subgaussian", "cor4_gaussian", "prop5_bernoulli_cube") and n < d * d / lin_k:
            out.append(f"n >= d^2/(k ^ d) = {d * d / lin_k:g}")
        if self.theorem in ("thm2_subgaussian", "cor4_gaussian", "thm6_sparse") and k < math.log(d):
            out.append(f"k >= log d = {math.log(d):g}")
        if self.theorem == "thm2_subgaussian":
            if self.R is not None and k < (self.R**2 / self.sigma2):
                out.append(f"k >= (R/sigma)^2 = {self.R**2 / self.sigma2:g}")
            if self.sigma2 > d:
                out.append("sigma^2 <= d")
        if self.theorem == "thm6_sparse":
            s = self.s
            if s > d / 2:
                out.append("s <= d/2")
            need = s * d * math.log(d / s) / lin_k
            if n < need:
                out.append(f"n >= s d log(d/s)/(k ^ d) = {need:g}")
        return out


def lower_rate(q: RateQuery) -> float:
    """The bracketed rate of the chosen statement with the constant omitted.

    Unmet side conditions raise a :class:`PreconditionWarning`; the formula is
    evaluated anyway.
    """
    for msg in q.unmet_preconditions():
        warnings.warn(f"{q.theorem}: precondition {msg} not met", PreconditionWarning, stacklevel=2)
    n, d, k = q.n, q.d, q.k
    sigma2 = 1.0 if q.sigma2 is None else q.sigma2
    if q.theorem == "thm1_general":
        return d * d / (n * min(2**k, d) * q.i0)
    if q.theorem == "thm2_subgaussian":
        return d * d / (n * min(k, d) * q.sigma2)
    if q.theorem in ("cor3_multinomial", "prop5_bernoulli_simplex"):
        return max(d / (n * 2**k), 1.0 / n)
    if q.theorem == "cor4_gaussian":
        return max(d * d / (n * k), d / n) * sigma2
    if q.theorem == "prop5_bernoulli_cube":
        return max(d * d / (n * k), d / n)
    s = q.s
    ell = math.log(d / s)
    return max(s * d * ell / (n * k), s * ell / n) * sigma2


# ---------------------------------------------------------------------------
# Fano


def fano_bound(card_v: int, n_max: int, info: float, n_min: Optional[int] = None) -> float:
    """Lower bound on ``P(dist(V, V_hat) > t)`` from the distance-based Fano inequality.

    ``n_max``/``n_min`` are the largest/smallest ``t``-ball sizes in ``V``;
    ``n_min`` defaults to ``n_max`` (vertex-transitive families).
    """
    n_min = n_max if n_min is None else n_min
    if not (0 < n_min <= n_max and n_max + n_min < card_v):
        raise InapplicableBoundError(f"need N_max + N_min < |V|, got {n_max} + {n_min} vs {card_v}")
    if info < 0:
        raise ParameterDomainError(f"mutual information must be nonnegative, got {info}")
    val = 1.0 - (info + math.log(2)) / math.log(card_v / n_max)
    return min(1.0, max(0.0, val))


def testing_lower_bound(d: int, delta: float, info: float, scale: Optional[float] = None) -> float:
    """``(d delta^2 / 10) (1 - (I + ln 2)/(d/8))`` for the ``{+-1}^d`` cube at ``t = d/5``.

    ``scale`` replaces ``d`` as the risk prefactor's dimension (``s`` for sparse
    families); the value is not clamped so the raw expression can be reproduced.
    """
    dim = d if scale is None else scale
    return dim * delta**2 / 10.0 * (1.0 - (info + math.log(2)) / (d / 8.0))


# ---------------------------------------------------------------------------
# entropy


def h2(x: float) -> float:
    """Binary entropy in bits."""
    if not 0.0 <= x <= 1.0:
        raise ParameterDomainError(f"h2 needs x in [0, 1], got {x}")
    if x in (0.0, 1.0):
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def h2_inv(y: float, tol: float = 1e-13) -> float:
    """Inverse of ``h2`` restricted to ``[0, 1/2]``, by bisection."""
    if not 0.0 <= y <= 1.0:
        raise ParameterDomainError(f"h2_inv needs y in [0, 1], got {y}")
    # h2 is flat at 1/2, so h2(1/2 - eps) rounds to 1 for eps ~ 1e-8
    if y == 1.0:
        return 0.5
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h2(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def f_entropy(y: float) -> float:
    """``(1 - 2 h2_inv(y))^2``; compare against ``2 ln 2 (1 - y)``."""
    return (1.0 - 2.0 * h2_inv(y)) ** 2


# ---------------------------------------------------------------------------
# tails and counting


def chernoff_tails(lam: float, delta: float, side: str = "upper") -> tuple:
    """``(tight, relaxed)`` Chernoff bounds for ``P(X >= (1+delta) lam)`` or
    ``P(X <= (1-delta) lam)`` with ``X`` Poisson or binomial of mean ``lam``."""
    if lam <= 0:
        raise ParameterDomainError(f"lambda must be positive, got {lam}")
    if side == "upper":
        if delta <= 0:
            raise ParameterDomainError(f"upper tail needs delta > 0, got {delta}")
        log_tight = lam * (delta - (1 + delta) * math.log1p(delta))
        relaxed = math.exp(-min(delta * delta, delta) * lam / 3.0)
    elif side == "lower":
        if not 0 < delta < 1:
            raise ParameterDomainError(f"lower tail needs delta in (0, 1), got {delta}")
        log_tight = lam * (-delta - (1 - delta) * math.log1p(-delta))
        relaxed = math.exp(-delta * delta * lam / 2.0)
    else:
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    return math.exp(log_tight), relaxed


def binomial_upper_tail(n: int, num: int, den: int, m: int) -> float:
    """Exact ``P(Bin(n, num/den) >= m)`` via integer arithmetic."""
    total = sum(comb(n, j) * num**j * (den - num) ** (n - j) for j in range(max(m, 0), n + 1))
    return total / den**n


def hamming_ball_volume(d: int, t: float) -> int:
    """Number of points of ``{+-1}^d`` within Hamming distance ``t`` of a point."""
    if d < 0:
        raise ParameterDomainError(f"d must be nonnegative, got {d}")
    r = min(int(math.floor(t)), d)
    return sum(comb(d, j) for j in range(r + 1)) if r >= 0 else 0


def hamming_ratio(d: int, t: float) -> float:
    """``|ball(t)| / 2^d`` computed from exact integers."""
    return float(Fraction(hamming_ball_volume(d, t), 2**d))


@dataclass(frozen=True)
class SparseCounts:
    family_size: int
    n_max: int  # exact ball size under the Hamming metric on {0,+-1}^d
    coarse_sum: int  # the coarser sum over u + v <= t without sign factors
    extras: dict = field(default_factory=dict)


def sparse_family_counts(d: int, s: int, t: float) -> SparseCounts:
    """Size of ``{u in {0,+-1}^d : ||u||_0 = s}`` and its ``t``-ball sizes.

    A member ``u'`` at distance ``a + 2v`` from ``u`` flips ``a`` shared signs,
    drops ``v`` support coordinates and adds ``v`` new ones with free signs.
    """
    if not 0 < s <= d / 2:
        raise ParameterDomainError(f"need 0 < s <= d/2, got s={s}, d={d}")
    r = int(math.floor(t))
    size = 2**s * comb(d, s)
    exact = 0
    for v in range(0, s + 1):
        for a in range(0, s - v + 1):
            if a + 2 * v <= r:
                exact += comb(s, v) * comb(s - v, a) * comb(d - s, v) * 2**v
    coarse = 0
    for u in range(0, s + 1):
        for v in range(0, s - u + 1):
            if u + v <= r:
                coarse += comb(s, u) * comb(s - u, v) * comb(d - s, v)
    return SparseCounts(size, exact, coarse, {"log_ratio": math.log(size) - math.log(exact)})
