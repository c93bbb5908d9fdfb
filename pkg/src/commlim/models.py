"""Parametric families, their scores, Fisher information and likelihood ratios.

Observation formats:

* ``gaussian_location`` / ``sparse_gaussian``: real vectors of length ``d``.
* ``product_bernoulli``: bit vectors in ``{0, 1}^d`` (the +-1 coding is used
  only inside :func:`score`).
* ``multinomial``: a single outcome label in ``1..d+1``; the parameter holds
  the ``d`` free probabilities and outcome ``d+1`` carries ``1 - sum(theta)``.

Finite sample spaces are enumerated in a fixed order: bit vector ``x`` has
index ``sum_j x_j 2^j`` and multinomial outcome ``i`` has index ``i - 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import CapacityError, ParameterDomainError, SingularFisherError
from .rng import as_generator

FAMILIES = ("gaussian_location", "product_bernoulli", "multinomial", "sparse_gaussian")
GAUSSIAN_FAMILIES = ("gaussian_location", "sparse_gaussian")
FINITE_FAMILIES = ("product_bernoulli", "multinomial")

MAX_ENUM_DIM = 20
_TOL = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    family: str
    d: int
    sigma: float = 1.0
    s: Optional[int] = None
    theta0: tuple = field(default=None)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if int(self.d) < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.family == "sparse_gaussian":
            if self.s is None or not 1 <= int(self.s) <= self.d / 2:
                raise ValueError(f"sparse_gaussian needs 1 <= s <= d/2, got s={self.s}, d={self.d}")
            object.__setattr__(self, "s", int(self.s))
        theta0 = _default_theta0(self.family, self.d) if self.theta0 is None else self.theta0
        theta0 = np.broadcast_to(np.asarray(theta0, dtype=float), (self.d,))
        object.__setattr__(self, "theta0", tuple(float(t) for t in theta0))
        check_theta(self, self.theta0)

    @property
    def theta0_array(self) -> np.ndarray:
        return np.array(self.theta0)

    @property
    def is_finite(self) -> bool:
        return self.family in FINITE_FAMILIES

    @property
    def is_gaussian(self) -> bool:
        return self.family in GAUSSIAN_FAMILIES

    def space_size(self) -> int:
        if self.family == "product_bernoulli":
            return 2**self.d
        if self.family == "multinomial":
            return self.d + 1
        raise ValueError(f"{self.family} has no finite sample space")

    def with_d(self, d: int) -> "ModelSpec":
        """Same family at another dimension; theta0 is rebuilt by broadcasting
        its first entry (or the family default when all entries coincide)."""
        t = self.theta0
        if self.family == "multinomial":
            theta0 = np.full(d, 1.0 / d) if math.isclose(sum(t), 1.0) else None
        else:
            theta0 = t[0] if len(set(t)) == 1 else None
        return ModelSpec(self.family, d, self.sigma, self.s, theta0)

    def to_dict(self) -> dict:
        out = {"family": self.family, "d": self.d, "theta0": list(self.theta0)}
        if self.is_gaussian:
            out["sigma"] = self.sigma
        if self.s is not None:
            out["s"] = self.s
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "ModelSpec":
        d = int(cfg["d"])
        theta0 = cfg.get("theta0")
        if theta0 == "uniform":
            theta0 = np.full(d, 1.0 / d)
        return cls(cfg["family"], d, cfg.get("sigma", 1.0), cfg.get("s"), theta0)


def _default_theta0(family: str, d: int) -> np.ndarray:
    if family == "product_bernoulli":
        return np.full(d, 0.5)
    if family == "multinomial":
        return np.full(d, 1.0 / (d + 1))
    return np.zeros(d)


def check_theta(model: ModelSpec, theta) -> np.ndarray:
    """Return ``theta`` as an array after checking it lies in the parameter space."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.d,):
        raise ParameterDomainError(f"theta must have shape ({model.d},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ParameterDomainError("theta has non-finite entries")
    if model.family == "product_bernoulli":
        bad = np.flatnonzero((theta < 0) | (theta > 1))
        if bad.size:
            raise ParameterDomainError(f"Bernoulli mean theta[{bad[0]}]={theta[bad[0]]} outside [0, 1]")
    elif model.family == "multinomial":
        bad = np.flatnonzero(theta < 0)
        if bad.size:
            raise ParameterDomainError(f"multinomial theta[{bad[0]}]={theta[bad[0]]} is negative")
        if theta.sum() > 1 + _TOL:
            raise ParameterDomainError(f"multinomial theta sums to {theta.sum()} > 1")
    elif model.family == "sparse_gaussian":
        nnz = int(np.count_nonzero(theta))
        if nnz > model.s:
            raise ParameterDomainError(f"sparse theta has {nnz} nonzeros, more than s={model.s}")
    return theta


def outcome_probs(model: ModelSpec, theta) -> np.ndarray:
    """Multinomial probabilities over the ``d+1`` outcomes."""
    theta = check_theta(model, theta)
    last = max(0.0, 1.0 - theta.sum())
    return np.append(theta, last)


# ---------------------------------------------------------------------------
# finite sample spaces


def sample_space(model: ModelSpec) -> np.ndarray:
    """All observations of a finite family, in index order."""
    if model.family == "multinomial":
        return np.arange(1, model.d + 2)
    if model.family == "product_bernoulli":
        if model.d > MAX_ENUM_DIM:
            raise CapacityError(f"2^{model.d} Bernoulli points exceed the enumeration cap")
        idx = np.arange(2**model.d)
        return ((idx[:, None] >> np.arange(model.d)) & 1).astype(np.int8)
    raise ValueError(f"{model.family} has no finite sample space")


def observation_index(model: ModelSpec, x) -> np.ndarray:
    """Index of (a batch of) observations in :func:`sample_space` order."""
    if model.family == "multinomial":
        return np.asarray(x, dtype=np.int64) - 1
    if model.family == "product_bernoulli":
        x = np.asarray(x, dtype=np.int64)
        return x @ (1 << np.arange(model.d, dtype=np.int64))
    raise ValueError(f"{model.family} has no finite sample space")


def pmf(model: ModelSpec, theta) -> np.ndarray:
    """Probability of every point of the finite sample space under ``theta``."""
    if model.family == "multinomial":
        return outcome_probs(model, theta)
    theta = check_theta(model, theta)
    pts = sample_space(model)
    return np.prod(np.where(pts == 1, theta, 1.0 - theta), axis=1)


# ---------------------------------------------------------------------------
# sampling, score, information


def sample(model: ModelSpec, theta, n: int, seed) -> np.ndarray:
    """Draw ``n`` independent observations from ``P_theta``.

    ``seed`` is an integer (a fresh Philox stream) or an existing generator.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    theta = check_theta(model, theta)
    rng = as_generator(seed)
    if model.is_gaussian:
        return theta + model.sigma * rng.standard_normal((n, model.d))
    if model.family == "product_bernoulli":
        return (rng.random((n, model.d)) < theta).astype(np.int8)
    probs = outcome_probs(model, theta)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n), side="right").astype(np.int64) + 1


def score(model: ModelSpec, x) -> np.ndarray:
    """Score ``S_{theta0}(x)``; a batch of observations gives a batch of scores."""
    t0 = model.theta0_array
    if model.is_gaussian:
        return (np.asarray(x, dtype=float) - t0) / model.sigma**2
    if model.family == "product_bernoulli":
        if np.any((t0 <= 0) | (t0 >= 1)):
            raise SingularFisherError("Bernoulli score needs theta0 strictly inside (0, 1)")
        pm = 2.0 * np.asarray(x, dtype=float) - 1.0
        return (pm + (1.0 - 2.0 * t0)) / (2.0 * t0 * (1.0 - t0))
    probs = np.append(t0, 1.0 - t0.sum())
    if np.any(probs <= 0):
        raise SingularFisherError("multinomial score needs every outcome to have positive mass")
    x = np.asarray(x, dtype=np.int64)
    hits = (x[..., None] == np.arange(1, model.d + 1)).astype(float)
    last = (x == model.d + 1).astype(float)[..., None]
    return hits / t0 - last / probs[-1]


class FisherInfo(NamedTuple):
    matrix: np.ndarray
    per_coordinate: Optional[float]  # scalar I0 when the family is a product of identical coordinates


def fisher_info(model: ModelSpec) -> FisherInfo:
    t0 = model.theta0_array
    if model.is_gaussian:
        return FisherInfo(np.eye(model.d) / model.sigma**2, 1.0 / model.sigma**2)
    if model.family == "product_bernoulli":
        if np.any((t0 <= 0) | (t0 >= 1)):
            raise SingularFisherError("Bernoulli Fisher information is infinite at the boundary")
        diag = 1.0 / (t0 * (1.0 - t0))
        scalar = float(diag[0]) if np.allclose(diag, diag[0], rtol=0, atol=1e-15) else None
        return FisherInfo(np.diag(diag), scalar)
    last = 1.0 - t0.sum()
    if np.any(t0 <= 0) or last <= 0:
        raise SingularFisherError("multinomial Fisher information needs theta0 in the open simplex")
    return FisherInfo(np.diag(1.0 / t0) + 1.0 / last, None)


def bessel_constant(model: ModelSpec) -> float:
    """Largest eigenvalue of the Fisher matrix.

    For product families this is the per-coordinate I0; for correlated scores
    (multinomial) it is the constant that makes the Bessel-type bound
    ``||E[S 1_A]||^2 <= lambda_max(I) * P(A)(1 - P(A))`` hold.
    """
    info = fisher_info(model)
    if info.per_coordinate is not None:
        return info.per_coordinate
    return float(np.linalg.eigvalsh(info.matrix)[-1])


def likelihood_ratio(model: ModelSpec, theta, x) -> np.ndarray:
    """``dP_theta/dP_theta0`` evaluated at (a batch of) observations."""
    theta = check_theta(model, theta)
    t0 = model.theta0_array
    if model.is_gaussian:
        x = np.asarray(x, dtype=float)
        log_lr = (np.sum((x - t0) ** 2, axis=-1) - np.sum((x - theta) ** 2, axis=-1)) / (2 * model.sigma**2)
        return np.exp(log_lr)
    if model.family == "product_bernoulli":
        x = np.asarray(x)
        num = np.prod(np.where(x == 1, theta, 1.0 - theta), axis=-1)
        den = np.prod(np.where(x == 1, t0, 1.0 - t0), axis=-1)
    else:
        idx = observation_index(model, x)
        num = outcome_probs(model, theta)[idx]
        den = outcome_probs(model, t0)[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(num == 0, 0.0, num / np.where(den == 0, np.inf, den))


# ---------------------------------------------------------------------------
# hypothesis families


@dataclass(frozen=True)
class HypothesisCube:
    """Perturbations ``theta0 + delta * u`` of the reference parameter.

    Dense mode enumerates ``u`` over ``{-1, +1}^d``; sparse mode enumerates
    ``u`` over ``{0, -1, +1}^d`` with exactly ``s`` nonzeros.  ``support`` is
    a sampled index set of size ``s`` used for support-conditional views.
    """

    base: ModelSpec
    delta: float
    s: Optional[int] = None
    support: Optional[tuple] = None

    @property
    def sparse(self) -> bool:
        return self.s is not None

    def __len__(self) -> int:
        d = self.base.d
        return math.comb(d, self.s) * 2**self.s if self.sparse else 2**d

    def signs(self) -> np.ndarray:
        d = self.base.d
        if len(self) > 2**MAX_ENUM_DIM:
            raise CapacityError(f"hypothesis family of size {len(self)} exceeds 2^{MAX_ENUM_DIM}")
        if not self.sparse:
            return _pm_cube(d)
        rows = []
        pm = _pm_cube(self.s)
        for supp in itertools.combinations(range(d), self.s):
            block = np.zeros((len(pm), d))
            block[:, supp] = pm
            rows.append(block)
        return np.concatenate(rows)

    def parameters(self) -> np.ndarray:
        return self.base.theta0_array + self.delta * self.signs()

    def restricted_signs(self) -> np.ndarray:
        """Members whose support equals ``support`` (``2^s`` of them)."""
        if self.support is None:
            raise ValueError("cube has no sampled support")
        block = np.zeros((2**self.s, self.base.d))
        block[:, list(self.support)] = _pm_cube(self.s)
        return block


def _pm_cube(d: int) -> np.ndarray:
    idx = np.arange(2**d)
    bits = (idx[:, None] >> np.arange(d)) & 1
    return 2.0 * bits - 1.0


def hypothesis_cube(model: ModelSpec, delta: float, sparse: Optional[Sequence[int]] = None) -> HypothesisCube:
    """Build the perturbed family around ``model.theta0``.

    ``sparse`` is ``(s, support_seed)``; a ``sparse_gaussian`` model uses its own
    ``s`` and seed 0 when ``sparse`` is omitted.
    """
    if delta < 0:
        raise ParameterDomainError(f"delta must be nonnegative, got {delta}")
    if sparse is None and model.family == "sparse_gaussian":
        sparse = (model.s, 0)
    t0 = model.theta0_array
    if model.family == "product_bernoulli":
        _check_margin(t0 - delta >= -_TOL, t0, delta, "below 0")
        _check_margin(t0 + delta <= 1 + _TOL, t0, delta, "above 1")
    elif model.family == "multinomial":
        _check_margin(t0 - delta >= -_TOL, t0, delta, "below 0")
        last = 1.0 - t0.sum()
        if last - delta * model.d < -_TOL:
            err = ParameterDomainError(
                f"coordinate {model.d} (dependent outcome d+1, mass {last}) goes negative "
                f"when all d coordinates move up by delta={delta}"
            )
            err.coordinate = model.d
            raise err
    if sparse is None:
        return HypothesisCube(model, float(delta))
    s, seed = int(sparse[0]), int(sparse[1])
    if not 1 <= s <= model.d:
        raise ValueError(f"sparsity s={s} outside [1, d]")
    support = tuple(sorted(as_generator(seed).choice(model.d, size=s, replace=False).tolist()))
    return HypothesisCube(model, float(delta), s, support)


def _check_margin(ok: np.ndarray, t0, delta, what: str):
    bad = np.flatnonzero(~ok)
    if bad.size:
        i = int(bad[0])
        err = ParameterDomainError(f"coordinate {i}: theta0={t0[i]} +- delta={delta} goes {what}")
        err.coordinate = i
        raise err
