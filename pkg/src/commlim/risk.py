"""Monte Carlo worst-case risk over parameter grids, sweeps and scaling fits."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import models, protocols
from .errors import CommlimError, RankDeficientError
from .models import ModelSpec
from .rng import derive_seed, stream

CSV_COLUMNS = (
    "experiment_id", "protocol", "n", "d", "k", "theta_id", "risk", "se",
    "norm_n_d2", "norm_n2k_d", "norm_nk_d2", "degenerate_count", "seconds", "seed",
)
REGRESSORS = ("log n", "log d", "k", "log k")


@dataclass(frozen=True)
class GridSpec:
    """Rule-based grid: the center ``theta0`` plus ``corners`` random cube corners
    ``theta0 + delta * u``.  A finite grid only lower-bounds the true sup."""

    kind: str = "center"
    delta: float = 0.0
    corners: int = 0
    seed: int = 0

    def points(self, model: ModelSpec) -> np.ndarray:
        t0 = model.theta0_array
        if self.kind == "center":
            return t0[None, :]
        if self.kind != "corners":
            raise ValueError(f"unknown grid kind {self.kind!r}")
        rng = stream(self.seed, model.d)
        u = rng.choice([-1.0, 1.0], size=(self.corners, model.d))
        pts = np.vstack([t0, t0 + self.delta * u])
        for p in pts:
            models.check_theta(model, p)
        return pts

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    protocol: str
    n: int
    k: int
    theta_grid: Union[GridSpec, tuple] = GridSpec()
    replications: int = 100
    seed: int = 0
    experiment_id: str = "experiment"
    protocol_options: dict = field(default_factory=dict)
    exclude_degenerate: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError(f"replications must be >= 2, got {self.replications}")
        if self.n < 1 or self.k < 1:
            raise ValueError(f"n and k must be positive, got n={self.n}, k={self.k}")
        if not isinstance(self.theta_grid, GridSpec):
            grid = tuple(tuple(float(v) for v in p) for p in self.theta_grid)
            if not grid:
                raise ValueError("theta_grid is empty")
            object.__setattr__(self, "theta_grid", grid)
        for p in self.grid():
            models.check_theta(self.model, p)

    def grid(self) -> np.ndarray:
        if isinstance(self.theta_grid, GridSpec):
            return self.theta_grid.points(self.model)
        return np.array(self.theta_grid, dtype=float)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        grid = self.theta_grid.to_dict() if isinstance(self.theta_grid, GridSpec) else [list(p) for p in self.theta_grid]
        return {
            "experiment_id": self.experiment_id, "model": self.model.to_dict(), "protocol": self.protocol,
            "n": self.n, "k": self.k, "theta_grid": grid, "replications": self.replications,
            "seed": self.seed, "protocol_options": dict(self.protocol_options),
            "exclude_degenerate": self.exclude_degenerate,
        }


@dataclass(frozen=True)
class ThetaRisk:
    theta_id: int
    theta: tuple
    risk: float
    se: float
    degenerate_count: int
    counters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RiskReport:
    experiment_id: str
    protocol: str
    n: int
    d: int
    k: int
    per_theta: tuple
    seconds: float
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def sup(self) -> ThetaRisk:
        return max(self.per_theta, key=lambda r: r.risk)

    @property
    def sup_risk(self) -> float:
        return self.sup.risk

    def normalized(self, risk: float) -> dict:
        n, d, k = self.n, self.d, self.k
        return {
            "norm_n_d2": n * risk / d**2,
            "norm_n2k_d": n * 2**k * risk / d,
            "norm_nk_d2": n * k * risk / d**2,
        }

    def rows(self) -> list:
        out = []
        for r in self.per_theta:
            row = {
                "experiment_id": self.experiment_id, "protocol": self.protocol, "n": self.n, "d": self.d,
                "k": self.k, "theta_id": r.theta_id, "risk": r.risk, "se": r.se,
            }
            row.update(self.normalized(r.risk))
            row.update({"degenerate_count": r.degenerate_count, "seconds": self.seconds, "seed": self.seed})
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id, "protocol": self.protocol,
            "n": self.n, "d": self.d, "k": self.k, "seed": self.seed, "seconds": self.seconds,
            "sup_risk": self.sup_risk, "sup_theta_id": self.sup.theta_id, "sup_se": self.sup.se,
            "per_theta": [dataclasses.asdict(r) | {"theta": list(r.theta)} for r in self.per_theta],
            "rows": self.rows(), "config": self.config,
        }


def _one_replication(bundle, theta, seed, t, r):
    dec = bundle.decode(bundle.simulate(theta, stream(seed, t, r)))
    return float(np.sum((dec.theta - theta) ** 2)), dec.degenerate, dec.counters


def run_experiment(cfg: ExperimentConfig) -> RiskReport:
    """Monte Carlo risk at every grid point; deterministic given ``cfg.seed``."""
    start = time.perf_counter()
    bundle = protocols.build(cfg.protocol, cfg.n, cfg.k, cfg.model, **cfg.protocol_options)
    per_theta = []
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for t, theta in enumerate(cfg.grid()):
            reps = range(cfg.replications)
            call = lambda r, t=t, theta=theta: _one_replication(bundle, theta, cfg.seed, t, r)  # noqa: E731
            results = list(pool.map(call, reps)) if pool else [call(r) for r in reps]
            losses = np.array([res[0] for res in results])
            degenerate = np.array([res[1] for res in results])
            if cfg.exclude_degenerate:
                losses = losses[~degenerate]
            risk = float(np.mean(losses)) if losses.size else math.nan
            se = float(np.std(losses, ddof=1) / math.sqrt(losses.size)) if losses.size > 1 else math.nan
            counters = {key: float(np.mean([res[2][key] for res in results])) for key in results[0][2]}
            per_theta.append(ThetaRisk(t, tuple(float(v) for v in theta), risk, se, int(degenerate.sum()), counters))
    finally:
        if pool:
            pool.shutdown()
    return RiskReport(
        cfg.experiment_id, cfg.protocol, cfg.n, cfg.model.d, cfg.k, tuple(per_theta),
        time.perf_counter() - start, cfg.seed, cfg.to_dict(),
    )


@dataclass(frozen=True)
class SweepFailure:
    axis: str
    value: int
    message: str


def sweep(base: ExperimentConfig, axis: str, values: Sequence[int], couple_n: bool = False) -> list:
    """Run ``base`` at each value of ``axis``; failures are recorded, not raised.

    With ``couple_n`` a d-sweep keeps ``n / d`` fixed at its value in ``base``.
    """
    if axis not in ("n", "d", "k"):
        raise ValueError(f"sweep axis must be n, d or k, got {axis!r}")
    out = []
    for idx, v in enumerate(values):
        seed = derive_seed(base.seed, idx)
        try:
            if axis == "d":
                if not isinstance(base.theta_grid, GridSpec):
                    raise ValueError("a d-sweep needs a rule-based GridSpec grid")
                cfg = base.replace(model=base.model.with_d(int(v)), seed=seed)
                if couple_n:
                    cfg = cfg.replace(n=max(1, round(base.n * int(v) / base.model.d)))
            else:
                cfg = base.replace(**{axis: int(v)}, seed=seed)
            cfg = cfg.replace(experiment_id=f"{base.experiment_id}/{axis}={v}")
            out.append(run_experiment(cfg))
        except (CommlimError, ValueError) as exc:
            out.append(SweepFailure(axis, v, str(exc)))
    return out


@dataclass(frozen=True)
class ScalingFit:
    coefficients: dict
    standard_errors: dict
    intercept: float
    r_squared: float
    n_points: int
    offsets: dict = field(default_factory=dict)


def _regressor(name: str, rep: RiskReport) -> float:
    return {"log n": math.log(rep.n), "log d": math.log(rep.d), "k": float(rep.k), "log k": math.log(rep.k)}[name]


def fit_scaling_exponents(reports: Sequence, regressors: Sequence[str], offsets: Optional[dict] = None) -> ScalingFit:
    """OLS of ``log(sup risk)`` on the chosen regressors plus an intercept.

    ``offsets`` fixes known exponents: ``{"log n": -1}`` regresses
    ``log(risk) + log(n)`` instead, which is how an exponent in ``d`` is read
    off when ``n`` moves together with ``d``.
    """
    reports = [r for r in reports if isinstance(r, RiskReport)]
    offsets = dict(offsets or {})
    for name in list(regressors) + list(offsets):
        if name not in REGRESSORS:
            raise ValueError(f"unknown regressor {name!r}; expected one of {REGRESSORS}")
    if len(reports) < 3:
        raise ValueError(f"need at least 3 reports, got {len(reports)}")
    y = np.array([math.log(r.sup_risk) - sum(c * _regressor(nm, r) for nm, c in offsets.items()) for r in reports])
    X = np.column_stack([np.ones(len(reports))] + [[_regressor(nm, r) for r in reports] for nm in regressors])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientError(f"regressors {list(regressors)} are collinear over these reports")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = len(y) - X.shape[1]
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    if dof > 0:
        cov = float(resid @ resid) / dof * np.linalg.inv(X.T @ X)
        se = np.sqrt(np.diag(cov))
    else:
        se = np.full(X.shape[1], math.nan)
    return ScalingFit(
        {nm: float(b) for nm, b in zip(regressors, beta[1:])},
        {nm: float(s) for nm, s in zip(regressors, se[1:])},
        float(beta[0]), r2, len(reports), offsets,
    )


def write_csv(reports: Sequence, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for rep in reports:
            if isinstance(rep, RiskReport):
                writer.writerows(rep.rows())
