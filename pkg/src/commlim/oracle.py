"""Exact information quantities for small protocols, by full enumeration.

All quantities are in nats.  Terms of the form ``0 * log(0 / q)`` and
``(0 - 0)^2 / 0`` are taken to be zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import models
from .blackboard import ProtocolTree, _b, sensor_expectations
from .models import HypothesisCube, ModelSpec


@dataclass(frozen=True)
class InfoChainReport:
    mutual_information: float
    dbar: float
    upper_bound: float
    terms: Optional[np.ndarray] = None  # (n, 2^D) contributions to the upper bound

    def slacks(self) -> tuple:
        """``(I, Dbar - I, UB - Dbar)``; all should be nonnegative."""
        return (self.mutual_information, self.dbar - self.mutual_information, self.upper_bound - self.dbar)

    def to_dict(self, include_terms: bool = False) -> dict:
        out = {"I": self.mutual_information, "Dbar": self.dbar, "UB": self.upper_bound}
        if include_terms and self.terms is not None:
            out["terms"] = [
                {"sensor": int(i), "transcript": int(y), "value": float(self.terms[i, y])}
                for i, y in zip(*np.nonzero(self.terms))
            ]
        return out


def _xlogx_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(p / q), 0.0)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _tables(tree: ProtocolTree, cube: HypothesisCube):
    thetas = np.vstack([cube.base.theta0_array, cube.parameters()])
    ex = sensor_expectations(tree, cube.base, thetas).mean  # (Y, n, 1 + |U|)
    return ex[:, :, 0], ex[:, :, 1:]


def transcript_given_hypothesis(tree: ProtocolTree, cube: HypothesisCube) -> np.ndarray:
    """``P(Y = y | U = u)`` as a ``(|U|, 2^D)`` array."""
    _, pu = _tables(tree, cube)
    return np.prod(pu, axis=1).T


def exact_mutual_information(tree: ProtocolTree, cube: HypothesisCube) -> float:
    """``I(U; Y)`` for ``U`` uniform on the cube."""
    py_u = transcript_given_hypothesis(tree, cube)
    mix = py_u.mean(axis=0)
    return float(np.mean(np.sum(_xlogx_ratio(py_u, mix[None, :]), axis=1)))


def kl_chain_quantities(tree: ProtocolTree, cube: HypothesisCube) -> InfoChainReport:
    """``I <= Dbar <= UB`` where ``Dbar = E_U D(P_{Y|U} || P_{Y|X~P0})`` and ``UB`` is
    the chi-square-type sum over sensors and transcripts."""
    e0, eu = _tables(tree, cube)  # e0: (Y, n); eu: (Y, n, U)
    py_u = np.prod(eu, axis=1)  # (Y, U)
    mix = py_u.mean(axis=1)
    info = float(np.mean(np.sum(_xlogx_ratio(py_u, mix[:, None]), axis=0)))
    # Dbar through the cut-paste factorization: sum of per-sensor log ratios
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(eu > 0, np.log(eu / e0[:, :, None]), 0.0)
    dbar = float(np.mean(np.sum(py_u * logs.sum(axis=1), axis=0)))
    n = tree.n
    terms = np.zeros((n, py_u.shape[0]))
    for i in range(n):
        others = np.prod(np.delete(eu, i, axis=1), axis=1)  # (Y, U)
        chi = _safe_div((eu[:, i, :] - e0[:, i, None]) ** 2, np.broadcast_to(e0[:, i, None], eu[:, i, :].shape))
        terms[i] = np.mean(others * chi, axis=1)
    return InfoChainReport(info, dbar, float(terms.sum()), terms)


def direct_dbar(tree: ProtocolTree, cube: HypothesisCube) -> float:
    """``E_U D(P_{Y|U} || P_{Y|0})`` from the joint transcript laws (no factorization)."""
    e0, eu = _tables(tree, cube)
    p0 = np.prod(e0, axis=1)
    py_u = np.prod(eu, axis=1)
    return float(np.mean(np.sum(_xlogx_ratio(py_u, p0[:, None]), axis=0)))


@dataclass(frozen=True)
class S1Report:
    s1_sum: float
    weight_total: float
    budget_bound: float  # 2^{k_i} * I0
    per_set_bound: float  # sum_y w * I0 * (1 - P)
    bessel_constant: float

    @property
    def holds(self) -> bool:
        tol = 1e-9 * max(1.0, self.budget_bound)
        return self.s1_sum <= self.per_set_bound + tol and self.per_set_bound <= self.budget_bound + tol


def s1_bound_check(tree: ProtocolTree, model: ModelSpec, i: int, others: Sequence) -> S1Report:
    """Sum over transcripts of ``w_{i,y} ||E_0[S0 p_{i,y}]||^2 / E_0[p_{i,y}]`` for fixed
    inputs of the other sensors, against the per-set and ``2^k I0`` bounds.

    ``others`` holds one observation per sensor; entry ``i`` is ignored.
    """
    ex = sensor_expectations(tree, model, [model.theta0_array], with_score=True)
    prob = ex.mean[:, i, 0]
    svec = ex.score[:, i, :]
    w = _leave_one_out_weights(tree, i, others)
    i0 = models.bessel_constant(model)
    s1 = float(np.sum(w * _safe_div(np.sum(svec**2, axis=1), prob)))
    per_set = float(np.sum(w * i0 * np.where(prob > 0, 1.0 - prob, 0.0)))
    return S1Report(s1, float(w.sum()), 2 ** tree.budgets[i] * i0, per_set, i0)


def _leave_one_out_weights(tree: ProtocolTree, i: int, others: Sequence) -> np.ndarray:
    w = np.zeros(2**tree.depth)
    for y, _, path in tree.leaves():
        val = 1.0
        for v, bit in path:
            node = tree.nodes[v]
            if node.label != i:
                val *= _b(node.predicate, bit, others[node.label], 0.0)
        w[y] = val
    return w


def s1_leading_term(tree: ProtocolTree, model: ModelSpec) -> float:
    """``lim_{delta -> 0} UB / delta^2``: the s1 sums averaged over the other
    sensors' inputs drawn from ``P0``, summed over sensors."""
    ex = sensor_expectations(tree, model, [model.theta0_array], with_score=True)
    prob = ex.mean[:, :, 0]
    total = 0.0
    for i in range(tree.n):
        others = np.prod(np.delete(prob, i, axis=1), axis=1)
        total += float(np.sum(others * _safe_div(np.sum(ex.score[:, i, :] ** 2, axis=1), prob[:, i])))
    return total


def exact_test_error(tree: ProtocolTree, cube: HypothesisCube, t: float = 0.0) -> float:
    """``min over estimators of P(d_Ham(U, U_hat) > t)`` by enumeration."""
    py_u = transcript_given_hypothesis(tree, cube)  # (U, Y)
    signs = cube.signs()
    dist = (signs[:, None, :] != signs[None, :, :]).sum(axis=2)  # (U, V)
    near = (dist <= t).astype(float)
    joint = py_u / len(signs)
    covered = near.T @ joint  # (V, Y): P(U within t of v, Y = y)
    return float(1.0 - covered.max(axis=0).sum())


def cube_ball_sizes(cube: HypothesisCube, t: float) -> tuple:
    """``(N_max(t), N_min(t))`` for the Hamming metric on the cube's sign vectors."""
    signs = cube.signs()
    counts = ((signs[:, None, :] != signs[None, :, :]).sum(axis=2) <= t).sum(axis=1)
    return int(counts.max()), int(counts.min())


def information_summary(tree: ProtocolTree, cube: HypothesisCube) -> dict:
    rep = kl_chain_quantities(tree, cube)
    return {"I": rep.mutual_information, "Dbar": rep.dbar, "UB": rep.upper_bound, "cube_size": len(cube),
            "delta": cube.delta, "log_cube_size": math.log(len(cube))}
