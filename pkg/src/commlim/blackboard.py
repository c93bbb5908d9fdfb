"""Blackboard protocols as budgeted binary decision trees.

Each internal node carries a sensor label and a predicate ``a_v`` mapping that
sensor's observation to a bit.  Taking the right child means the sensor wrote
a 1.  A transcript is the bit string along a root-to-leaf path, written
root-first; its integer index reads the string as a big-endian binary number.

Sensors are 0-based here (label ``i`` refers to ``samples[i]``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import models
from .errors import CapacityError, UnsupportedEnumerationError
from .models import ModelSpec
from .rng import as_generator, stream

MAX_DEPTH = 24


# ---------------------------------------------------------------------------
# predicates


@dataclass(frozen=True)
class TruthTable:
    """Predicate on a finite sample space, indexed like :func:`models.sample_space`.

    ``encoding`` is ``"bits"`` for Bernoulli bit vectors or ``"outcome"`` for
    multinomial labels ``1..d+1``.  Entries may be fractional in ``[0, 1]``.
    """

    table: tuple
    encoding: str = "bits"

    def __post_init__(self):
        if self.encoding not in ("bits", "outcome"):
            raise ValueError(f"unknown truth-table encoding {self.encoding!r}")
        tab = tuple(float(v) for v in self.table)
        if not tab or any(not 0.0 <= v <= 1.0 for v in tab):
            raise ValueError("truth table must be nonempty with entries in [0, 1]")
        if self.encoding == "bits" and len(tab) & (len(tab) - 1):
            raise ValueError("a bits-encoded truth table needs a power-of-two length")
        object.__setattr__(self, "table", tab)

    def index(self, x) -> np.ndarray:
        if self.encoding == "outcome":
            return np.asarray(x, dtype=np.int64) - 1
        x = np.asarray(x, dtype=np.int64)
        return x @ (1 << np.arange(x.shape[-1], dtype=np.int64))

    def __call__(self, x, shared: float = 0.0) -> float:
        return self.table[int(self.index(x))]

    def batch(self, xs, shared) -> np.ndarray:
        return np.asarray(self.table)[self.index(xs)]

    def to_dict(self) -> dict:
        table = [int(v) if v in (0.0, 1.0) else v for v in self.table]
        return {"type": "truth_table", "encoding": self.encoding, "table": table}


@dataclass(frozen=True)
class Threshold:
    """``1`` iff ``<w, x> > b``."""

    w: tuple
    b: float

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(self.w))
        if not all(math.isfinite(v) for v in w) or not math.isfinite(self.b):
            raise ValueError("threshold predicates need finite w and b")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    def __call__(self, x, shared: float = 0.0) -> float:
        return 1.0 if float(np.dot(self.w, x)) > self.b else 0.0

    def batch(self, xs, shared) -> np.ndarray:
        return (np.asarray(xs, dtype=float) @ np.asarray(self.w) > self.b).astype(float)

    def to_dict(self) -> dict:
        return {"type": "threshold", "w": list(self.w), "b": self.b}


@dataclass(frozen=True)
class Callback:
    """Arbitrary predicate ``fn(x, shared) -> {0, 1}``; not enumerable."""

    fn: Callable

    def __call__(self, x, shared: float = 0.0) -> float:
        return float(self.fn(x, shared))

    def batch(self, xs, shared) -> np.ndarray:
        shared = np.broadcast_to(shared, (len(xs),))
        return np.array([float(self.fn(x, s)) for x, s in zip(xs, shared)])

    def to_dict(self) -> dict:
        raise TypeError("callback predicates cannot be serialized")


def predicate_from_dict(spec: dict):
    kind = spec["type"]
    if kind == "truth_table":
        return TruthTable(tuple(spec["table"]), spec.get("encoding", "bits"))
    if kind == "threshold":
        return Threshold(tuple(spec["w"]), spec["b"])
    raise ValueError(f"unknown predicate type {kind!r}")


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class Node:
    label: int
    predicate: object
    left: Optional[int] = None  # None: the 0-edge ends in a leaf
    right: Optional[int] = None


@dataclass(frozen=True)
class ProtocolTree:
    n: int
    budgets: tuple
    nodes: tuple = field(default=())

    def __post_init__(self):
        budgets = (int(self.budgets),) * self.n if np.isscalar(self.budgets) else tuple(int(b) for b in self.budgets)
        if len(budgets) != self.n or any(b < 0 for b in budgets):
            raise ValueError(f"need {self.n} nonnegative budgets, got {budgets}")
        object.__setattr__(self, "budgets", budgets)
        object.__setattr__(self, "nodes", tuple(self.nodes))
        seen = set()
        for v, node in enumerate(self.nodes):
            if not 0 <= node.label < self.n:
                raise ValueError(f"node {v} has label {node.label} outside [0, {self.n})")
            for child in (node.left, node.right):
                if child is None:
                    continue
                if not v < child < len(self.nodes) or child in seen:
                    raise ValueError(f"node {v} has invalid or shared child {child}")
                seen.add(child)

    @property
    def depth(self) -> int:
        """Transcript length implied by the budgets."""
        return sum(self.budgets)

    def leaves(self) -> Iterator[tuple]:
        """Yield ``(transcript_index, length, path)`` with ``path = [(node, bit), ...]``.

        Order is unspecified."""
        if not self.nodes:
            yield 0, 0, []
            return
        stack = [(0, 0, 0, [])]
        while stack:
            v, y, length, path = stack.pop()
            node = self.nodes[v]
            for bit, child in ((1, node.right), (0, node.left)):
                step = path + [(v, bit)]
                if child is None:
                    yield (y << 1) | bit, length + 1, step
                else:
                    stack.append((child, (y << 1) | bit, length + 1, step))

    def to_dict(self) -> dict:
        nodes = [
            {"id": v, "label": nd.label, "predicate": nd.predicate.to_dict(), "left": nd.left, "right": nd.right}
            for v, nd in enumerate(self.nodes)
        ]
        return {"n": self.n, "budgets": list(self.budgets), "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> "ProtocolTree":
        entries = sorted(doc["nodes"], key=lambda e: e["id"])
        if [e["id"] for e in entries] != list(range(len(entries))):
            raise ValueError("node ids must be 0..len(nodes)-1")
        nodes = [Node(e["label"], predicate_from_dict(e["predicate"]), e.get("left"), e.get("right")) for e in entries]
        return cls(doc["n"], tuple(doc["budgets"]), tuple(nodes))


def to_json(tree: ProtocolTree) -> str:
    return json.dumps(tree.to_dict())


def from_json(text: str) -> ProtocolTree:
    return ProtocolTree.from_dict(json.loads(text))


def transcript_string(y: int, length: int) -> str:
    return format(y, f"0{length}b") if length else ""


def _sorted_leaves(tree: ProtocolTree) -> list:
    return sorted(tree.leaves(), key=lambda leaf: (leaf[1], leaf[0]))


# ---------------------------------------------------------------------------
# budget validation and per-sensor factors


@dataclass(frozen=True)
class BudgetReport:
    valid: bool
    violating_path: Optional[str] = None
    label_counts: Optional[tuple] = None

    def __bool__(self) -> bool:
        return self.valid


def validate_budget(tree: ProtocolTree) -> BudgetReport:
    """Check every root-to-leaf path visits exactly ``budgets[i]`` nodes labeled ``i``."""
    target = list(tree.budgets)
    for y, length, path in _sorted_leaves(tree):
        counts = [0] * tree.n
        for v, _ in path:
            counts[tree.nodes[v].label] += 1
        if counts != target:
            return BudgetReport(False, transcript_string(y, length), tuple(counts))
    return BudgetReport(True)


def _path_for(tree: ProtocolTree, y: str) -> list:
    if not tree.nodes:
        if y:
            raise ValueError(f"transcript {y!r} is longer than the tree")
        return []
    path, v = [], 0
    for pos, ch in enumerate(y):
        if v is None:
            raise ValueError(f"transcript {y!r} runs past a leaf at position {pos}")
        bit = int(ch)
        path.append((v, bit))
        node = tree.nodes[v]
        v = node.right if bit else node.left
    if v is not None:
        raise ValueError(f"transcript {y!r} stops at an internal node")
    return path


def _b(pred, bit: int, x, shared: float) -> float:
    a = pred(x, shared)
    return a if bit else 1.0 - a


def sensor_factor(tree: ProtocolTree, i: int, y: str, x, shared: float = 0.0) -> float:
    """``p_{i,y}(x)``: product of ``b_{v,y}(x)`` over nodes on ``tau(y)`` labeled ``i``."""
    out = 1.0
    for v, bit in _path_for(tree, y):
        node = tree.nodes[v]
        if node.label == i:
            out *= _b(node.predicate, bit, x, shared)
    return out


def _shared_value(shared_seed: int) -> float:
    return float(stream(int(shared_seed), 0x5EED).random())


def execute(tree: ProtocolTree, samples: Sequence, shared_seed: int = 0) -> str:
    """Run the protocol on one observation per sensor; return the transcript.

    Fractional predicate values are treated as the probability of writing 1,
    with the coin drawn from the shared seed.
    """
    if len(samples) != tree.n:
        raise ValueError(f"expected {tree.n} samples, got {len(samples)}")
    shared = _shared_value(shared_seed)
    coins = None
    bits = []
    v = 0 if tree.nodes else None
    while v is not None:
        node = tree.nodes[v]
        a = node.predicate(samples[node.label], shared)
        if a not in (0.0, 1.0):
            coins = coins or stream(int(shared_seed), 0xC01)
            a = float(coins.random() < a)
        bit = int(a)
        bits.append("1" if bit else "0")
        v = node.right if bit else node.left
    return "".join(bits)


def execute_batch(tree: ProtocolTree, samples, shared_seeds=None) -> np.ndarray:
    """Vectorized :func:`execute` for deterministic predicates.

    ``samples`` has shape ``(R, n, ...)``; returns ``R`` transcript indices.
    All leaves must sit at the same depth.
    """
    samples = np.asarray(samples)
    reps = samples.shape[0]
    shared = (
        np.zeros(reps)
        if shared_seeds is None
        else np.array([_shared_value(s) for s in np.broadcast_to(shared_seeds, (reps,))])
    )
    y = np.zeros(reps, dtype=np.int64)
    if not tree.nodes:
        return y
    cur = np.zeros(reps, dtype=np.int64)
    active = np.ones(reps, dtype=bool)
    while active.any():
        nxt = np.full(reps, -1, dtype=np.int64)
        for v in np.unique(cur[active]):
            rows = np.flatnonzero(active & (cur == v))
            node = tree.nodes[v]
            a = node.predicate.batch(samples[rows, node.label], shared[rows])
            if np.any((a != 0) & (a != 1)):
                raise ValueError("execute_batch needs deterministic predicates")
            bit = a.astype(np.int64)
            y[rows] = (y[rows] << 1) | bit
            right = -1 if node.right is None else node.right
            left = -1 if node.left is None else node.left
            nxt[rows] = np.where(bit == 1, right, left)
        cur = nxt
        active = cur >= 0
    return y


# ---------------------------------------------------------------------------
# exact expectations per (transcript, sensor)


@dataclass(frozen=True)
class SensorExpectations:
    """``mean[y, i, h] = E_{theta_h}[p_{i,y}(X)]`` and optionally
    ``score[y, i, :] = E_{theta0}[S0(X) p_{i,y}(X)]``."""

    mean: np.ndarray
    score: Optional[np.ndarray]
    depth: int


def _check_enumerable(tree: ProtocolTree):
    if tree.depth > MAX_DEPTH:
        raise CapacityError(f"transcript length {tree.depth} exceeds the enumeration cap {MAX_DEPTH}")
    report = validate_budget(tree)
    if not report.valid:
        raise ValueError(f"tree violates its bit budget on path {report.violating_path!r}")
    for node in tree.nodes:
        if isinstance(node.predicate, Callback):
            raise UnsupportedEnumerationError("callback predicates have no closed-form expectation")


def sensor_expectations(tree: ProtocolTree, model: ModelSpec, thetas, with_score: bool = False) -> SensorExpectations:
    """Exact per-sensor expectations of the cut-paste factors for several parameters."""
    _check_enumerable(tree)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if model.is_finite:
        return _finite_expectations(tree, model, thetas, with_score)
    return _gaussian_expectations(tree, model, thetas, with_score)


def _finite_expectations(tree, model, thetas, with_score):
    size = model.space_size()
    encoding = "bits" if model.family == "product_bernoulli" else "outcome"
    tables = []
    for v, node in enumerate(tree.nodes):
        pred = node.predicate
        if not isinstance(pred, TruthTable) or len(pred.table) != size or pred.encoding != encoding:
            raise UnsupportedEnumerationError(
                f"node {v}: {model.family} enumeration needs {encoding!r} truth tables of length {size}"
            )
        tables.append(np.asarray(pred.table))
    weights = np.stack([models.pmf(model, th) for th in thetas])  # (H, |X|)
    sweights = None
    if with_score:
        pts = models.sample_space(model)
        sweights = (models.pmf(model, model.theta0)[:, None] * models.score(model, pts)).T  # (d, |X|)
    D = tree.depth
    mean = np.zeros((2**D, tree.n, len(thetas)))
    score = np.zeros((2**D, tree.n, model.d)) if with_score else None
    if not tree.nodes:
        ones = np.ones((tree.n, size))
        mean[0] = ones @ weights.T
        if with_score:
            score[0] = ones @ sweights.T
        return SensorExpectations(mean, score, D)
    stack = [(0, 0, np.ones((tree.n, size)))]
    while stack:
        v, y, fac = stack.pop()
        node = tree.nodes[v]
        a = tables[v]
        for bit, child in ((0, node.left), (1, node.right)):
            f = fac.copy()
            f[node.label] *= a if bit else 1.0 - a
            yb = (y << 1) | bit
            if child is None:
                mean[yb] = f @ weights.T
                if with_score:
                    score[yb] = f @ sweights.T
            else:
                stack.append((child, yb, f))
    return SensorExpectations(mean, score, D)


def _gaussian_expectations(tree, model, thetas, with_score):
    for v, node in enumerate(tree.nodes):
        if not isinstance(node.predicate, Threshold) or len(node.predicate.w) != model.d:
            raise UnsupportedEnumerationError(f"node {v}: Gaussian enumeration needs d-dimensional thresholds")
    D = tree.depth
    mean = np.zeros((2**D, tree.n, len(thetas)))
    score = np.zeros((2**D, tree.n, model.d)) if with_score else None
    for y, _, path in tree.leaves():
        per_sensor = [[] for _ in range(tree.n)]
        for v, bit in path:
            node = tree.nodes[v]
            per_sensor[node.label].append((node.predicate, bit))
        for i, cons in enumerate(per_sensor):
            m, s = _halfspace_cell(cons, model, thetas, with_score)
            mean[y, i] = m
            if with_score:
                score[y, i] = s
    return SensorExpectations(mean, score, D)


def _halfspace_cell(cons, model, thetas, with_score):
    """Probability (and score moment) of an intersection of parallel halfspaces."""
    d, sigma = model.d, model.sigma
    direction = None
    lo, hi = -np.inf, np.inf
    empty = False
    for pred, bit in cons:
        w = np.asarray(pred.w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            if (0.0 > pred.b) != bool(bit):
                empty = True
            continue
        if direction is None:
            direction = w / norm
        c = float(w @ direction)
        if not np.allclose(c * direction, w, rtol=1e-12, atol=1e-12):
            raise UnsupportedEnumerationError("a sensor's thresholds must share one direction on every path")
        cut = pred.b / c
        # c*proj > b  <=>  proj > b/c when c > 0
        upper_side = (c > 0) == bool(bit)
        if upper_side:
            lo = max(lo, cut)
        else:
            hi = min(hi, cut)
    H = len(thetas)
    if empty or lo >= hi:
        return np.zeros(H), np.zeros(d)
    if direction is None:
        return np.ones(H), np.zeros(d)
    mu = thetas @ direction
    prob = ndtr((hi - mu) / sigma) - ndtr((lo - mu) / sigma)
    svec = np.zeros(d)
    if with_score:
        mu0 = float(model.theta0_array @ direction)
        a, b = (lo - mu0) / sigma, (hi - mu0) / sigma
        svec = direction * (_phi(a) - _phi(b)) / sigma
    return prob, svec


def _phi(t: float) -> float:
    return 0.0 if math.isinf(t) else math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)


def transcript_distribution(tree: ProtocolTree, model: ModelSpec, theta) -> np.ndarray:
    """Exact ``P(Y = y)`` for every transcript index via the cut-paste factorization."""
    ex = sensor_expectations(tree, model, [models.check_theta(model, theta)])
    return np.prod(ex.mean[:, :, 0], axis=1)


# ---------------------------------------------------------------------------
# total-weight identities


@dataclass(frozen=True)
class IdentityReport:
    total: float
    total_slack: float
    leave_one_out: tuple
    expected_leave_one_out: tuple
    leave_one_out_slack: float

    @property
    def max_slack(self) -> float:
        return max(self.total_slack, self.leave_one_out_slack)

    def holds(self, tol: float = 1e-9) -> bool:
        return self.max_slack <= tol


def check_protocol_identities(tree: ProtocolTree, inputs: Sequence, shared: float = 0.0) -> IdentityReport:
    """Evaluate ``sum_y prod_j p_{j,y}(x_j)`` and the leave-one-out sums for fixed inputs."""
    if len(inputs) != tree.n:
        raise ValueError(f"expected {tree.n} inputs, got {len(inputs)}")
    prods, loo = [], [[] for _ in range(tree.n)]
    for _, _, path in tree.leaves():
        f = np.ones(tree.n)
        for v, bit in path:
            node = tree.nodes[v]
            f[node.label] *= _b(node.predicate, bit, inputs[node.label], shared)
        prods.append(np.prod(f))
        for i in range(tree.n):
            loo[i].append(np.prod(np.delete(f, i)))
    total = float(np.sum(prods))
    sums = tuple(float(np.sum(col)) for col in loo)
    expected = tuple(float(2**k) for k in tree.budgets)
    loo_slack = max((abs(s - e) for s, e in zip(sums, expected)), default=0.0)
    return IdentityReport(total, abs(total - 1.0), sums, expected, loo_slack)


# ---------------------------------------------------------------------------
# random budget-valid trees


def random_tree(n: int, k, model: ModelSpec, seed, p_constant: float = 0.1, p_fractional: float = 0.0) -> ProtocolTree:
    """Random budget-valid tree with random predicates on ``model``'s sample space.

    On finite spaces a fraction ``p_fractional`` of the truth tables take
    values in ``[0, 1]`` (randomized predicates); the rest are 0/1.

    At each node the label is drawn with probability proportional to the
    sensor's remaining budget, independently per subtree, so label order
    differs across paths.  Gaussian models get thresholds whose direction is
    fixed per sensor (keeps every sensor's cell an interval).
    """
    rng = as_generator(seed)
    budgets = (int(k),) * n if np.isscalar(k) else tuple(int(b) for b in k)
    if len(budgets) != n:
        raise ValueError(f"need {n} budgets, got {budgets}")
    if sum(budgets) > MAX_DEPTH:
        raise CapacityError(f"depth {sum(budgets)} exceeds the enumeration cap {MAX_DEPTH}")
    if model.is_gaussian:
        dirs = rng.standard_normal((n, model.d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    nodes: list = []

    def make_predicate(label):
        if model.is_finite:
            size = model.space_size()
            encoding = "bits" if model.family == "product_bernoulli" else "outcome"
            u = rng.random()
            if u < p_constant:
                table = np.full(size, float(rng.integers(2)))
            elif u < p_constant + p_fractional:
                table = rng.random(size)
            else:
                table = rng.integers(0, 2, size).astype(float)
            return TruthTable(tuple(float(t) for t in table), encoding)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        w = sign * dirs[label]
        b = float(w @ model.theta0_array + model.sigma * rng.standard_normal())
        return Threshold(tuple(w), b)

    def build(remaining):
        total = sum(remaining)
        if total == 0:
            return None
        label = int(rng.choice(n, p=np.asarray(remaining) / total))
        v = len(nodes)
        nodes.append(None)
        rem = list(remaining)
        rem[label] -= 1
        left = build(rem)
        right = build(rem)
        nodes[v] = Node(label, make_predicate(label), left, right)
        return v

    build(list(budgets))
    return ProtocolTree(n, budgets, tuple(nodes))


def is_interactive(tree: ProtocolTree) -> bool:
    """True when the sequence of speaking sensors differs between paths."""
    orders = {tuple(tree.nodes[v].label for v, _ in path) for _, _, path in tree.leaves()}
    return len(orders) > 1
