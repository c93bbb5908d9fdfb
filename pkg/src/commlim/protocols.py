"""Achievability protocols and their decoders.

Every protocol has each sensor write exactly ``k`` bits, in sensor order, so a
run is an ``(n, k)`` bit matrix; flattening it row-major gives the blackboard
transcript.  ``encode`` applies the protocol to full observations (what the
sensors actually do), ``simulate`` draws transcripts directly and may take
shortcuts that keep the same law, and ``tree`` builds the equivalent
:class:`~commlim.blackboard.ProtocolTree` for small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

from . import blackboard, models
from .blackboard import Node, ProtocolTree, Threshold, TruthTable
from .errors import CapacityError, DecodeError, InsufficientBudgetError
from .models import ModelSpec
from .rng import as_generator

MAX_TREE_DEPTH = 20


@dataclass(frozen=True)
class Decoded:
    theta: np.ndarray
    degenerate: bool = False
    counters: dict = field(default_factory=dict)


class ProtocolBundle:
    name = "abstract"

    def __init__(self, n: int, k: int, model: ModelSpec):
        if n < 1 or k < 1:
            raise ValueError(f"n and k must be positive, got n={n}, k={k}")
        self.n, self.k, self.model = int(n), int(k), model

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def sampling_model(self) -> ModelSpec:
        return self.model

    def encode(self, samples) -> np.ndarray:
        raise NotImplementedError

    def decode(self, bits: np.ndarray) -> Decoded:
        raise NotImplementedError

    def simulate(self, theta, seed) -> np.ndarray:
        samples = models.sample(self.sampling_model, theta, self.n, as_generator(seed))
        return self.encode(samples)

    def _predicate(self, sensor: int, bit: int, history: tuple):
        raise NotImplementedError

    def tree(self) -> ProtocolTree:
        """The protocol as an explicit tree (small ``n * k`` only)."""
        return _sequential_tree(self.n, self.k, self._predicate)

    def check_shape(self, bits) -> np.ndarray:
        if isinstance(bits, str):
            if len(bits) != self.n * self.k or set(bits) - {"0", "1"}:
                raise DecodeError(f"transcript must be {self.n * self.k} bits, got {len(bits)} characters")
            bits = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
        bits = np.asarray(bits)
        if bits.size != self.n * self.k:
            raise DecodeError(f"expected {self.n}x{self.k} transcript bits, got shape {bits.shape}")
        bits = bits.reshape(self.n, self.k)
        if np.any((bits != 0) & (bits != 1)):
            raise DecodeError("transcript entries must be bits")
        return bits.astype(np.int8)


def _sequential_tree(n: int, k: int, predicate_for: Callable) -> ProtocolTree:
    """Tree where sensors speak in order ``0..n-1``, ``k`` bits each.

    ``predicate_for(sensor, bit, history)`` returns the predicate given the
    bits already on the board.
    """
    depth = n * k
    if depth > MAX_TREE_DEPTH:
        raise CapacityError(f"tree of depth {depth} exceeds {MAX_TREE_DEPTH}")
    nodes: list = []

    def build(pos, history):
        if pos == depth:
            return None
        v = len(nodes)
        nodes.append(None)
        sensor, bit = divmod(pos, k)
        pred = predicate_for(sensor, bit, history)
        left = build(pos + 1, history + (0,))
        right = build(pos + 1, history + (1,))
        nodes[v] = Node(sensor, pred, left, right)
        return v

    build(0, ())
    return ProtocolTree(n, k, tuple(nodes))


def _round_robin(n: int, k: int, d: int) -> np.ndarray:
    if n * k < d:
        raise InsufficientBudgetError(f"n*k = {n * k} bits cannot cover d = {d} coordinates")
    return (np.arange(n * k) % d).reshape(n, k)


def _coord_table(d: int, coord: int) -> TruthTable:
    pts = models.sample_space(ModelSpec("product_bernoulli", d))
    return TruthTable(tuple(int(v) for v in pts[:, coord]), "bits")


# ---------------------------------------------------------------------------


class ShardedRawBits(ProtocolBundle):
    """Sensor ``j`` forwards raw bits of coordinates ``(j*k + t) mod d``."""

    name = "sharded_bits"

    def __init__(self, n, k, model):
        if model.family != "product_bernoulli":
            raise ValueError("sharded_bits needs a product_bernoulli model")
        super().__init__(n, k, model)
        self.coords = _round_robin(self.n, self.k, self.d)
        self.counts = np.bincount(self.coords.ravel(), minlength=self.d)

    def encode(self, samples) -> np.ndarray:
        samples = np.asarray(samples)
        return samples[np.arange(self.n)[:, None], self.coords].astype(np.int8)

    def decode(self, bits) -> Decoded:
        bits = self.check_shape(bits)
        sums = np.bincount(self.coords.ravel(), weights=bits.ravel(), minlength=self.d)
        return Decoded(sums / self.counts, counters={"reports_per_coordinate_min": int(self.counts.min())})

    def expected_risk(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(np.sum(theta * (1 - theta) / self.counts))

    def _predicate(self, sensor, bit, history):
        return _coord_table(self.d, int(self.coords[sensor, bit]))


class ProbitGrouping(ProtocolBundle):
    """Sign bits ``1{x_c > 0}`` per assigned coordinate, inverted through the normal quantile."""

    name = "probit_grouping"

    def __init__(self, n, k, model, clamp: float = 1.0):
        if not model.is_gaussian:
            raise ValueError("probit_grouping needs a Gaussian model")
        super().__init__(n, k, model)
        self.clamp = float(clamp)
        self.coords = _round_robin(self.n, self.k, self.d)
        self.counts = np.bincount(self.coords.ravel(), minlength=self.d)

    def encode(self, samples) -> np.ndarray:
        samples = np.asarray(samples, dtype=float)
        return (samples[np.arange(self.n)[:, None], self.coords] > 0).astype(np.int8)

    def decode(self, bits) -> Decoded:
        bits = self.check_shape(bits)
        m = self.counts
        phat = np.bincount(self.coords.ravel(), weights=bits.ravel(), minlength=self.d) / m
        phat = np.clip(phat, 1 / (2 * m), 1 - 1 / (2 * m))
        theta = np.clip(self.model.sigma * ndtri(phat), -self.clamp, self.clamp)
        return Decoded(theta, counters={"reports_per_coordinate_min": int(m.min())})

    def _predicate(self, sensor, bit, history):
        w = np.zeros(self.d)
        w[self.coords[sensor, bit]] = 1.0
        return Threshold(tuple(w), 0.0)


class SimulateAndInfer(ProtocolBundle):
    """Pairs of sensors that turn product-Bernoulli bits into exact draws from ``theta``.

    Sensors observe ``X_i ~ Bern(theta_i)`` independently with ``sum(theta) <= 1``.
    Coordinates are split into ``m`` blocks of size ``g = 2^k - 2`` (or one
    block of size ``d`` when ``2^k >= d + 2``) and sensors into groups of
    ``2m``.  The first sensor of pair ``l`` sends code 0 (no hit in block
    ``l``), code 1 (two or more hits) or ``2 + position`` of its unique hit; its
    partner then sends its own bit at that coordinate followed by zeros.
    """

    name = "simulate_and_infer"

    def __init__(self, n, k, model):
        if model.family not in ("multinomial", "product_bernoulli"):
            raise ValueError("simulate_and_infer needs a multinomial (simplex) model")
        super().__init__(n, k, model)
        d, k = self.d, self.k
        if 2**k >= d + 2:
            self.block, self.m = d, 1
        elif 2**k >= 3:
            self.block, self.m = 2**k - 2, math.ceil(d / (2**k - 2))
        else:
            raise InsufficientBudgetError(f"k={k} leaves no symbols for coordinates (need 2^k >= 3)")
        self.group = 2 * self.m
        self.groups = self.n // self.group
        if self.groups == 0:
            raise InsufficientBudgetError(f"n={n} sensors cannot fill one group of {self.group}")
        self.idle = self.n - self.groups * self.group
        self.block_sizes = np.array([min(self.block, d - l * self.block) for l in range(self.m)])
        self._pow = 1 << np.arange(k - 1, -1, -1)

    @property
    def sampling_model(self) -> ModelSpec:
        return ModelSpec("product_bernoulli", self.d, theta0=self.model.theta0)

    def success_probability(self, theta) -> float:
        """``sum(theta) * prod(1 - theta)``, i.e. ``prod(1 - theta)`` on the simplex."""
        theta = np.asarray(theta, dtype=float)
        return float(theta.sum() * np.prod(1.0 - theta))

    def _codes_from_hits(self, hits: np.ndarray) -> np.ndarray:
        """``hits``: (..., m, block) bits -> (..., m) codes."""
        count = hits.sum(axis=-1)
        pos = hits.argmax(axis=-1)
        return np.where(count == 0, 0, np.where(count >= 2, 1, pos + 2))

    def _code_bits(self, codes: np.ndarray) -> np.ndarray:
        return ((codes[..., None] & self._pow) > 0).astype(np.int8)

    def _padded(self, x: np.ndarray) -> np.ndarray:
        """(..., d) -> (..., m, block) with zero padding past d."""
        pad = self.m * self.block - self.d
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (pad,), dtype=x.dtype)], axis=-1)
        return x.reshape(x.shape[:-1] + (self.m, self.block))

    def _assemble(self, codes: np.ndarray, echo: np.ndarray) -> np.ndarray:
        """codes, echo: (groups, m) -> (n, k) bit matrix."""
        G, m, k = self.groups, self.m, self.k
        bits = np.zeros((self.n, k), dtype=np.int8)
        pairs = np.zeros((G, m, 2, k), dtype=np.int8)
        pairs[:, :, 0, :] = self._code_bits(codes)
        pairs[:, :, 1, 0] = np.where(codes >= 2, echo, 0)
        bits[: G * 2 * m] = pairs.reshape(G * 2 * m, k)
        return bits

    def encode(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.int8)
        used = x[: self.groups * self.group].reshape(self.groups, self.m, 2, self.d)
        odd, even = used[:, :, 0, :], used[:, :, 1, :]
        blocks = self._padded(odd)[:, np.arange(self.m), np.arange(self.m), :]
        codes = self._codes_from_hits(blocks)
        index = self._global_index(codes)
        safe = np.clip(index, 0, self.d - 1)
        echo = np.take_along_axis(even, safe[..., None], axis=-1)[..., 0]
        return self._assemble(codes, echo)

    def _global_index(self, codes: np.ndarray) -> np.ndarray:
        return np.arange(self.m) * self.block + codes - 2

    def simulate(self, theta, seed) -> np.ndarray:
        """Draws only the coordinates the protocol reads; same law as ``encode``."""
        theta = models.check_theta(self.sampling_model, theta)
        rng = as_generator(seed)
        tpad = self._padded(theta)
        hits = (rng.random((self.groups, self.m, self.block)) < tpad).astype(np.int8)
        codes = self._codes_from_hits(hits)
        index = np.clip(self._global_index(codes), 0, self.d - 1)
        echo = (rng.random((self.groups, self.m)) < theta[index]).astype(np.int8)
        return self._assemble(codes, echo)

    def parse(self, bits) -> tuple:
        """Return ``(codes, echo)`` arrays of shape (groups, m)."""
        bits = self.check_shape(bits)
        pairs = bits[: self.groups * self.group].reshape(self.groups, self.m, 2, self.k)
        codes = pairs[:, :, 0, :].astype(np.int64) @ self._pow
        echo = pairs[:, :, 1, 0].astype(np.int64)
        if np.any(codes - 2 >= self.block_sizes):
            raise DecodeError("a code points past the end of its coordinate block")
        return codes, echo

    def recorded_indices(self, bits) -> np.ndarray:
        """Coordinate recorded by each successful group (0-based)."""
        codes, echo = self.parse(bits)
        is_index = codes >= 2
        ok = (is_index.sum(axis=1) == 1) & ((codes == 0) | is_index).all(axis=1)
        star = is_index.argmax(axis=1)
        rows = np.arange(self.groups)
        ok &= echo[rows, star] == 0
        return self._global_index(codes)[rows, star][ok]

    def decode(self, bits) -> Decoded:
        idx = self.recorded_indices(bits)
        counters = {"groups": self.groups, "successes": int(idx.size), "idle_sensors": self.idle}
        if idx.size == 0:
            return Decoded(np.full(self.d, 1.0 / (self.d + 1)), True, counters)
        return Decoded(np.bincount(idx, minlength=self.d) / idx.size, False, counters)

    def _predicate(self, sensor, bit, history):
        pts = models.sample_space(ModelSpec("product_bernoulli", self.d))
        group_pos = sensor % self.group if sensor < self.groups * self.group else None
        if group_pos is None:
            return TruthTable((0,) * len(pts), "bits")
        pair = group_pos // 2
        if group_pos % 2 == 0:
            hits = self._padded(pts)[:, pair, :]
            codes = self._codes_from_hits(hits)
            return TruthTable(tuple(int(v) for v in self._code_bits(codes)[:, bit]), "bits")
        start = (sensor - 1) * self.k
        code = int("".join(map(str, history[start : start + self.k])), 2)
        if bit > 0 or code < 2:
            return TruthTable((0,) * len(pts), "bits")
        return _coord_table(self.d, pair * self.block + code - 2)


PROTOCOLS = {
    "sharded_bits": ShardedRawBits,
    "probit_grouping": ProbitGrouping,
    "simulate_and_infer": SimulateAndInfer,
}


def build_sharded_raw_bits(n: int, k: int, model: ModelSpec) -> ShardedRawBits:
    return ShardedRawBits(n, k, model)


def build_probit_grouping(n: int, k: int, model: ModelSpec, clamp: float = 1.0) -> ProbitGrouping:
    return ProbitGrouping(n, k, model, clamp)


def build_simulate_and_infer(n: int, k: int, model: ModelSpec) -> SimulateAndInfer:
    return SimulateAndInfer(n, k, model)


def build(name: str, n: int, k: int, model: ModelSpec, **options) -> ProtocolBundle:
    try:
        cls = PROTOCOLS[name]
    except KeyError:
        raise ValueError(f"unknown protocol {name!r}; expected one of {sorted(PROTOCOLS)}") from None
    return cls(n, k, model, **options)


def estimate(bundle: ProtocolBundle, transcripts) -> Decoded:
    """Decode a transcript (``(n, k)`` bits or an ``n*k`` bit string)."""
    return bundle.decode(transcripts)


def execute_tree(bundle: ProtocolBundle, samples) -> str:
    """Run the bundle through its explicit tree (cross-check for ``encode``)."""
    return blackboard.execute(bundle.tree(), samples)
