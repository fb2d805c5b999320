"""Universal coupling sampler and its memoizing, batched realizations.

The randomness of an update is an infinite sequence of pairs ``(X_j, Y_j)``
with ``X_j`` uniform over spins and ``Y_j`` uniform on ``[0, 1)``.  A sample
from ``p`` is ``X_{i*}`` for the smallest ``i*`` with ``Y_{i*} < p(X_{i*})``.
Running two distributions on the same sequence couples them with agreement
probability at least ``sum(min) / sum(max)``.

Pairs are derived by hashing ``(master_seed, site, index, j)``, so the
sequence of any update can be materialized lazily, out of order, and
identically by the scalar and vectorized code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import rng
from .errors import BrokenStreamError, InputError

BATCH_CAP_FACTOR = 64


class UpdateId(NamedTuple):
    site: int
    index: int


class SeedPair(NamedTuple):
    x: int
    y: float


def default_width(q: int) -> int:
    return max(q, 16)


def engine_width(q: int, n: int) -> int:
    """Batch width ``ceil(q ln n)`` used inside the simulation engine."""
    return max(1, math.ceil(q * math.log(n))) if n > 1 else 1


def derive_pair(master_seed: int, update: tuple[int, int], j: int, q: int) -> SeedPair:
    """The ``j``-th (1-based) seed pair of ``update``; a pure function."""
    if j < 1:
        raise InputError("pair index j starts at 1")
    key = rng.stream_key(rng.DOMAIN_PAIR, master_seed, update[0], update[1])
    x = rng.bounded(rng.lane_hash(key, j, rng.LANE_X), q)
    y = rng.unit_float(rng.lane_hash(key, j, rng.LANE_Y))
    return SeedPair(x, y)


@dataclass(frozen=True)
class SeedStream:
    """Lazily indexed pair sequence of one update."""

    master_seed: int
    update: UpdateId
    q: int

    def pair(self, j: int) -> SeedPair:
        return derive_pair(self.master_seed, self.update, j, self.q)


def _check(p, q: int | None = None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or (q is not None and p.size != q):
        raise InputError(f"distribution must have {q} entries, got shape {p.shape}")
    return p


def sample(p, stream: SeedStream, return_index: bool = False):
    """Return ``X_{i*}`` for the first ``i*`` with ``Y_{i*} < p(X_{i*})``.

    Pairs are inspected in batches of ``max(q, 16)``; giving up after
    ``64*q`` batches signals a broken stream, never a legitimate outcome.
    """
    p = _check(p, stream.q)
    limit = BATCH_CAP_FACTOR * stream.q * default_width(stream.q)
    key = rng.stream_key(rng.DOMAIN_PAIR, stream.master_seed, stream.update[0], stream.update[1])
    q = stream.q
    for j in range(1, limit + 1):
        x = rng.bounded(rng.lane_hash(key, j, rng.LANE_X), q)
        y = rng.unit_float(rng.lane_hash(key, j, rng.LANE_Y))
        if y < p[x]:
            return (x, j) if return_index else x
    raise BrokenStreamError(f"no acceptance within {limit} pairs for update {tuple(stream.update)}")


def coupled_sample_pair(p, q_dist, stream: SeedStream) -> tuple[int, int]:
    return sample(p, stream), sample(q_dist, stream)


class ConsistSampler:
    """Memoizing sampler bound to one update's seed stream.

    Pairs are generated ``width`` at a time, the first time a draw needs
    them, and kept forever: repeated draws reuse exactly the same pairs.
    """

    def __init__(self, stream: SeedStream, width: int | None = None):
        self.stream = stream
        self.width = width if width is not None else default_width(stream.q)
        if self.width < 1:
            raise InputError("width must be at least 1")
        self.batches = 0
        self.pairs: list[SeedPair] = []

    def _generate(self) -> None:
        start = self.batches * self.width
        self.pairs.extend(self.stream.pair(j) for j in range(start + 1, start + self.width + 1))
        self.batches += 1

    def draw(self, p) -> int:
        p = _check(p, self.stream.q)
        cap = BATCH_CAP_FACTOR * self.stream.q
        w = self.width
        for ell in range(cap):
            if ell == self.batches:
                self._generate()
            for x, y in self.pairs[ell * w : (ell + 1) * w]:
                if y < p[x]:
                    return x
        raise BrokenStreamError(f"no acceptance within {cap} batches for update {tuple(self.stream.update)}")


def consist_draw(sampler: ConsistSampler, p) -> int:
    return sampler.draw(p)


@dataclass(eq=False)
class SeedBank:
    """Vectorized collection of memoizing samplers, one row per update.

    Row ``r`` owns the stream of update ``(sites[r], indices[r])``.  Batches
    of ``width`` pairs are materialized per row on demand; ``batches[r]``
    records how many.
    """

    master_seed: int
    sites: np.ndarray
    indices: np.ndarray
    q: int
    width: int
    keys: np.ndarray = field(init=False, repr=False)
    batches: np.ndarray = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.sites = np.asarray(self.sites, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.width < 1:
            raise InputError("width must be at least 1")
        rows = self.sites.size
        self.keys = rng.stream_key_v(rng.DOMAIN_PAIR, self.master_seed, self.sites, self.indices)
        self.batches = np.zeros(rows, dtype=np.int64)
        xdt = np.int8 if self.q <= 127 else np.int64
        self.x = np.zeros((rows, self.width), dtype=xdt)
        self.y = np.zeros((rows, self.width), dtype=np.float64)

    @property
    def materialized(self) -> np.ndarray:
        return self.batches * self.width

    def _materialize(self, rows: np.ndarray, b: int) -> None:
        w = self.width
        need = (b + 1) * w
        if need > self.x.shape[1]:
            cap = max(need, 2 * self.x.shape[1])
            for name in ("x", "y"):
                old = getattr(self, name)
                new = np.zeros((old.shape[0], cap), dtype=old.dtype)
                new[:, : old.shape[1]] = old
                setattr(self, name, new)
        counters = np.arange(b * w + 1, need + 1, dtype=np.uint64)[None, :]
        keys = self.keys[rows, None]
        self.x[rows, b * w : need] = rng.bounded_v(rng.lane_hash_v(keys, counters, rng.LANE_X), self.q)
        self.y[rows, b * w : need] = rng.unit_float_v(rng.lane_hash_v(keys, counters, rng.LANE_Y))
        self.batches[rows] = b + 1

    def draw(self, rows, P: np.ndarray, return_index: bool = False):
        """Sample row ``rows[k]`` from distribution ``P[k]`` for every ``k``."""
        rows = np.asarray(rows, dtype=np.int64)
        P = np.asarray(P, dtype=np.float64)
        out = np.full(rows.size, -1, dtype=np.int64)
        istar = np.zeros(rows.size, dtype=np.int64)
        pending = np.arange(rows.size)
        w = self.width
        b = 0
        cap = BATCH_CAP_FACTOR * self.q
        while pending.size:
            if b >= cap:
                raise BrokenStreamError(f"no acceptance within {cap} batches for {pending.size} rows")
            r = rows[pending]
            fresh = r[self.batches[r] == b]
            if fresh.size:
                self._materialize(fresh, b)
            X = self.x[r, b * w : (b + 1) * w].astype(np.int64)
            Y = self.y[r, b * w : (b + 1) * w]
            acc = Y < np.take_along_axis(P[pending], X, axis=1)
            hit = acc.any(axis=1)
            first = acc.argmax(axis=1)
            done = pending[hit]
            out[done] = X[hit, first[hit]]
            istar[done] = b * w + first[hit] + 1
            pending = pending[~hit]
            b += 1
        return (out, istar) if return_index else out


def sample_streams(P: np.ndarray, master_seed: int, sites, indices, width: int | None = None, return_index=False):
    """One-shot vectorized sampling of row ``k`` of ``P`` on stream ``(sites[k], indices[k])``."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    q = P.shape[1]
    bank = SeedBank(master_seed, sites, indices, q, width or default_width(q))
    return bank.draw(np.arange(bank.sites.size), P, return_index=return_index)


def jaccard_similarity(p, q_dist) -> float:
    """``sum(min(p, q)) / sum(max(p, q))``, equal to ``(1 - tv) / (1 + tv)``."""
    p = np.asarray(p, dtype=np.float64)
    q_dist = np.asarray(q_dist, dtype=np.float64)
    if p.shape != q_dist.shape:
        raise InputError("distributions must share a support")
    return float(np.minimum(p, q_dist).sum() / np.maximum(p, q_dist).sum())


def adversarial_family(k: int, omega_size: int) -> list[np.ndarray]:
    """The ``k+1`` distributions uniform on ``{0..k} minus {i}``.

    Every pair is at total variation distance ``1/k``; no universal coupling
    can make all pairs agree with probability above ``(k-1)/(k+1)``.
    """
    if not 1 <= k < omega_size:
        raise InputError(f"need 1 <= k < |Omega|, got k={k}, |Omega|={omega_size}")
    family = []
    for i in range(k + 1):
        p = np.zeros(omega_size)
        p[[x for x in range(k + 1) if x != i]] = 1.0 / k
        family.append(p)
    return family
