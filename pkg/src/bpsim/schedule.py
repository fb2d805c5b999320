"""Poisson update schedules, predecessor tables and update depths.

Updates are numbered site-major: update ``(v, i)`` (``i >= 1``) has flat id
``offsets[v] + i - 1``.  Arrays of update values use the *value layout*
``[X0 (n entries) | updates (M entries) | sentinel]``: position ``u`` holds
``X_u[0]``, position ``n + id`` holds the value of update ``id``, and the
last position is a ``-1`` sentinel used for padded neighborhood slots.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import rng
from .spin_model import Graph

_MAGIC = b"BPSCHED1"


@dataclass(frozen=True, eq=False)
class UpdateSchedule:
    """Ring times of ``n`` independent rate-1 Poisson clocks on ``(0, horizon)``."""

    n: int
    horizon: float
    offsets: np.ndarray
    times: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def total(self) -> int:
        return int(self.offsets[-1])

    def site_times(self, v: int) -> np.ndarray:
        return self.times[self.offsets[v] : self.offsets[v + 1]]

    def update_id(self, v: int, i: int) -> int:
        if not 1 <= i <= self.offsets[v + 1] - self.offsets[v]:
            raise IndexError(f"site {v} has no update {i}")
        return int(self.offsets[v] + i - 1)

    @cached_property
    def site_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int64), self.counts)

    @cached_property
    def index_of(self) -> np.ndarray:
        """1-based index of each update within its site."""
        return np.arange(self.total, dtype=np.int64) - self.offsets[self.site_of] + 1

    @cached_property
    def order(self) -> np.ndarray:
        """Update ids in global event order, keyed by ``(time, site)``."""
        return np.lexsort((self.site_of, self.times))

    @cached_property
    def rank(self) -> np.ndarray:
        r = np.empty(self.total, dtype=np.int64)
        r[self.order] = np.arange(self.total, dtype=np.int64)
        return r

    def to_bytes(self) -> bytes:
        head = _MAGIC + struct.pack("<Qd", self.n, self.horizon)
        return head + self.counts.astype("<u8").tobytes() + self.times.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "UpdateSchedule":
        if data[:8] != _MAGIC:
            raise ValueError("not a schedule dump")
        n, horizon = struct.unpack_from("<Qd", data, 8)
        pos = 24
        counts = np.frombuffer(data, dtype="<u8", count=n, offset=pos).astype(np.int64)
        pos += 8 * n
        total = int(counts.sum())
        times = np.frombuffer(data, dtype="<f8", count=total, offset=pos).astype(np.float64)
        return _make(n, horizon, counts, times)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "UpdateSchedule":
        return cls.from_bytes(Path(path).read_bytes())


def _make(n: int, horizon: float, counts: np.ndarray, times: np.ndarray) -> UpdateSchedule:
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    times = np.ascontiguousarray(times, dtype=np.float64)
    offsets.setflags(write=False)
    times.setflags(write=False)
    return UpdateSchedule(n=n, horizon=float(horizon), offsets=offsets, times=times)


def schedule_from_times(horizon: float, per_site: list) -> UpdateSchedule:
    """Build a schedule from explicit per-site ascending time lists."""
    counts = np.array([len(t) for t in per_site], dtype=np.int64)
    flat = np.concatenate([np.asarray(t, dtype=np.float64) for t in per_site]) if per_site else np.zeros(0)
    for t in per_site:
        t = np.asarray(t, dtype=np.float64)
        if t.size and (t[0] <= 0 or t[-1] >= horizon or np.any(np.diff(t) <= 0)):
            raise ValueError("times must be strictly increasing inside (0, horizon)")
    return _make(len(per_site), horizon, counts, flat)


def poisson_times(rng_seed: int, sites: np.ndarray, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Ring times of the clocks at ``sites``; returns ``(counts, flat_times)``.

    The ``i``-th inter-arrival of site ``v`` is a pure function of
    ``(rng_seed, v, i)``, so a site can generate its own times locally and a
    longer horizon extends a shorter one without changing shared times.
    """
    sites = np.asarray(sites, dtype=np.int64)
    n = sites.size
    if T <= 0 or n == 0:
        return np.zeros(n, dtype=np.int64), np.zeros(0)
    keys = rng.stream_key_v(rng.DOMAIN_TIME, rng_seed, sites, 0)
    width = int(T + 4.0 * math.sqrt(T)) + 8
    labels: list[np.ndarray] = []
    values: list[np.ndarray] = []
    last = np.zeros(n)
    live = np.arange(n)
    start = 0
    while live.size:
        counters = np.arange(start + 1, start + width + 1, dtype=np.uint64)
        u = rng.open_unit_float_v(rng.lane_hash_v(keys[live, None], counters[None, :], rng.LANE_X))
        gaps = -np.log1p(-u)
        # Prepending the carry keeps the summation order independent of width.
        acc = np.cumsum(np.concatenate([last[live, None], gaps], axis=1), axis=1)[:, 1:]
        inside = acc < T
        labels.append(np.broadcast_to(live[:, None], acc.shape)[inside])
        values.append(acc[inside])
        last[live] = acc[:, -1]
        live = live[inside[:, -1]]
        start += width
    label = np.concatenate(labels)
    order = np.argsort(label, kind="stable")
    label = label[order]
    flat = np.concatenate(values)[order]
    counts = np.bincount(label, minlength=n).astype(np.int64)
    # Float accumulation can swallow a tiny gap; keep per-site times strictly increasing.
    bump = np.flatnonzero((np.diff(flat) <= 0) & (label[1:] == label[:-1]))
    for k in bump:
        flat[k + 1] = np.nextafter(flat[k], np.inf)
    return counts, flat


def generate_schedule(n: int, T: float, rng_seed: int) -> UpdateSchedule:
    """Independent rate-1 Poisson clocks at every site up to horizon ``T``."""
    if T < 0:
        raise ValueError(f"horizon must be non-negative, got {T}")
    counts, flat = poisson_times(rng_seed, np.arange(n), T)
    return _make(n, T, counts, flat)


@dataclass(frozen=True, eq=False)
class PredecessorTable:
    """For each update ``(v, i)`` and slot ``u`` of ``N_v^+``: ``j_u = pred_u(v, i)``.

    ``count[k, s]`` holds ``j_u`` for slot ``s`` of update ``k`` (``-1`` on
    padding) and ``value_index[k, s]`` points into the value layout.
    """

    count: np.ndarray
    value_index: np.ndarray
    schedule: UpdateSchedule
    graph: Graph

    def pred(self, u: int, v: int, i: int) -> int:
        k = self.schedule.update_id(v, i)
        slot = self.graph.inclusive_neighborhood(v).index(u)
        return int(self.count[k, slot])


def predecessor_table(schedule: UpdateSchedule, graph: Graph) -> PredecessorTable:
    n, M = schedule.n, schedule.total
    if graph.n != n:
        raise ValueError(f"schedule has {n} sites but graph has {graph.n}")
    width = graph.slots.shape[1]
    site_of = schedule.site_of
    slot_sites = graph.slots[site_of]  # (M, width)
    valid = slot_sites >= 0
    # Site-major ids have increasing global rank within a site, so this key is sorted.
    key = site_of * (M + 1) + schedule.rank
    u = np.where(valid, slot_sites, 0)
    query = u * (M + 1) + schedule.rank[:, None]
    pos = np.searchsorted(key, query, side="left")
    count = np.where(valid, pos - schedule.offsets[u], -1)
    value_index = np.where(count > 0, n + schedule.offsets[u] + count - 1, u)
    value_index = np.where(valid, value_index, n + M)
    count = count.reshape(M, width)
    value_index = value_index.reshape(M, width)
    count.setflags(write=False)
    value_index.setflags(write=False)
    return PredecessorTable(count=count, value_index=value_index, schedule=schedule, graph=graph)


def dependents(table: PredecessorTable) -> tuple[np.ndarray, np.ndarray]:
    """Reverse of ``value_index``: CSR ``(indptr, update_ids)`` over value positions."""
    M, width = table.value_index.shape
    size = table.schedule.n + M + 1
    flat = table.value_index.ravel()
    readers = np.repeat(np.arange(M, dtype=np.int64), width)
    order = np.argsort(flat, kind="stable")
    indptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(np.bincount(flat, minlength=size), out=indptr[1:])
    return indptr, readers[order]


def gather_ranges(indptr: np.ndarray, data: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Concatenate ``data[indptr[r]:indptr[r+1]]`` for every ``r`` in ``rows``."""
    starts = indptr[rows]
    lengths = indptr[rows + 1] - starts
    total = int(lengths.sum())
    if total == 0:
        return data[:0]
    shift = np.repeat(starts - np.cumsum(lengths) + lengths, lengths)
    return data[shift + np.arange(total)]


def update_depths(schedule: UpdateSchedule, graph: Graph, table: PredecessorTable | None = None) -> np.ndarray:
    """Longest-chain depth of every update under the neighborhood partial order.

    An update's immediate predecessors are exactly the ``(u, pred_u)`` entries
    of its table row, so ``depth = 1 + max(depth of those)`` (initial values
    count as depth 0).  Evaluated by relaxation until stable.
    """
    if table is None:
        table = predecessor_table(schedule, graph)
    n, M = schedule.n, schedule.total
    if M == 0:
        return np.zeros(0, dtype=np.int64)
    dval = np.zeros(n + M + 1, dtype=np.int64)
    idx = table.value_index
    indptr, readers = dependents(table)
    active = np.arange(M)
    while active.size:
        new = 1 + dval[idx[active]].max(axis=1)
        changed = active[new != dval[n + active]]
        dval[n + active] = new
        if changed.size == 0:
            break
        active = np.unique(gather_ranges(indptr, readers, n + changed))
    return dval[n : n + M].copy()


def depth_tail_bound(n: int, max_degree: int, T: float, ell: int) -> float:
    """``n * (e*(Δ+1)*T/ell)**ell`` clamped to ``[0, 1]``."""
    if ell < 1:
        raise ValueError("ell must be at least 1")
    if T <= 0 or n <= 0:
        return 0.0
    log_val = math.log(n) + ell * (1.0 + math.log((max_degree + 1) * T) - math.log(ell))
    return 1.0 if log_val >= 0 else math.exp(log_val)
