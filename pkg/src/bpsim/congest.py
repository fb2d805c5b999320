"""Round-synchronous message-passing simulation of the fixpoint algorithm.

Every node owns its clock, its updates and their randomness.  In Phase I a
node streams its ``b``-bit truncated ring times (and initial spin) to its
neighbors and derives the predecessor counts of its own updates from them.
In Phase II each round delivers every node's current update values to its
neighbors, after which every node resamples all its updates from what it
received.  Round ``r`` of Phase II therefore computes iteration ``r`` of the
engine's fixpoint iteration.

The simulator stores node-local state in flat arrays: a node's own values
are its segment of the value layout, and each directed edge ``u -> v`` owns
a mailbox segment ``[X0(u), X_u[1..M_u]]`` that only messages from ``u``
write and only ``v`` reads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import BlockResolver, chunk_seed, final_configuration, _check_x0
from .errors import InputError, InvariantViolation
from .schedule import UpdateSchedule, generate_schedule, predecessor_table
from .spin_model import Graph, LocalRule, influence_matrix, operator_norm

DEFAULT_TIME_BITS = 32
BANDWIDTH_C = 16


def spin_bits(q: int) -> int:
    return max(1, math.ceil(math.log2(q)))


def count_bits(m: int) -> int:
    return max(1, math.ceil(math.log2(m + 1)))


def phase_two_bits(m: int, q: int) -> int:
    """Encoded size of a node's update-value list: ``m`` spins plus a count."""
    return m * spin_bits(q) + count_bits(m)


def bandwidth(n: int, q: int, b: int, c: int = BANDWIDTH_C) -> int:
    """Per-message bit budget used to stream Phase I time lists."""
    return max(b, math.ceil(c * math.log2(max(n, 1)) * spin_bits(q)))


def default_rounds(T: float, n: int, C: float, alpha: float = 2.0, eps: float = 1e-4) -> int:
    """``ceil((2*e*alpha*C + 1)*T + log2(n/eps) + 1)``, at least 1."""
    return max(1, math.ceil((2 * math.e * alpha * C + 1) * T + math.log2(max(n, 1) / eps) + 1))


def dobrushin_infinity_norm(rule: LocalRule, graph: Graph) -> float:
    return operator_norm(influence_matrix(rule, graph), np.inf)


@dataclass
class NetworkTrace:
    phase1_rounds: int
    L: int
    time_bits: int
    bandwidth: int
    per_round_max_bits: list[int]
    per_round_messages: list[int]
    total_messages: int
    total_bits: int
    phase2_bit_bound: int
    ties: int
    pred_corrupted: bool
    l_exhausted: bool
    fixpoint_round: int | None
    success: bool
    message_log: list[tuple[int, int, int, int, int]] | None = field(default=None, repr=False)

    @property
    def rounds(self) -> int:
        return self.phase1_rounds + self.L

    @property
    def max_phase2_bits(self) -> int:
        return max(self.per_round_max_bits[self.phase1_rounds :], default=0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("message_log")
        d["rounds"] = self.rounds
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def write_message_log(self, path: str | Path) -> None:
        if self.message_log is None:
            raise InputError("trace was recorded without debug=True")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "round", "sender", "receiver", "bits"])
            w.writerows(self.message_log)


def message_stats(trace: NetworkTrace) -> dict:
    bits = trace.per_round_max_bits
    return {
        "rounds": trace.rounds,
        "phase1_rounds": trace.phase1_rounds,
        "phase2_rounds": trace.L,
        "max_bits": max(bits, default=0),
        "max_phase2_bits": trace.max_phase2_bits,
        "total_bits": trace.total_bits,
        "total_messages": trace.total_messages,
    }


@dataclass
class PhaseOne:
    """What every node knows after exchanging truncated times."""

    count: np.ndarray  # (M, Δ+1) predecessor counts from truncated times
    ties: int
    corrupted: bool
    rounds: int
    node_bits: np.ndarray  # total Phase I payload of each node


def truncate_times(times: np.ndarray, T: float, b: int) -> np.ndarray:
    """``floor(t / T * 2**b)``; kept as float64 (exact for any ``b``)."""
    if T <= 0:
        return np.zeros_like(times)
    return np.floor(np.ldexp(np.asarray(times) / T, b))


def phase_one(schedule: UpdateSchedule, graph: Graph, q: int, b: int, c: int = BANDWIDTH_C) -> PhaseOne:
    """Predecessor counts each node derives from its neighbors' truncated times.

    Updates are ordered by ``(truncated time, site)``.  A *tie* is a pair of
    updates at adjacent sites with equal truncated times; only ties can make
    the derived counts differ from the full-precision table, which the
    simulator (knowing full times) checks as well.
    """
    n, M = schedule.n, schedule.total
    width = graph.slots.shape[1]
    tr = truncate_times(schedule.times, schedule.horizon, b)
    dense = np.unique(tr, return_inverse=True)[1].astype(np.int64) if M else np.zeros(0, dtype=np.int64)
    D = int(dense.max()) + 2 if M else 1
    site_of = schedule.site_of
    # Site-major ids have nondecreasing truncated times within a site.
    key = site_of * D + dense
    slot_sites = graph.slots[site_of]
    valid = slot_sites >= 0
    u = np.where(valid, slot_sites, 0)
    query = u * D + dense[:, None]
    left = np.searchsorted(key, query, side="left")
    right = np.searchsorted(key, query, side="right")
    v = site_of[:, None]
    own = u == v
    count = np.where(u < v, right, left) - schedule.offsets[u]
    count = np.where(own, schedule.index_of[:, None] - 1, count)
    count = np.where(valid, count, -1)
    ties = int(((right - left) * (valid & ~own)).sum())
    full = predecessor_table(schedule, graph).count
    corrupted = bool(np.any(count != full))
    counts = schedule.counts
    node_bits = spin_bits(q) + np.array([count_bits(int(m)) for m in counts], dtype=np.int64) + counts * b
    budget = bandwidth(n, q, b, c)
    has_nbrs = graph.degrees > 0
    rounds = int(np.ceil(node_bits[has_nbrs] / budget).max()) if has_nbrs.any() else 0
    return PhaseOne(count=count.reshape(M, width), ties=ties, corrupted=corrupted, rounds=rounds, node_bits=node_bits)


def run_congest(
    x0,
    T: float,
    graph: Graph,
    rule: LocalRule,
    master_seed: int,
    L: int | None = None,
    b: int = DEFAULT_TIME_BITS,
    *,
    C: float | None = None,
    width: int | None = None,
    worker_count: int = 1,
    debug: bool = False,
    schedule: UpdateSchedule | None = None,
) -> tuple[np.ndarray, NetworkTrace]:
    """Simulate the message-passing algorithm; returns ``(output, trace)``.

    Node ``v`` generates its own ring times from ``(master_seed, v)``, so the
    realized schedule is the one ``generate_schedule(n, T, master_seed)``
    produces.  ``L`` defaults to :func:`default_rounds` with ``C`` the
    infinity norm of the influence matrix.
    """
    if b < 16:
        raise InputError(f"time precision must be at least 16 bits, got {b}")
    n, q = graph.n, rule.q
    x0 = _check_x0(x0, graph, q)
    if schedule is None:
        schedule = generate_schedule(n, T, master_seed)
    if L is None:
        if C is None:
            C = dobrushin_infinity_norm(rule, graph)
        L = default_rounds(T, n, C)
    if L < 1:
        raise InputError(f"L must be at least 1, got {L}")
    M = schedule.total
    offsets, counts, site_of = schedule.offsets, schedule.counts, schedule.site_of
    p1 = phase_one(schedule, graph, q, b)

    # Directed edges u -> v with the mailbox segment each one owns.
    src = graph.indices.astype(np.int64)
    dst = np.repeat(np.arange(n, dtype=np.int64), np.diff(graph.indptr))
    seg_len = 1 + counts[src]
    seg_start = np.zeros(src.size + 1, dtype=np.int64)
    np.cumsum(seg_len, out=seg_start[1:])
    box_size = int(seg_start[-1])
    # mailbox position -> position in the sender's own state
    rel = np.arange(box_size, dtype=np.int64) - np.repeat(seg_start[:-1], seg_len)
    box_src = np.where(rel == 0, np.repeat(src, seg_len), n + np.repeat(offsets[src], seg_len) + rel - 1)

    # Where update k reads slot s: own state for itself, the mailbox otherwise.
    width_slots = graph.slots.shape[1]
    slot_sites = graph.slots[site_of]
    own_slot = np.arange(width_slots)[None, :] == 0
    j = p1.count
    own_pos = np.where(j > 0, n + offsets[site_of][:, None] + j - 1, site_of[:, None])
    # edge id of (u -> v) in CSR order: row v, column position of u
    edge_of = np.full(slot_sites.shape, -1, dtype=np.int64)
    if width_slots > 1:
        nb = slot_sites[:, 1:]
        ok = nb >= 0
        row = graph.indptr[site_of][:, None] + np.arange(width_slots - 1)[None, :]
        edge_of[:, 1:] = np.where(ok, row, -1)
    box_pos = (n + M) + seg_start[np.maximum(edge_of, 0)] + np.maximum(j, 0)
    read_index = np.where(own_slot, own_pos, box_pos)
    sentinel = n + M + box_size
    read_index = np.where(slot_sites >= 0, read_index, sentinel)

    taint_box = np.repeat(src, seg_len) if debug else None

    own = np.empty(n + M, dtype=np.int64)
    own[:n] = x0
    own[n:] = x0[site_of]
    log: list[tuple[int, int, int, int, int]] | None = [] if debug else None
    per_round_bits: list[int] = []
    per_round_msgs: list[int] = []

    budget = bandwidth(n, q, b)
    for r in range(p1.rounds):
        left = p1.node_bits[src] - r * budget
        sent = left > 0
        bits = np.minimum(left[sent], budget)
        per_round_bits.append(int(bits.max()) if bits.size else 0)
        per_round_msgs.append(int(sent.sum()))
        if log is not None:
            log.extend((1, r + 1, int(s), int(d), int(x)) for s, d, x in zip(src[sent], dst[sent], bits))

    p2_bits = np.array([phase_two_bits(int(m), q) for m in counts[src]], dtype=np.int64)
    round_bits = int(p2_bits.max()) if p2_bits.size else 0
    bound = int(counts.max()) * spin_bits(q) + count_bits(int(counts.max())) if n else 0

    mailbox = np.zeros(0, dtype=np.int64)
    fixpoint_round = None
    exhausted = False
    ids = np.arange(M, dtype=np.int64)
    with BlockResolver(schedule, rule, master_seed, width, worker_count) as resolver:
        for r in range(1, L + 2):
            # Delivery: every node sends its previous-round values to each neighbor.
            if box_size:
                mailbox = own[box_src]
            combined = np.concatenate([own, mailbox, [-1]])
            if debug and M:
                _audit(read_index, slot_sites, site_of, n, M, taint_box)
            new = resolver.resolve(ids, combined, read_index)
            changed = bool(np.any(new != own[n:]))
            if r == L + 1:
                # Probe round, not part of the protocol: would one more round change anything?
                exhausted = changed
                break
            if r <= L:
                per_round_bits.append(round_bits)
                per_round_msgs.append(int(src.size))
                if log is not None:
                    log.extend((2, p1.rounds + r, int(s), int(d), int(x)) for s, d, x in zip(src, dst, p2_bits))
            own = own.copy()
            own[n:] = new
            if not changed:
                fixpoint_round = r
                # Nothing can change any more; account for the remaining rounds only.
                for rr in range(r + 1, L + 1):
                    per_round_bits.append(round_bits)
                    per_round_msgs.append(int(src.size))
                    if log is not None:
                        log.extend((2, p1.rounds + rr, int(s), int(d), int(x)) for s, d, x in zip(src, dst, p2_bits))
                break

    if round_bits > bound:
        raise InvariantViolation(f"message of {round_bits} bits exceeds encoder bound {bound}")
    p1_bits = int(p1.node_bits[src].sum())
    trace = NetworkTrace(
        phase1_rounds=p1.rounds,
        L=L,
        time_bits=b,
        bandwidth=budget,
        per_round_max_bits=per_round_bits,
        per_round_messages=per_round_msgs,
        total_messages=int(sum(per_round_msgs)),
        total_bits=p1_bits + L * int(p2_bits.sum()),
        phase2_bit_bound=bound,
        ties=p1.ties,
        pred_corrupted=p1.corrupted,
        l_exhausted=exhausted,
        fixpoint_round=fixpoint_round,
        success=not (p1.corrupted or exhausted),
        message_log=log,
    )
    return final_configuration(schedule, own), trace


def _audit(read_index, slot_sites, site_of, n, M, taint_box) -> None:
    """Check every value a node reads came from itself or a neighbor's message."""
    valid = slot_sites >= 0
    reader = np.broadcast_to(site_of[:, None], read_index.shape)
    initial = valid & (read_index < n)
    updates = valid & (read_index >= n) & (read_index < n + M)
    box = valid & (read_index >= n + M)
    origin = np.full(read_index.shape, -1, dtype=np.int64)
    origin[initial] = read_index[initial]
    origin[updates] = site_of[read_index[updates] - n]
    origin[box] = taint_box[read_index[box] - (n + M)]
    own_ok = np.where(box, True, origin == reader) | ~valid
    box_ok = np.where(box, origin == slot_sites, True)
    if not (np.all(own_ok) and np.all(box_ok)):
        raise InvariantViolation("a node read a value that did not originate from its neighborhood")


@dataclass
class ChunkedTrace:
    chunks: list[NetworkTrace]

    @property
    def rounds(self) -> int:
        return sum(t.rounds for t in self.chunks)

    @property
    def max_bits(self) -> int:
        return max((max(t.per_round_max_bits, default=0) for t in self.chunks), default=0)

    @property
    def success(self) -> bool:
        return all(t.success for t in self.chunks)

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "max_bits": self.max_bits,
            "success": self.success,
            "chunks": [t.to_dict() for t in self.chunks],
        }


def run_congest_chunked(
    x0,
    T: float,
    graph: Graph,
    rule: LocalRule,
    master_seed: int,
    chunk_length: float | None = None,
    L: int | None = None,
    b: int = DEFAULT_TIME_BITS,
    *,
    C: float | None = None,
    width: int | None = None,
    worker_count: int = 1,
) -> tuple[np.ndarray, ChunkedTrace]:
    """Run consecutive chunks with the same sub-seeds as the chunked engine."""
    if T < 0:
        raise InputError(f"horizon must be non-negative, got {T}")
    n = graph.n
    length = chunk_length if chunk_length is not None else (max(1.0, math.log(n)) if n > 1 else 1.0)
    if C is None and L is None:
        C = dobrushin_infinity_norm(rule, graph)
    c = 0
    while T - c * length > length:
        c += 1
    spans = [length] * c + [T - c * length]
    x = _check_x0(x0, graph, rule.q)
    traces = []
    for k, span in enumerate(spans):
        seed = chunk_seed(master_seed, k)
        x, tr = run_congest(x, span, graph, rule, seed, L, b, C=C, width=width, worker_count=worker_count)
        traces.append(tr)
    return x, ChunkedTrace(traces)
