"""Parallel fixpoint simulation of continuous-time single-site dynamics.

:func:`simulate_fixpoint` iterates an array holding one entry per update.
Iteration ``l`` rebuilds every update's neighborhood configuration from the
values of iteration ``l-1`` (via the predecessor table) and resamples it with
that update's own memoized randomness; it stops once an iteration changes
nothing.  :func:`simulate_sequential` replays the same updates one by one in
time order and is the reference the fixpoint must reproduce exactly.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .coupling import SeedBank, SeedStream, UpdateId, engine_width, sample
from .errors import InputError, InvariantViolation
from .schedule import (
    UpdateSchedule,
    dependents,
    gather_ranges,
    generate_schedule,
    predecessor_table,
    update_depths,
)
from .spin_model import Graph, LocalRule, ModelSpec, build_rule, replicate_graph


@dataclass
class EngineConfig:
    master_seed: int = 0
    chunk_length: float | None = None
    max_iterations: int | None = None
    worker_count: int = 1
    width: int | None = None
    track_depth: bool = True

    def __post_init__(self):
        if self.max_iterations is not None and self.max_iterations < 1:
            raise InputError("max_iterations must be at least 1")
        if self.chunk_length is not None and not self.chunk_length > 0:
            raise InputError("chunk_length must be positive")

    def resolved_chunk_length(self, n: int) -> float:
        if self.chunk_length is not None:
            return float(self.chunk_length)
        return max(1.0, math.log(n)) if n > 1 else 1.0

    def resolved_workers(self) -> int:
        if self.worker_count == 0:
            import os

            return os.cpu_count() or 1
        return max(1, self.worker_count)


@dataclass
class Trajectory:
    """Values of every update in the value layout (``[X0 | updates]``)."""

    schedule: UpdateSchedule
    values: np.ndarray

    def site_values(self, v: int) -> np.ndarray:
        """``[X_v[0], X_v[1], ..., X_v[M_v]]``."""
        n = self.schedule.n
        s, e = self.schedule.offsets[v], self.schedule.offsets[v + 1]
        return np.concatenate([self.values[v : v + 1], self.values[n + s : n + e]])

    @property
    def final(self) -> np.ndarray:
        return final_configuration(self.schedule, self.values)

    def first_mismatch(self, other: "Trajectory") -> UpdateId | None:
        n = self.schedule.n
        diff = np.flatnonzero(self.values[n:] != other.values[n:])
        if diff.size == 0:
            return None
        k = int(diff[np.argmin(self.schedule.rank[diff])])
        return UpdateId(int(self.schedule.site_of[k]), int(self.schedule.index_of[k]))


@dataclass
class FixpointTelemetry:
    iterations: int
    changed_per_iteration: list[int]
    total_updates: int
    max_depth: int | None
    pairs_materialized: int
    wall_ms: float
    trajectory: Trajectory = field(repr=False)


def final_configuration(schedule: UpdateSchedule, values: np.ndarray) -> np.ndarray:
    n = schedule.n
    counts = schedule.counts
    last = n + schedule.offsets[1:] - 1
    out = np.asarray(values[:n], dtype=np.int64).copy()
    has = counts > 0
    out[has] = values[last[has]]
    return out


def _check_x0(x0, graph: Graph, q: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.shape != (graph.n,):
        raise InputError(f"initial configuration has shape {x0.shape}, expected ({graph.n},)")
    if x0.size and (x0.min() < 0 or x0.max() >= q):
        raise InputError(f"initial spins must lie in 0..{q - 1}")
    return x0


class BlockResolver:
    """Resolves updates with their memoized randomness, split over workers.

    Updates are partitioned into ``worker_count`` contiguous id blocks, each
    owning the samplers of its updates, so a sampler is only ever touched by
    one worker.  Results do not depend on the number of blocks.
    """

    def __init__(self, schedule: UpdateSchedule, rule: LocalRule, master_seed: int, width=None, worker_count=1):
        M = schedule.total
        self.rule = rule
        self.site_of = schedule.site_of
        width = width or engine_width(rule.q, schedule.n)
        self.workers = max(1, min(worker_count, M)) if M else 1
        self.bounds = np.linspace(0, M, self.workers + 1).astype(np.int64)
        self.banks = [
            SeedBank(master_seed, self.site_of[s:e], schedule.index_of[s:e], rule.q, width)
            for s, e in zip(self.bounds[:-1], self.bounds[1:])
        ]
        self.pool = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    @property
    def pairs_materialized(self) -> int:
        return int(sum(b.materialized.sum() for b in self.banks))

    def _block(self, b: int, ids: np.ndarray, values: np.ndarray, index: np.ndarray) -> np.ndarray:
        if ids.size == 0:
            return np.zeros(0, dtype=np.int64)
        P = self.rule.evaluate_batch(self.site_of[ids], values[index[ids]])
        return self.banks[b].draw(ids - self.bounds[b], P)

    def resolve(self, ids: np.ndarray, values: np.ndarray, index: np.ndarray) -> np.ndarray:
        """New values of the sorted update ids ``ids``; neighborhoods read ``values[index[id]]``."""
        cuts = np.searchsorted(ids, self.bounds)
        parts = [ids[cuts[b] : cuts[b + 1]] for b in range(self.workers)]
        if self.pool is None:
            outs = [self._block(b, parts[b], values, index) for b in range(self.workers)]
        else:
            k = self.workers
            outs = list(self.pool.map(self._block, range(k), parts, [values] * k, [index] * k))
        return np.concatenate(outs) if outs else np.zeros(0, dtype=np.int64)


def simulate_fixpoint(
    x0,
    schedule: UpdateSchedule,
    graph: Graph,
    rule: LocalRule,
    master_seed: int,
    *,
    width: int | None = None,
    max_iterations: int | None = None,
    worker_count: int = 1,
    track_depth: bool = True,
) -> tuple[np.ndarray, FixpointTelemetry]:
    """Run the fixpoint iteration on one schedule; returns ``(X_T, telemetry)``.

    Only updates whose neighborhood configuration changed in the previous
    iteration are resampled; the others would reproduce their old value
    because resolution is a pure function of the configuration and the
    update's fixed randomness.
    """
    t0 = time.perf_counter()
    x0 = _check_x0(x0, graph, rule.q)
    n, M = schedule.n, schedule.total
    table = predecessor_table(schedule, graph)
    idx = table.value_index
    site_of = schedule.site_of

    cur = np.empty(n + M + 1, dtype=np.int64)
    cur[:n] = x0
    cur[n : n + M] = x0[site_of]
    cur[-1] = -1

    resolver = BlockResolver(schedule, rule, master_seed, width, worker_count)
    indptr, readers = dependents(table)
    cap = max_iterations if max_iterations is not None else M + 2
    with resolver:
        active = np.arange(M, dtype=np.int64)
        history: list[int] = []
        ell = 0
        while True:
            ell += 1
            if ell > cap:
                raise InvariantViolation(f"no fixpoint after {cap} iterations with {M} updates")
            new = resolver.resolve(active, cur, idx)
            diff = new != cur[n + active]
            changed = active[diff]
            history.append(int(changed.size))
            if changed.size == 0:
                break
            nxt = cur.copy()
            nxt[n + changed] = new[diff]
            cur = nxt
            active = np.unique(gather_ranges(indptr, readers, n + changed))

    if ell > M + 1:
        raise InvariantViolation(f"{ell} iterations exceed the m+1 = {M + 1} bound")
    depth = None
    if track_depth:
        d = update_depths(schedule, graph, table)
        depth = int(d.max()) if d.size else 0
    values = cur[: n + M].copy()
    telemetry = FixpointTelemetry(
        iterations=ell,
        changed_per_iteration=history,
        total_updates=M,
        max_depth=depth,
        pairs_materialized=resolver.pairs_materialized,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        trajectory=Trajectory(schedule, values),
    )
    return final_configuration(schedule, values), telemetry


def simulate_sequential(x0, schedule: UpdateSchedule, graph: Graph, rule: LocalRule, master_seed: int) -> Trajectory:
    """Resolve updates one at a time in ``(time, site)`` order.

    Each update reads the current spins of its inclusive neighborhood and
    draws with :func:`coupling.sample` on its own seed stream.
    """
    x0 = _check_x0(x0, graph, rule.q)
    n, M = schedule.n, schedule.total
    values = np.empty(n + M, dtype=np.int64)
    values[:n] = x0
    current = [int(s) for s in x0]
    site_of = schedule.site_of.tolist()
    index_of = schedule.index_of.tolist()
    nbhd = [graph.inclusive_neighborhood(v) for v in range(n)]
    for k in schedule.order.tolist():
        v = site_of[k]
        p = rule.evaluate(v, [current[u] for u in nbhd[v]])
        spin = sample(p, SeedStream(master_seed, UpdateId(v, index_of[k]), rule.q))
        current[v] = spin
        values[n + k] = spin
    return Trajectory(schedule, values)


def chunk_seed(master_seed: int, chunk: int) -> int:
    return rng.derive_seed(master_seed, rng.DOMAIN_CHUNK, chunk)


@dataclass
class SimulationResult:
    final: np.ndarray
    iterations_per_chunk: list[int]
    changed_per_iteration: list[list[int]]
    total_updates: int
    max_depth_observed: int | None
    wall_ms: float
    chunk_telemetry: list[FixpointTelemetry] = field(default_factory=list, repr=False)

    def telemetry_dict(self, include_wall: bool = True) -> dict:
        d = {
            "iterations_per_chunk": self.iterations_per_chunk,
            "changed_per_iteration": self.changed_per_iteration,
            "total_updates": self.total_updates,
            "max_depth_observed": self.max_depth_observed,
        }
        if include_wall:
            d["wall_ms"] = round(self.wall_ms, 3)
        return d

    def to_json(self) -> str:
        return json.dumps(self.telemetry_dict())


def simulate_chunked(x0, T: float, graph: Graph, rule: LocalRule, config: EngineConfig) -> SimulationResult:
    """Simulate up to time ``T`` as consecutive chunks of ``chunk_length``.

    Chunk ``c`` uses a fresh schedule and fresh randomness, both derived
    from ``(master_seed, c)``; the output of one chunk starts the next.
    """
    if T < 0:
        raise InputError(f"horizon must be non-negative, got {T}")
    t0 = time.perf_counter()
    x = _check_x0(x0, graph, rule.q)
    n = graph.n
    length = config.resolved_chunk_length(n)
    workers = config.resolved_workers()
    tels: list[FixpointTelemetry] = []
    c = 0
    while T - c * length > length:
        c += 1
    spans = [length] * c + [T - c * length]
    for chunk, span in enumerate(spans):
        seed = chunk_seed(config.master_seed, chunk)
        sched = generate_schedule(n, span, seed)
        x, tel = simulate_fixpoint(
            x,
            sched,
            graph,
            rule,
            seed,
            width=config.width,
            max_iterations=config.max_iterations,
            worker_count=workers,
            track_depth=config.track_depth,
        )
        tels.append(tel)
    depths = [t.max_depth for t in tels if t.max_depth is not None]
    return SimulationResult(
        final=x,
        iterations_per_chunk=[t.iterations for t in tels],
        changed_per_iteration=[t.changed_per_iteration for t in tels],
        total_updates=sum(t.total_updates for t in tels),
        max_depth_observed=max(depths) if depths else None,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        chunk_telemetry=tels,
    )


def run_replicas(
    spec: ModelSpec,
    graph: Graph,
    x0,
    T: float,
    copies: int,
    config: EngineConfig,
    group_size: int = 20_000,
    precision_bits: int | None = None,
) -> np.ndarray:
    """Final configurations of ``copies`` independent runs, shape ``(copies, n)``.

    Replicas are simulated together as one disjoint union of graph copies;
    distinct site ids give every replica its own randomness.  Chunk length
    and batch width default to the single-graph values.
    """
    n = graph.n
    x0 = _check_x0(x0, graph, spec.q)
    out = np.empty((copies, n), dtype=np.int64)
    length = config.resolved_chunk_length(n)
    width = config.width or engine_width(spec.q, n)
    start = 0
    group = 0
    while start < copies:
        size = min(group_size, copies - start)
        union = replicate_graph(graph, size)
        spec_u = spec
        if spec.is_ising and not isinstance(spec.lam, (int, float)):
            spec_u = ModelSpec(spec.kind, spec.beta, tuple(spec.lam) * size, spec.q)
        rule = build_rule(spec_u, union, precision_bits)
        cfg = EngineConfig(
            master_seed=rng.derive_seed(config.master_seed, group),
            chunk_length=length,
            max_iterations=config.max_iterations,
            worker_count=config.worker_count,
            width=width,
            track_depth=False,
        )
        res = simulate_chunked(np.tile(x0, size), T, union, rule, cfg)
        out[start : start + size] = res.final.reshape(size, n)
        start += size
        group += 1
    return out


def iteration_statistics(results) -> dict:
    """Mean / 95th percentile / max iteration counts over a batch.

    Accepts :class:`SimulationResult`, :class:`FixpointTelemetry` or plain
    integers; chunked results contribute one count per chunk.
    """
    counts: list[int] = []
    for r in results:
        if isinstance(r, SimulationResult):
            counts.extend(r.iterations_per_chunk)
        elif isinstance(r, FixpointTelemetry):
            counts.append(r.iterations)
        else:
            counts.append(int(r))
    if not counts:
        raise InputError("iteration_statistics needs a non-empty batch")
    a = np.asarray(counts, dtype=np.float64)
    return {
        "count": int(a.size),
        "mean": float(a.mean()),
        "p95": float(np.percentile(a, 95)),
        "max": int(a.max()),
        "min": int(a.min()),
    }


def fit_iteration_envelope(T_values, n_values, iterations) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares fit ``iterations ~ c1*T + c2*log2(n) + c3``.

    Returns ``(coefficients, relative_residuals)``.  When ``T`` is a multiple
    of ``log n`` the two regressors are collinear and the minimum-norm
    solution is returned.
    """
    T_values = np.asarray(T_values, dtype=np.float64)
    y = np.asarray(iterations, dtype=np.float64)
    A = np.column_stack([T_values, np.log2(np.asarray(n_values, dtype=np.float64)), np.ones_like(y)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, (y - A @ coef) / y
