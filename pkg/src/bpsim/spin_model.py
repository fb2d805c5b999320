"""Graphs, spin models, local update rules and exact oracles.

Spins are the integers ``0..q-1``.  A local rule maps a site ``v`` and a
configuration ``tau`` on its inclusive neighborhood to a distribution over
spins.  Throughout the package ``tau`` is laid out as a row of ``Δ+1`` slots:
slot 0 holds the site's own spin and slots ``1..deg(v)`` hold the neighbors'
spins in ascending site order; unused slots are padded with ``-1``.

Rule arithmetic avoids transcendental functions on the batched path: powers
of ``beta`` come from a per-rule table, and everything else is elementwise
``+``, ``*`` and ``/``.  This keeps a single-row evaluation bit-identical to
the same row evaluated inside a large batch, which the simulation engine
relies on when it is compared against the sequential oracle.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ConvergenceError, DegenerateDistributionError, InputError

PROB_ATOL = 1e-12
ENUMERATION_BUDGET = 1 << 24
INFLUENCE_BUDGET = 1 << 22
DEFAULT_DEGREE_CAP = 20


# ---------------------------------------------------------------------------
# Graphs


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph stored in CSR form.

    Use :func:`build_graph` rather than constructing this directly.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    indptr: np.ndarray
    indices: np.ndarray
    slots: np.ndarray = field(repr=False)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    def inclusive_neighborhood(self, v: int) -> tuple[int, ...]:
        """``(v, *neighbors)``: the site first, then its sorted neighbors."""
        return (v, *map(int, self.neighbors(v)))

    def local_tau(self, v: int, sigma: Sequence[int]) -> tuple[int, ...]:
        """Restrict a full configuration to ``v``'s inclusive neighborhood."""
        return tuple(int(sigma[u]) for u in self.inclusive_neighborhood(v))

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(v)
        k = np.searchsorted(nb, u)
        return bool(k < nb.size and nb[k] == u)

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={len(self.edges)}, max_degree={self.max_degree})"


def build_graph(n: int, edge_list: Iterable[Sequence[int]]) -> Graph:
    """Build a graph on sites ``0..n-1``; duplicate edges are merged."""
    if n < 0:
        raise InputError(f"site count must be non-negative, got {n}")
    pairs = set()
    for e in edge_list:
        u, v = int(e[0]), int(e[1])
        if u == v:
            raise InputError(f"self-loop ({u}, {v}) is not allowed")
        if not (0 <= u < n and 0 <= v < n):
            raise InputError(f"edge ({u}, {v}) has an endpoint outside 0..{n - 1}")
        pairs.add((min(u, v), max(u, v)))
    edges = tuple(sorted(pairs))
    deg = np.zeros(n, dtype=np.int64)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    if edges:
        e = np.asarray(edges, dtype=np.int64)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        indices = dst[order]
    else:
        indices = np.zeros(0, dtype=np.int64)
    width = (int(deg.max()) if n else 0) + 1
    slots = np.full((n, width), -1, dtype=np.int64)
    if n:
        slots[:, 0] = np.arange(n)
        rows = np.repeat(np.arange(n), deg)
        cols = np.arange(indices.size) - indptr[rows] + 1
        slots[rows, cols] = indices
    for a in (indptr, indices, slots):
        a.setflags(write=False)
    return Graph(n=n, edges=edges, indptr=indptr, indices=indices, slots=slots)


def replicate_graph(graph: Graph, copies: int) -> Graph:
    """Disjoint union of ``copies`` copies of ``graph``.

    Copy ``r`` occupies sites ``r*n .. r*n+n-1``.  Running a dynamics on the
    union is the same as running independent replicas of the original.
    """
    n = graph.n
    if not graph.edges:
        return build_graph(n * copies, [])
    e = np.asarray(graph.edges, dtype=np.int64)
    shift = (np.arange(copies, dtype=np.int64) * n)[:, None, None]
    return build_graph(n * copies, (e[None, :, :] + shift).reshape(-1, 2).tolist())


def read_edge_list(path: str | Path) -> Graph:
    """Parse the text format: a header line ``n m`` then ``m`` lines ``u v``."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"{path}: cannot read graph file ({exc})") from exc
    body = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise InputError(f"{path}: empty graph file")
    lineno, head = body[0]
    try:
        n, m = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise InputError(f"{path}:{lineno}: expected header 'n m'") from None
    if len(body) - 1 != m:
        raise InputError(f"{path}: header declares {m} edges but found {len(body) - 1}")
    edges = []
    for lineno, tok in body[1:]:
        try:
            u, v = int(tok[0]), int(tok[1])
        except (ValueError, IndexError):
            raise InputError(f"{path}:{lineno}: expected 'u v'") from None
        if len(tok) != 2:
            raise InputError(f"{path}:{lineno}: expected exactly two integers")
        edges.append((u, v))
    try:
        return build_graph(n, edges)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_edge_list(graph: Graph, path: str | Path) -> None:
    lines = [f"{graph.n} {len(graph.edges)}"] + [f"{u} {v}" for u, v in graph.edges]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Models


class ModelKind(str, enum.Enum):
    ISING_GLAUBER = "IsingGlauber"
    ISING_METROPOLIS = "IsingMetropolis"
    POTTS_GLAUBER = "PottsGlauber"
    COLORING_GLAUBER = "ColoringGlauber"


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of one of the supported spin models.

    ``lam`` is either a scalar or a per-site sequence of local fields; it
    multiplies spin 1 (``lambda_v ** sigma_v``) and is used by Ising kinds only.
    """

    kind: ModelKind
    beta: float = 1.0
    lam: float | tuple[float, ...] = 1.0
    q: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not isinstance(self.lam, (int, float)):
            object.__setattr__(self, "lam", tuple(float(x) for x in self.lam))
        ising = self.kind in (ModelKind.ISING_GLAUBER, ModelKind.ISING_METROPOLIS)
        if ising and self.q != 2:
            raise InputError(f"{self.kind.value} requires q=2, got q={self.q}")
        if self.q < 2:
            raise InputError(f"q must be at least 2, got {self.q}")
        if self.kind is ModelKind.COLORING_GLAUBER:
            if self.beta != 0:
                object.__setattr__(self, "beta", 0.0)
        elif not self.beta > 0:
            raise InputError(f"beta must be positive for {self.kind.value}, got {self.beta}")
        lams = (self.lam,) if isinstance(self.lam, (int, float)) else self.lam
        if any(not x > 0 for x in lams):
            raise InputError("every local field lambda_v must be positive")

    @property
    def is_ising(self) -> bool:
        return self.kind in (ModelKind.ISING_GLAUBER, ModelKind.ISING_METROPOLIS)

    def lambdas(self, n: int) -> np.ndarray:
        if isinstance(self.lam, (int, float)):
            return np.full(n, float(self.lam))
        if len(self.lam) != n:
            raise InputError(f"lambda has {len(self.lam)} entries but the graph has {n} sites")
        return np.asarray(self.lam, dtype=np.float64)

    def to_dict(self) -> dict:
        lam = self.lam if isinstance(self.lam, (int, float)) else list(self.lam)
        return {"kind": self.kind.value, "beta": self.beta, "lambda": lam, "q": self.q}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            kind = ModelKind(d["kind"])
        except (KeyError, ValueError):
            raise InputError(f"model 'kind' must be one of {[k.value for k in ModelKind]}") from None
        q = int(d.get("q", 2))
        beta = float(d.get("beta", 0.0 if kind is ModelKind.COLORING_GLAUBER else 1.0))
        return cls(kind=kind, beta=beta, lam=d.get("lambda", 1.0), q=q)


def load_model_spec(path: str | Path) -> ModelSpec:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"{path}: cannot read model file ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    try:
        return ModelSpec.from_dict(d)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Distributions


def check_distribution(p: np.ndarray, atol: float = PROB_ATOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > atol:
        raise InputError(f"not a probability distribution: {p}")
    return p


def round_to_bits(P: np.ndarray, bits: int) -> np.ndarray:
    """Round each row to multiples of ``2**-bits`` keeping rows summing to 1.

    The rounding residual is absorbed by the row's largest entry.
    """
    scale = float(1 << bits)
    R = np.round(P * scale) / scale
    total = R[:, 0].copy()
    for x in range(1, R.shape[1]):
        total += R[:, x]
    top = np.argmax(R, axis=1)
    rows = np.arange(R.shape[0])
    R[rows, top] += 1.0 - total
    return R


def tv_distance(a, b) -> float:
    """Total variation distance; histograms are normalized first."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InputError(f"support sizes differ: {a.size} vs {b.size}")
    sa, sb = a.sum(), b.sum()
    if sa <= 0 or sb <= 0:
        raise InputError("empty histogram")
    if abs(sa - 1.0) > PROB_ATOL:
        a = a / sa
    if abs(sb - 1.0) > PROB_ATOL:
        b = b / sb
    return 0.5 * float(np.abs(a - b).sum())


# ---------------------------------------------------------------------------
# Local rules


class LocalRule:
    """Maps (site, inclusive-neighborhood configuration) to a distribution."""

    q: int
    graph: Graph

    def evaluate_batch(self, sites: np.ndarray, tau: np.ndarray) -> np.ndarray:
        """Evaluate many rows at once.

        ``tau`` has shape ``(B, Δ+1)`` in slot layout; returns ``(B, q)``.
        """
        raise NotImplementedError

    def evaluate(self, v: int, tau: Sequence[int]) -> np.ndarray:
        """``tau`` lists spins in ``graph.inclusive_neighborhood(v)`` order."""
        width = self.graph.slots.shape[1]
        row = np.full((1, width), -1, dtype=np.int64)
        row[0, : len(tau)] = tau
        return self.evaluate_batch(np.array([v]), row)[0]

    def evaluate_config(self, v: int, sigma: Sequence[int]) -> np.ndarray:
        return self.evaluate(v, self.graph.local_tau(v, sigma))


class _PairwiseRule(LocalRule):
    """Shared machinery for models with weight ``beta ** (#agreeing edges)``."""

    depends_on_self = False

    def __init__(self, graph: Graph, q: int, beta: float, field: np.ndarray, precision_bits: int | None = None):
        self.graph = graph
        self.q = q
        self.beta = float(beta)
        self.field = np.ascontiguousarray(field, dtype=np.float64)
        self.precision_bits = precision_bits
        dmax = max(graph.max_degree, 0)
        self.powtab = np.array([self.beta**c for c in range(dmax + 1)], dtype=np.float64)

    def weights(self, sites: np.ndarray, tau: np.ndarray) -> np.ndarray:
        nb = tau[:, 1:]
        counts = np.stack([(nb == x).sum(axis=1) for x in range(self.q)], axis=1)
        return self.powtab[counts] * self.field[sites]

    def _finish(self, P: np.ndarray) -> np.ndarray:
        if self.precision_bits is not None:
            P = round_to_bits(P, self.precision_bits)
        return P


class GlauberRule(_PairwiseRule):
    """Heat-bath update: the exact conditional marginal given the neighbors."""

    def evaluate_batch(self, sites, tau):
        sites = np.asarray(sites, dtype=np.int64)
        tau = np.asarray(tau, dtype=np.int64)
        w = self.weights(sites, tau)
        total = w[:, 0].copy()
        for x in range(1, self.q):
            total += w[:, x]
        if np.any(total <= 0):
            bad = int(sites[np.argmax(total <= 0)])
            raise DegenerateDistributionError(f"no spin available at site {bad}: every color is blocked")
        return self._finish(w / total[:, None])


class MetropolisRule(_PairwiseRule):
    """Uniform proposal accepted with probability ``min(1, mu(x)/mu(own))``."""

    depends_on_self = True

    def evaluate_batch(self, sites, tau):
        sites = np.asarray(sites, dtype=np.int64)
        tau = np.asarray(tau, dtype=np.int64)
        w = self.weights(sites, tau)
        rows = np.arange(w.shape[0])
        own = tau[:, 0]
        w_own = w[rows, own]
        if np.any(w_own <= 0):
            raise DegenerateDistributionError("Metropolis ratio undefined: current spin has zero weight")
        P = np.minimum(1.0, w / w_own[:, None]) / self.q
        P[rows, own] = 0.0
        rest = P[:, 0].copy()
        for x in range(1, self.q):
            rest += P[:, x]
        P[rows, own] = 1.0 - rest
        return self._finish(P)


def _field_for(spec: ModelSpec, graph: Graph) -> np.ndarray:
    field = np.ones((graph.n, spec.q), dtype=np.float64)
    if spec.is_ising:
        field[:, 1] = spec.lambdas(graph.n)
    return field


def glauber_rule(spec: ModelSpec, graph: Graph, precision_bits: int | None = None) -> GlauberRule:
    if spec.kind is ModelKind.ISING_METROPOLIS:
        raise InputError("glauber_rule needs a Glauber model kind")
    return GlauberRule(graph, spec.q, spec.beta, _field_for(spec, graph), precision_bits)


def metropolis_rule(spec: ModelSpec, graph: Graph, precision_bits: int | None = None) -> MetropolisRule:
    if spec.kind is not ModelKind.ISING_METROPOLIS:
        raise InputError("metropolis_rule needs kind IsingMetropolis")
    return MetropolisRule(graph, spec.q, spec.beta, _field_for(spec, graph), precision_bits)


def build_rule(spec: ModelSpec, graph: Graph, precision_bits: int | None = None) -> LocalRule:
    if spec.kind is ModelKind.ISING_METROPOLIS:
        return metropolis_rule(spec, graph, precision_bits)
    return glauber_rule(spec, graph, precision_bits)


def coloring_well_defined(spec: ModelSpec, graph: Graph) -> bool:
    """Whether a coloring model sits in the ``q >= Δ+2`` regime."""
    return spec.kind is not ModelKind.COLORING_GLAUBER or spec.q >= graph.max_degree + 2


# ---------------------------------------------------------------------------
# Dobrushin influence


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    """Sparse ``n x n`` matrix; ``rho[u, v]`` is the influence of ``u`` on ``v``."""

    rho: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.rho.shape[0]

    def toarray(self) -> np.ndarray:
        return self.rho.toarray()

    def __getitem__(self, uv) -> float:
        return float(self.rho[uv])


def _local_table(rule: LocalRule, graph: Graph, v: int) -> np.ndarray:
    """All ``P_v^tau`` for ``tau`` over ``Q^{N_v^+}``, shape ``(q,)*(d+1) + (q,)``."""
    q = rule.q
    d = graph.degree(v)
    if q ** (d + 1) > INFLUENCE_BUDGET:
        raise CapacityError(
            f"site {v}: enumerating q^(deg+1) = {q}^{d + 1} neighborhood configurations exceeds "
            f"the budget 2^22; use the closed-form Ising path"
        )
    grid = np.indices((q,) * (d + 1)).reshape(d + 1, -1).T
    width = graph.slots.shape[1]
    tau = np.full((grid.shape[0], width), -1, dtype=np.int64)
    tau[:, : d + 1] = grid
    P = rule.evaluate_batch(np.full(grid.shape[0], v), tau)
    return P.reshape((q,) * (d + 1) + (q,))


def _slot_influence(table: np.ndarray, slot: int, q: int) -> float:
    A = np.moveaxis(table, slot, 0).reshape(q, -1, q)
    best = 0.0
    for a in range(q - 1):
        tv = 0.5 * np.abs(A[a + 1 :] - A[a]).sum(axis=-1)
        best = max(best, float(tv.max()))
    return best


def influence_entry(rule: LocalRule, graph: Graph, u: int, v: int, degree_cap: int = DEFAULT_DEGREE_CAP) -> float:
    """Worst-case TV shift of ``P_v`` when only ``u``'s spin changes (brute force)."""
    nbhd = graph.inclusive_neighborhood(v)
    if u not in nbhd:
        return 0.0
    if graph.degree(v) > degree_cap:
        raise CapacityError(f"site {v} has degree {graph.degree(v)} > cap {degree_cap}; use the closed-form path")
    return _slot_influence(_local_table(rule, graph, v), nbhd.index(u), rule.q)


def ising_glauber_influence(rule: GlauberRule, v: int) -> float:
    """Closed-form influence of any neighbor on ``v`` for Ising Glauber.

    With ``k`` neighbors at spin 1 the update probability of spin 1 is the
    logistic ``1 / (1 + beta**(d-2k) / lambda_v)``; flipping one neighbor moves
    ``k`` by one, so the influence is the largest consecutive difference.
    """
    d = rule.graph.degree(v)
    if d == 0:
        return 0.0
    lam = rule.field[v, 1]
    ks = np.arange(d + 1)
    f = 1.0 / (1.0 + np.power(rule.beta, (d - 2 * ks).astype(np.float64)) / lam)
    return float(np.abs(np.diff(f)).max())


def _pairwise_influences(rule: "_PairwiseRule", graph: Graph, v: int) -> tuple[float, float]:
    """``(rho(v, v), rho(u, v))`` for any neighbor ``u``, enumerating neighbor multisets.

    Pairwise weights see neighbor spins only through per-color counts, so
    sorted tuples of the other neighbors cover every configuration class.
    """
    q, d = rule.q, graph.degree(v)
    width = graph.slots.shape[1]
    classes = list(itertools.combinations_with_replacement(range(q), d - 1))
    others = np.array(classes, dtype=np.int64).reshape(len(classes), d - 1)
    if others.shape[0] * q * q > INFLUENCE_BUDGET:
        raise CapacityError(f"site {v}: {others.shape[0] * q * q} neighborhood classes exceed the budget 2^22")
    m = others.shape[0]
    own = np.repeat(np.arange(q), q)
    nb = np.tile(np.arange(q), q)
    tau = np.full((m, q * q, width), -1, dtype=np.int64)
    tau[:, :, 0] = own
    tau[:, :, 1:d] = others[:, None, :]
    tau[:, :, d] = nb
    P = rule.evaluate_batch(np.full(m * q * q, v), tau.reshape(-1, width)).reshape(m, q, q, q)
    # P[class, own spin, neighbor spin, :]
    nbr = self_ = 0.0
    for a in range(q - 1):
        nbr = max(nbr, float((0.5 * np.abs(P[:, :, a + 1 :] - P[:, :, a : a + 1]).sum(-1)).max()))
        self_ = max(self_, float((0.5 * np.abs(P[:, a + 1 :, :] - P[:, a : a + 1, :]).sum(-1)).max()))
    return self_, nbr


def _is_ising_glauber(rule: LocalRule) -> bool:
    return isinstance(rule, GlauberRule) and rule.q == 2 and rule.precision_bits is None and rule.beta > 0


def influence_matrix(
    rule: LocalRule, graph: Graph, degree_cap: int = DEFAULT_DEGREE_CAP, closed_form: bool = True
) -> InfluenceMatrix:
    """Full influence matrix.

    By default Ising Glauber uses the logistic closed form and other pairwise
    rules enumerate neighbor multisets; ``closed_form=False`` forces the
    plain enumeration of every neighborhood configuration.
    """
    rows, cols, vals = [], [], []
    fast = closed_form and _is_ising_glauber(rule)
    for v in range(graph.n):
        nbhd = graph.inclusive_neighborhood(v)
        if fast:
            r = ising_glauber_influence(rule, v)
            entries = [(u, r) for u in nbhd[1:]]
        else:
            if graph.degree(v) > degree_cap:
                raise CapacityError(
                    f"site {v} has degree {graph.degree(v)} > cap {degree_cap}; use the closed-form path"
                )
            if closed_form and isinstance(rule, _PairwiseRule) and len(nbhd) > 1:
                r_self, r = _pairwise_influences(rule, graph, v)
                entries = [(v, r_self)] + [(u, r) for u in nbhd[1:]]
            else:
                table = _local_table(rule, graph, v)
                entries = [(u, _slot_influence(table, s, rule.q)) for s, u in enumerate(nbhd)]
        for u, r in entries:
            if r != 0.0:
                rows.append(u)
                cols.append(v)
                vals.append(r)
    rho = sp.csr_matrix((vals, (rows, cols)), shape=(graph.n, graph.n), dtype=np.float64)
    return InfluenceMatrix(rho)


def operator_norm(rho: InfluenceMatrix | np.ndarray, p, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """l_p-induced operator norm for ``p`` in ``{1, 2, inf}``.

    ``p=1`` is the largest column sum, ``p=inf`` the largest row sum, and
    ``p=2`` the top singular value found by power iteration on ``rho^T rho``.
    """
    M = rho.rho if isinstance(rho, InfluenceMatrix) else sp.csr_matrix(np.asarray(rho, dtype=np.float64))
    M = abs(M)
    if p == 1:
        return float(M.sum(axis=0).max()) if M.shape[0] else 0.0
    if p in (np.inf, "inf", float("inf")):
        return float(M.sum(axis=1).max()) if M.shape[0] else 0.0
    if p != 2:
        raise InputError(f"unsupported norm p={p!r}; choose 1, 2 or inf")
    if M.nnz == 0:
        return 0.0
    x = np.full(M.shape[1], 1.0 / math.sqrt(M.shape[1]))
    MT = M.T.tocsr()
    lam = 0.0
    gap = math.inf
    for _ in range(max_iter):
        z = MT @ (M @ x)
        new = float(np.linalg.norm(z))
        if new == 0.0:
            return 0.0
        gap = abs(new - lam)
        x = z / new
        lam = new
        if gap <= tol * max(1.0, lam):
            return math.sqrt(lam)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps (last gap {gap:.3e})")


# ---------------------------------------------------------------------------
# Exact enumeration


def config_index(sigma: Sequence[int], q: int) -> int:
    """Lexicographic rank of a configuration (site 0 most significant)."""
    idx = 0
    for s in sigma:
        idx = idx * q + int(s)
    return idx


def config_indices(configs: np.ndarray, q: int) -> np.ndarray:
    configs = np.asarray(configs, dtype=np.int64)
    n = configs.shape[1]
    return configs @ (q ** np.arange(n - 1, -1, -1, dtype=np.int64))


def index_config(idx: int, n: int, q: int) -> tuple[int, ...]:
    out = []
    for _ in range(n):
        idx, r = divmod(idx, q)
        out.append(r)
    return tuple(reversed(out))


def exact_gibbs_distribution(spec: ModelSpec, graph: Graph) -> np.ndarray:
    """Normalized Gibbs probabilities of all ``q**n`` configurations.

    Entry ``i`` is the probability of ``index_config(i, n, q)``.  Improper
    colorings get probability zero when ``beta == 0``.
    """
    n, q = graph.n, spec.q
    if q**n > ENUMERATION_BUDGET:
        raise CapacityError(f"q^n = {q}^{n} configurations exceed the enumeration budget 2^24")
    codes = np.arange(q**n, dtype=np.int64)
    place = q ** np.arange(n - 1, -1, -1, dtype=np.int64)

    def digit(v):
        return (codes // place[v]) % q

    w = np.ones(codes.size, dtype=np.float64)
    for u, v in graph.edges:
        w *= np.where(digit(u) == digit(v), spec.beta, 1.0)
    if spec.is_ising:
        for v, lam in enumerate(spec.lambdas(n)):
            if lam != 1.0:
                w *= np.where(digit(v) == 1, lam, 1.0)
    z = w.sum()
    if z <= 0:
        raise DegenerateDistributionError("partition function is zero (no proper coloring)")
    return w / z
