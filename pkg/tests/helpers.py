"""Graph and model builders shared by the test modules."""

import networkx as nx
import numpy as np

from bpsim.spin_model import ModelSpec, build_graph, build_rule


def cycle(n):
    return build_graph(n, [(i, (i + 1) % n) for i in range(n)])


def random_graph(n, max_degree, seed):
    """Erdos-Renyi graph thinned so that no degree exceeds ``max_degree``."""
    g = nx.gnp_random_graph(n, min(1.0, 3.0 / max(n, 1)), seed=seed)
    deg = dict.fromkeys(range(n), 0)
    edges = []
    for u, v in g.edges():
        if deg[u] < max_degree and deg[v] < max_degree:
            edges.append((u, v))
            deg[u] += 1
            deg[v] += 1
    return build_graph(n, edges)


MODELS = {
    "IsingGlauber": lambda: ModelSpec("IsingGlauber", beta=1.4, lam=1.3),
    "IsingMetropolis": lambda: ModelSpec("IsingMetropolis", beta=0.7, lam=0.8),
    "PottsGlauber": lambda: ModelSpec("PottsGlauber", beta=1.6, q=3),
    "ColoringGlauber": lambda: ModelSpec("ColoringGlauber", q=8),
}


def random_case(gen, max_n=50, max_degree=6, max_T=10.0):
    """One random (graph, spec, rule, x0, T) instance across the four rules."""
    kind = list(MODELS)[int(gen.integers(4))]
    n = int(gen.integers(1, max_n + 1))
    graph = random_graph(n, max_degree, int(gen.integers(2**31)))
    spec = MODELS[kind]()
    rule = build_rule(spec, graph)
    x0 = gen.integers(0, spec.q, n)
    T = float(gen.uniform(0, max_T))
    return graph, spec, rule, x0, T
