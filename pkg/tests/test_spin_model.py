import itertools
import json
import math

import numpy as np
import pytest

from bpsim.errors import CapacityError, DegenerateDistributionError, InputError
from bpsim.spin_model import (
    ModelSpec,
    build_graph,
    build_rule,
    config_index,
    exact_gibbs_distribution,
    glauber_rule,
    index_config,
    influence_entry,
    influence_matrix,
    load_model_spec,
    metropolis_rule,
    operator_norm,
    read_edge_list,
    replicate_graph,
    round_to_bits,
    tv_distance,
    write_edge_list,
)

from helpers import cycle, random_graph


def gibbs_weight(spec, graph, sigma):
    """Unnormalized Gibbs weight written directly from the model definition."""
    w = 1.0
    for u, v in graph.edges:
        if sigma[u] == sigma[v]:
            w *= spec.beta
    if spec.is_ising:
        for v, lam in enumerate(spec.lambdas(graph.n)):
            w *= lam ** sigma[v]
    return w


def conditional_oracle(spec, graph, v, sigma):
    """Marginal of site v given every other spin, by enumerating v's value."""
    w = []
    for x in range(spec.q):
        s = list(sigma)
        s[v] = x
        w.append(gibbs_weight(spec, graph, s))
    w = np.array(w)
    return w / w.sum()


# Graphs


def test_path_and_cycle():
    g = build_graph(2, [(0, 1)])
    assert list(g.degrees) == [1, 1]
    c = build_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    assert list(c.degrees) == [2, 2, 2, 2]
    assert c.inclusive_neighborhood(0) == (0, 1, 3)


def test_self_loop_rejected():
    with pytest.raises(InputError, match="self-loop"):
        build_graph(3, [(0, 0)])


def test_out_of_range_names_pair():
    with pytest.raises(InputError, match=r"\(1, 5\)"):
        build_graph(3, [(1, 5)])


def test_duplicates_merged_and_sorted():
    g = build_graph(4, [(3, 0), (0, 3), (0, 2), (1, 0)])
    assert list(g.neighbors(0)) == [1, 2, 3]
    assert len(g.edges) == 3
    for v in range(4):
        nb = g.inclusive_neighborhood(v)
        assert nb[0] == v and len(nb) == g.degree(v) + 1


def test_edge_list_roundtrip(tmp_path):
    g = random_graph(30, 4, 3)
    p = tmp_path / "g.txt"
    write_edge_list(g, p)
    h = read_edge_list(p)
    assert h.n == g.n and h.edges == g.edges


def test_edge_list_error_has_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("3 2\n0 1\n1 x\n")
    with pytest.raises(InputError, match="bad.txt:3"):
        read_edge_list(p)


def test_replicate_graph_is_disjoint_union():
    g = cycle(3)
    r = replicate_graph(g, 3)
    assert r.n == 9 and len(r.edges) == 9
    assert r.inclusive_neighborhood(4) == (4, 3, 5)


# Models


def test_model_json_and_lambda_length(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"kind": "IsingGlauber", "beta": 2, "lambda": [1, 2, 3]}))
    spec = load_model_spec(p)
    assert spec.lambdas(3).tolist() == [1, 2, 3]
    with pytest.raises(InputError, match="3 entries"):
        spec.lambdas(4)
    p.write_text("{bad")
    with pytest.raises(InputError, match="m.json:1"):
        load_model_spec(p)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="IsingGlauber", beta=0.0),
        dict(kind="IsingGlauber", lam=-1.0),
        dict(kind="IsingGlauber", q=3),
        dict(kind="PottsGlauber", q=1),
        dict(kind="Nope"),
    ],
)
def test_model_validation(kwargs):
    with pytest.raises((InputError, ValueError)):
        ModelSpec(**kwargs)


# Rules


def test_ising_beta_one_is_uniform():
    g = cycle(5)
    rule = glauber_rule(ModelSpec("IsingGlauber", 1.0, 1.0), g)
    for tau in itertools.product(range(2), repeat=3):
        assert np.allclose(rule.evaluate(0, tau), [0.5, 0.5])


def test_ising_single_edge_two_thirds():
    g = build_graph(2, [(0, 1)])
    rule = glauber_rule(ModelSpec("IsingGlauber", 2.0, 1.0), g)
    assert rule.evaluate(0, (0, 1))[1] == pytest.approx(2 / 3, abs=1e-15)


def test_ising_closed_form():
    g = cycle(6)
    spec = ModelSpec("IsingGlauber", 1.7, 0.6)
    rule = glauber_rule(spec, g)
    for tau in itertools.product(range(2), repeat=3):
        k, d = sum(tau[1:]), 2
        t = 0.6 * 1.7 ** (2 * k - d)
        assert rule.evaluate(0, tau)[1] == pytest.approx(t / (1 + t), abs=1e-14)


def test_coloring_excludes_neighbor_color():
    g = build_graph(2, [(0, 1)])
    rule = glauber_rule(ModelSpec("ColoringGlauber", q=3), g)
    assert np.allclose(rule.evaluate(0, (2, 0)), [0, 0.5, 0.5])


def test_coloring_without_available_color_raises():
    g = build_graph(3, [(0, 1), (0, 2)])
    rule = glauber_rule(ModelSpec("ColoringGlauber", q=2), g)
    with pytest.raises(DegenerateDistributionError):
        rule.evaluate(0, (0, 0, 1))


def test_metropolis_examples():
    g = build_graph(2, [(0, 1)])
    flat = metropolis_rule(ModelSpec("IsingMetropolis", 1.0, 1.0), g)
    assert np.allclose(flat.evaluate(0, (0, 1)), [0.5, 0.5])
    rule = metropolis_rule(ModelSpec("IsingMetropolis", 2.0, 1.0), g)
    assert np.allclose(rule.evaluate(0, (0, 1)), [0.5, 0.5], atol=1e-15)
    assert np.allclose(rule.evaluate(0, (1, 1)), [0.25, 0.75], atol=1e-15)


def test_every_rule_returns_distributions(gen):
    specs = [
        ModelSpec("IsingGlauber", 1.3, 0.7),
        ModelSpec("IsingMetropolis", 0.4, 2.0),
        ModelSpec("PottsGlauber", 2.5, q=4),
        ModelSpec("ColoringGlauber", q=9),
    ]
    g = random_graph(40, 6, 1)
    width = g.slots.shape[1]
    for spec in specs:
        rule = build_rule(spec, g)
        sites = gen.integers(0, g.n, 500)
        tau = gen.integers(0, spec.q, (500, width))
        tau[:, 0] = gen.integers(0, spec.q, 500)
        tau = np.where(g.slots[sites] >= 0, tau, -1)
        P = rule.evaluate_batch(sites, tau)
        assert np.all(P >= 0) and np.all(P <= 1)
        assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12
        # batch and single-row evaluation agree bit for bit
        for k in range(20):
            d = g.degree(int(sites[k]))
            assert np.array_equal(rule.evaluate(int(sites[k]), tau[k, : d + 1]), P[k])


@pytest.mark.parametrize(
    "spec, graph",
    [
        (ModelSpec("IsingGlauber", 1.8, (0.5, 1.0, 2.0, 1.5)), cycle(4)),
        (ModelSpec("PottsGlauber", 0.6, q=3), build_graph(5, [(0, 1), (1, 2), (2, 3), (1, 3), (3, 4)])),
        (ModelSpec("ColoringGlauber", q=4), build_graph(4, [(0, 1), (1, 2), (0, 2), (2, 3)])),
    ],
)
def test_glauber_matches_gibbs_conditionals(spec, graph):
    rule = glauber_rule(spec, graph)
    for sigma in itertools.product(range(spec.q), repeat=graph.n):
        for v in range(graph.n):
            tau = [sigma[u] for u in graph.inclusive_neighborhood(v)]
            if spec.beta == 0 and not any(gibbs_weight(spec, graph, sigma[:v] + (x,) + sigma[v + 1 :]) for x in range(spec.q)):
                continue  # improper elsewhere: no conditional to compare against
            assert np.allclose(rule.evaluate(v, tau), conditional_oracle(spec, graph, v, sigma), atol=1e-10)


@pytest.mark.parametrize("beta, lam", [(2.0, 1.0), (0.5, 3.0), (1.3, 0.7)])
def test_metropolis_stationary_is_conditional(beta, lam):
    spec = ModelSpec("IsingMetropolis", beta, lam)
    g = build_graph(2, [(0, 1)])
    rule = metropolis_rule(spec, g)
    for nb in (0, 1):
        # two-state chain of site 0 with the neighbor frozen at nb
        a = rule.evaluate(0, (0, nb))[1]
        b = rule.evaluate(0, (1, nb))[0]
        pi1 = a / (a + b)
        target = conditional_oracle(spec, g, 0, (0, nb))[1]
        assert pi1 == pytest.approx(target, abs=1e-10)


def test_round_to_bits():
    P = np.array([[0.1, 0.2, 0.7], [1 / 3, 1 / 3, 1 / 3]])
    R = round_to_bits(P, 8)
    assert np.all(R.sum(axis=1) == 1.0)
    assert np.all(R * 256 == np.round(R * 256))
    rule = glauber_rule(ModelSpec("PottsGlauber", 1.5, q=3), cycle(3), precision_bits=10)
    p = rule.evaluate(0, (0, 1, 1))
    assert p.sum() == 1.0 and np.all(p * 1024 == np.round(p * 1024))


# Influence


def brute_influence(rule, graph, u, v):
    nbhd = graph.inclusive_neighborhood(v)
    if u not in nbhd:
        return 0.0
    s = nbhd.index(u)
    best = 0.0
    for tau in itertools.product(range(rule.q), repeat=len(nbhd)):
        for x in range(rule.q):
            t2 = list(tau)
            t2[s] = x
            try:
                d = tv_distance(rule.evaluate(v, tau), rule.evaluate(v, t2))
            except DegenerateDistributionError:
                continue
            best = max(best, d)
    return best


def test_influence_single_edge_is_one_third():
    g = build_graph(2, [(0, 1)])
    rule = glauber_rule(ModelSpec("IsingGlauber", 2.0, 1.0), g)
    assert influence_entry(rule, g, 0, 1) == pytest.approx(1 / 3, abs=1e-15)
    assert influence_entry(rule, g, 1, 1) == 0.0


def test_influence_outside_neighborhood_is_zero():
    g = build_graph(4, [(0, 1), (1, 2), (2, 3)])
    rule = glauber_rule(ModelSpec("IsingGlauber", 2.0, 1.0), g)
    assert influence_entry(rule, g, 0, 3) == 0.0
    assert influence_matrix(rule, g).toarray()[0, 2] == 0.0


def test_four_cycle_influence_matches_enumeration():
    # On a degree-2 site the exact worst case is 1/2 - 1/5 = 0.3, not the single-edge 1/3.
    g = cycle(4)
    rule = glauber_rule(ModelSpec("IsingGlauber", 2.0, 1.0), g)
    rho = influence_matrix(rule, g).toarray()
    for u in range(4):
        for v in range(4):
            assert rho[u, v] == pytest.approx(brute_influence(rule, g, u, v), abs=1e-12)
    adj = np.array([[1 if g.has_edge(u, v) else 0 for v in range(4)] for u in range(4)])
    assert np.allclose(rho, 0.3 * adj)
    assert operator_norm(rho, np.inf) == pytest.approx(0.6)


def test_metropolis_self_influence_nonzero():
    g = build_graph(2, [(0, 1)])
    rule = metropolis_rule(ModelSpec("IsingMetropolis", 2.0, 1.0), g)
    rho = influence_matrix(rule, g)
    assert rho[0, 0] > 0
    assert rho[0, 0] == pytest.approx(brute_influence(rule, g, 0, 0))


def test_coloring_triangle_symmetric():
    g = cycle(3)
    rule = glauber_rule(ModelSpec("ColoringGlauber", q=5), g)
    rho = influence_matrix(rule, g).toarray()
    off = rho[~np.eye(3, dtype=bool)]
    assert np.allclose(off, off[0]) and off[0] > 0
    assert rho[0, 1] == pytest.approx(brute_influence(rule, g, 0, 1))


@pytest.mark.parametrize("beta", [0.5, 0.9, 1.0, 1.1, 2.0])
@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_ising_closed_form_influence_matches_brute_force(beta, lam):
    edges = [(0, k) for k in range(1, 7)] + [(1, 2), (3, 4)]
    g = build_graph(7, edges)
    rule = glauber_rule(ModelSpec("IsingGlauber", beta, lam), g)
    fast = influence_matrix(rule, g).toarray()
    slow = influence_matrix(rule, g, closed_form=False).toarray()
    assert np.allclose(fast, slow, atol=1e-10)


@pytest.mark.parametrize(
    "spec",
    [
        ModelSpec("PottsGlauber", 1.7, q=3),
        ModelSpec("PottsGlauber", 0.4, q=4),
        ModelSpec("ColoringGlauber", q=6),
        ModelSpec("IsingMetropolis", 2.5, 0.8),
        ModelSpec("IsingMetropolis", 0.6, 1.5),
    ],
)
def test_multiset_influence_matches_full_enumeration(spec):
    g = build_graph(7, [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (3, 5), (5, 6), (4, 6)])
    rule = build_rule(spec, g)
    fast = influence_matrix(rule, g).toarray()
    slow = influence_matrix(rule, g, closed_form=False).toarray()
    assert np.allclose(fast, slow, atol=1e-14)


def test_influence_capacity_error():
    g = build_graph(12, [(0, k) for k in range(1, 12)])
    rule = glauber_rule(ModelSpec("PottsGlauber", 1.5, q=5), g)
    with pytest.raises(CapacityError):
        influence_matrix(rule, g, closed_form=False)
    with pytest.raises(CapacityError):
        influence_entry(rule, g, 1, 0)


def test_operator_norms():
    assert operator_norm(np.zeros((3, 3)), 2) == 0.0
    one = np.zeros((2, 2))
    one[0, 1] = 0.5
    assert operator_norm(one, 2) == pytest.approx(0.5, abs=1e-10)
    rho = np.array([[0, 0.2, 0.1], [0.3, 0, 0], [0, 0.4, 0.25]])
    assert operator_norm(rho, 1) == pytest.approx(0.6)
    assert operator_norm(rho, np.inf) == pytest.approx(0.65)
    assert operator_norm(rho, 2) == pytest.approx(np.linalg.norm(rho, 2), abs=1e-8)
    with pytest.raises(InputError):
        operator_norm(rho, 3)


def test_riesz_thorin_on_random_models(gen):
    for seed in range(5):
        g = random_graph(30, 5, seed)
        for spec in (ModelSpec("IsingGlauber", 1.5, 1.2), ModelSpec("PottsGlauber", 0.7, q=3)):
            rho = influence_matrix(build_rule(spec, g), g)
            n1, n2, ninf = (operator_norm(rho, p) for p in (1, 2, np.inf))
            assert n2 <= math.sqrt(n1 * ninf) + 1e-9
            assert rho.toarray().min() >= 0 and rho.toarray().max() <= 1


def test_edgeless_zero_matrix():
    g = build_graph(5, [])
    rho = influence_matrix(glauber_rule(ModelSpec("IsingGlauber", 2.0), g), g)
    assert rho.rho.nnz == 0
    assert all(operator_norm(rho, p) == 0 for p in (1, 2, np.inf))


# Enumeration


def test_exact_gibbs_examples():
    one = build_graph(1, [])
    assert exact_gibbs_distribution(ModelSpec("IsingGlauber", 1.0, 3.0), one) == pytest.approx([0.25, 0.75])
    edge = build_graph(2, [(0, 1)])
    assert exact_gibbs_distribution(ModelSpec("IsingGlauber", 2.0, 1.0), edge) == pytest.approx(
        [1 / 3, 1 / 6, 1 / 6, 1 / 3]
    )
    tri = exact_gibbs_distribution(ModelSpec("ColoringGlauber", q=3), cycle(3))
    assert np.count_nonzero(tri) == 6 and np.allclose(tri[tri > 0], 1 / 6)


def test_exact_gibbs_matches_weights():
    spec = ModelSpec("IsingGlauber", 1.7, (0.5, 2.0, 1.0, 3.0, 1.2))
    g = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 1)])
    mu = exact_gibbs_distribution(spec, g)
    w = np.array([gibbs_weight(spec, g, index_config(i, 5, 2)) for i in range(32)])
    assert np.allclose(mu, w / w.sum(), atol=1e-15)
    assert config_index(index_config(19, 5, 2), 2) == 19


def test_enumeration_budget():
    with pytest.raises(CapacityError):
        exact_gibbs_distribution(ModelSpec("PottsGlauber", 1.0, q=5), build_graph(11, []))


def test_tv_distance():
    assert tv_distance([0.2, 0.8], [0.2, 0.8]) == 0
    assert tv_distance([1, 0], [0, 1]) == 1
    assert tv_distance([2 / 3, 1 / 3], [1 / 3, 2 / 3]) == pytest.approx(1 / 3)
    assert tv_distance([30, 10], [0.75, 0.25]) == 0
    with pytest.raises(InputError):
        tv_distance([1, 0], [1, 0, 0])
