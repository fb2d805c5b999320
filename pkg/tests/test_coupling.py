import itertools
import math

import numpy as np
import pytest
from scipy import stats

from bpsim.coupling import (
    ConsistSampler,
    SeedBank,
    SeedStream,
    UpdateId,
    adversarial_family,
    consist_draw,
    coupled_sample_pair,
    derive_pair,
    engine_width,
    jaccard_similarity,
    sample,
    sample_streams,
)
from bpsim.errors import BrokenStreamError, InputError
from bpsim.spin_model import tv_distance


def streams(n, seed=0):
    return np.arange(n), np.ones(n, dtype=np.int64)


def test_derive_pair_is_pure():
    a = derive_pair(5, (3, 2), 7, 5)
    assert a == derive_pair(5, (3, 2), 7, 5)
    assert 0 <= a.x < 5 and 0 <= a.y < 1
    assert a != derive_pair(5, (3, 2), 8, 5)
    with pytest.raises(InputError):
        derive_pair(5, (3, 2), 0, 5)


def test_pairs_uniform():
    # 10^6 pairs of one update through the vectorized bank (bit-identical to derive_pair)
    q = 6
    bank = SeedBank(17, [4], [1], q, 1_000_000)
    bank._materialize(np.array([0]), 0)
    x, y = bank.x[0].astype(np.int64), bank.y[0]
    for j in (1, 2, 999_999, 1_000_000):
        assert derive_pair(17, (4, 1), j, q) == (x[j - 1], y[j - 1])
    assert stats.chisquare(np.bincount(x, minlength=q)).pvalue > 1e-3
    assert stats.kstest(y, "uniform").pvalue > 1e-3


def test_point_mass():
    p = np.array([0, 0, 1.0, 0])
    for s in range(200):
        assert sample(p, SeedStream(s, UpdateId(0, 1), 4)) == 2


def test_acceptance_index_mean_q8():
    q = 8
    n = 100_000
    sites, idx = streams(n)
    P = np.broadcast_to(np.full(q, 1 / q), (n, q))
    _, istar = sample_streams(P, 3, sites, idx, return_index=True)
    assert abs(istar.mean() - q) <= 3 * math.sqrt(q * (q - 1) / n)


def test_marginal_law():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    n = 100_000
    out = sample_streams(np.broadcast_to(p, (n, 4)), 8, *streams(n))
    assert tv_distance(np.bincount(out, minlength=4), p) <= 0.01


def test_scalar_and_vector_samplers_agree(gen):
    for k in range(300):
        q = int(gen.integers(2, 9))
        p = gen.dirichlet(np.ones(q) * 0.5)
        if k % 5 == 0:
            p = np.zeros(q)
            p[gen.integers(q)] = 1.0
        seed, site, idx = int(gen.integers(2**63)), int(gen.integers(1000)), int(gen.integers(1, 50))
        stream = SeedStream(seed, UpdateId(site, idx), q)
        want = sample(p, stream, return_index=True)
        assert ConsistSampler(stream, width=int(gen.integers(1, 20))).draw(p) == want[0]
        got, istar = sample_streams(p[None, :], seed, [site], [idx], width=int(gen.integers(1, 20)), return_index=True)
        assert (int(got[0]), int(istar[0])) == want


def test_consist_sampler_memoizes():
    stream = SeedStream(1, UpdateId(2, 3), 3)
    s = ConsistSampler(stream, width=4)
    p = np.array([0.05, 0.05, 0.9])
    first = consist_draw(s, p)
    batches = s.batches
    assert consist_draw(s, p) == first and s.batches == batches
    assert consist_draw(s, p.copy()) == first
    assert len(s.pairs) == s.batches * s.width


def test_consist_sampler_batches_minimal():
    stream = SeedStream(9, UpdateId(0, 1), 4)
    p = np.array([0.25, 0.25, 0.25, 0.25])
    _, istar = sample(p, stream, return_index=True)
    for w in (1, 2, 3, 8):
        s = ConsistSampler(stream, width=w)
        s.draw(p)
        assert s.batches == math.ceil(istar / w)


def test_seed_bank_batches_minimal_and_append_only(gen):
    q, rows, w = 3, 500, 2
    bank = SeedBank(4, np.arange(rows), np.ones(rows), q, w)
    P = gen.dirichlet(np.ones(q), rows)
    out, istar = bank.draw(np.arange(rows), P, return_index=True)
    assert np.array_equal(bank.batches, np.ceil(istar / w).astype(int))
    x_before = bank.x[:, :2].copy()
    P2 = np.tile([0.01, 0.01, 0.98], (rows, 1))
    bank.draw(np.arange(rows), P2)
    assert np.array_equal(bank.x[:, :2], x_before)
    again = bank.draw(np.arange(rows), P)
    assert np.array_equal(again, out)


def test_consist_equals_sample_10k(gen):
    q = 5
    n = 10_000
    P = gen.dirichlet(np.ones(q), n)
    sites = gen.integers(0, 10**6, n)
    idx = gen.integers(1, 30, n)
    bank_out = SeedBank(123, sites, idx, q, engine_width(q, 1000)).draw(np.arange(n), P)
    for k in range(0, n, 50):
        assert bank_out[k] == sample(P[k], SeedStream(123, UpdateId(int(sites[k]), int(idx[k])), q))


def test_broken_stream_detected():
    with pytest.raises(BrokenStreamError):
        sample(np.zeros(2), SeedStream(0, UpdateId(0, 1), 2))
    with pytest.raises(BrokenStreamError):
        sample_streams(np.zeros((3, 2)), 0, [0, 1, 2], [1, 1, 1])


def test_coupled_pairs():
    n = 2000
    for s in range(n):
        st = SeedStream(s, UpdateId(0, 1), 2)
        a, b = coupled_sample_pair([0.3, 0.7], [0.3, 0.7], st)
        assert a == b
        a, b = coupled_sample_pair([1.0, 0.0], [0.0, 1.0], st)
        assert a != b


def test_coupled_agreement_two_thirds_pair():
    n = 100_000
    p, r = np.array([2 / 3, 1 / 3]), np.array([1 / 3, 2 / 3])
    a = sample_streams(np.broadcast_to(p, (n, 2)), 31, *streams(n))
    b = sample_streams(np.broadcast_to(r, (n, 2)), 31, *streams(n))
    agree = np.mean(a == b)
    assert agree >= 0.5 - 3 * math.sqrt(0.25 / n)


def test_jaccard():
    assert jaccard_similarity([0.5, 0.5], [0.5, 0.5]) == 1
    assert jaccard_similarity([1, 0], [0, 1]) == 0
    assert jaccard_similarity([2 / 3, 1 / 3], [1 / 3, 2 / 3]) == pytest.approx(0.5)
    with pytest.raises(InputError):
        jaccard_similarity([1.0], [0.5, 0.5])


def test_jaccard_identity(gen):
    for _ in range(100):
        p, r = gen.dirichlet(np.ones(5), 2)
        d = tv_distance(p, r)
        assert jaccard_similarity(p, r) == pytest.approx((1 - d) / (1 + d), abs=1e-12)


def test_adversarial_family():
    one = adversarial_family(1, 3)
    assert np.array_equal(one[0], [0, 1, 0]) and np.array_equal(one[1], [1, 0, 0])
    assert tv_distance(*one) == 1
    for k in (2, 3, 4):
        fam = adversarial_family(k, k + 2)
        assert len(fam) == k + 1
        for a, b in itertools.combinations(fam, 2):
            assert tv_distance(a, b) == pytest.approx(1 / k)
    with pytest.raises(InputError):
        adversarial_family(3, 3)


def test_claim_disagreements_at_least_k():
    n = 10_000
    for k in (1, 2, 3):
        fam = adversarial_family(k, k + 1)
        outs = np.array([sample_streams(np.broadcast_to(p, (n, k + 1)), 77, *streams(n)) for p in fam])
        diffs = sum((outs[i] != outs[j]).astype(int) for i, j in itertools.combinations(range(k + 1), 2))
        assert diffs.min() >= k


def test_k2_minimum_agreement_one_third():
    n = 100_000
    fam = adversarial_family(2, 3)
    outs = [sample_streams(np.broadcast_to(p, (n, 3)), 5, *streams(n)) for p in fam]
    agree = [np.mean(outs[i] == outs[j]) for i, j in itertools.combinations(range(3), 2)]
    assert abs(min(agree) - 1 / 3) <= 0.02


def test_engine_width():
    assert engine_width(2, 1) == 1
    assert engine_width(3, 100) == math.ceil(3 * math.log(100))
