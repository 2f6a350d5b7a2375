import math

import numpy as np
import pytest

from ssip.field import FieldModulus
from ssip.filters import (
    BloomFilter,
    FilterParams,
    GarbledBloomFilter,
    InsertionFailure,
    bf_build,
    bf_contains,
    bf_index_sum,
    derive_indices,
    gbf_build,
    gbf_sum,
    index_matrix,
    params_for,
)

F = FieldModulus()


def keys(n, tag=b"k"):
    return [tag + b"%d" % i for i in range(n)]


def test_derive_indices_distinct_in_range():
    params = FilterParams(8, 3)
    for key in keys(200):
        idx = derive_indices(key, params)
        assert len(idx) == 3 == len(set(idx))
        assert all(0 <= i < 8 for i in idx)
        assert idx == derive_indices(key, params)


def test_derive_indices_fills_tight_filter():
    assert sorted(derive_indices(b"a", FilterParams(5, 5))) == [0, 1, 2, 3, 4]


def test_seed_changes_indices():
    a = FilterParams(1000, 5, bytes(16))
    b = FilterParams(1000, 5, b"\x01" * 16)
    assert sum(derive_indices(x, a) != derive_indices(x, b) for x in keys(100)) >= 1


def test_index_matrix_matches_per_key():
    params = params_for(50, 2**-10)
    ks = keys(30)
    mat = index_matrix(ks, params)
    assert mat.shape == (30, params.k)
    assert [list(r) for r in mat] == [derive_indices(k, params) for k in ks]
    assert index_matrix([], params).shape == (0, params.k)


@pytest.mark.parametrize(
    "n, fpr, m, k",
    [(1000, 2**-20, 28854, 20), (1, 0.5, 2, 1)],
)
def test_params_for_values(n, fpr, m, k):
    params = params_for(n, fpr)
    assert (params.m, params.k) == (m, k)


def test_params_for_large_n():
    assert params_for(2**16, 2**-30).k == 30


def test_params_for_rejects_bad_inputs():
    with pytest.raises(ValueError):
        params_for(10, 1.0)
    with pytest.raises(ValueError):
        params_for(0, 0.1)
    with pytest.raises(ValueError):
        FilterParams(2, 3)


def test_params_header_round_trip():
    params = FilterParams(1234, 7, bytes(range(16)))
    assert FilterParams.from_bytes(params.to_bytes()) == params


def test_empty_bloom_filter():
    params = FilterParams(64, 4)
    bf = bf_build([], params)
    assert not bf.bits.any()
    assert not bf_contains(bf, b"x") and bf_index_sum(bf, b"x") == 0


def test_single_key_sets_k_bits():
    params = FilterParams(64, 4)
    bf = bf_build([b"a"], params)
    assert int(bf.bits.sum()) == 4
    assert bf_contains(bf, b"a") and bf_index_sum(bf, b"a") == 4


def test_no_false_negatives(rng):
    params = params_for(100, 2**-20)
    ks = [rng.bytes(12) for _ in range(100)]
    bf = bf_build(ks, params)
    assert all(bf_contains(bf, k) for k in ks)


def test_index_sum_matches_naive_loop(rng):
    params = params_for(50, 2**-4)
    bf = bf_build(keys(50), params)
    for key in keys(200, b"q"):
        naive = 0
        for i in derive_indices(key, params):
            naive += int(bf.bits[i])
        assert bf_index_sum(bf, key) == naive
        assert bf_contains(bf, key) == (naive == params.k)


@pytest.mark.parametrize("n", [100, 1000, 10_000])
def test_measured_fpr_within_twice_analytic(n):
    params = params_for(n, 2**-10)
    bf = bf_build(keys(n), params)
    probes = keys(100_000, b"absent-")
    hits = (bf.bits[index_matrix(probes, params)].sum(axis=1) == params.k).sum()
    assert hits / len(probes) <= 2 * params.false_positive_rate(n)


def test_bloom_serialization_round_trip():
    bf = bf_build(keys(20), params_for(20, 2**-8))
    back = BloomFilter.from_bytes(bf.to_bytes())
    assert back.params == bf.params and np.array_equal(back.bits, bf.bits)


def test_gbf_single_pair(rng):
    params = FilterParams(32, 3)
    gbf = gbf_build([(b"x", 42)], params, rng, F)
    assert sum(int(gbf.slots[i]) for i in derive_indices(b"x", params)) % F.p == 42
    assert gbf_sum(gbf, b"x") == 42


def test_gbf_zero_payload(rng):
    gbf = gbf_build([(b"x", 0)], FilterParams(32, 3), rng, F)
    assert gbf_sum(gbf, b"x") == 0


def test_empty_gbf_is_random():
    params = FilterParams(16, 2)
    a = gbf_build([], params, np.random.default_rng(1), F)
    b = gbf_build([], params, np.random.default_rng(2), F)
    assert len(a.slots) == 16 and not np.array_equal(a.slots, b.slots)


def test_gbf_stores_500_pairs(rng):
    params = params_for(1000, 2**-20)
    pairs = [(k, int(v)) for k, v in zip(keys(500), rng.integers(0, F.p, size=500, dtype=np.uint64))]
    gbf = gbf_build(pairs, params, rng, F)
    assert all(gbf_sum(gbf, k) == v for k, v in pairs)


def test_gbf_non_member_rarely_hits_payload(rng):
    params = FilterParams(16, 3)
    hits = sum(gbf_sum(gbf_build([(b"x", 42)], params, rng, F), b"y") == 42 for _ in range(1000))
    assert hits <= 5


def test_gbf_insertion_failure(rng):
    params = FilterParams(3, 3)
    with pytest.raises(InsertionFailure):
        gbf_build([(b"a", 1), (b"b", 2)], params, rng, F)


def test_gbf_rejects_duplicate_keys(rng):
    with pytest.raises(ValueError):
        gbf_build([(b"a", 1), (b"a", 2)], FilterParams(32, 3), rng, F)


def test_gbf_serialization_round_trip(rng):
    gbf = gbf_build([(b"a", 5)], FilterParams(40, 4), rng, F)
    back = GarbledBloomFilter.from_bytes(gbf.to_bytes(), F)
    assert back.params == gbf.params and np.array_equal(back.slots, gbf.slots)
    assert gbf_sum(back, b"a") == 5


def test_randomized_rounds_have_no_false_negatives(rng):
    for _ in range(200):
        n = int(rng.integers(1, 40))
        params = params_for(n, 2**-12, rng.bytes(16))
        pairs = [(rng.bytes(8), int(rng.integers(F.p))) for _ in range(n)]
        bf = bf_build([k for k, _ in pairs], params)
        gbf = gbf_build(pairs, params, rng, F)
        assert all(bf_contains(bf, k) and gbf_sum(gbf, k) == v for k, v in pairs)


def test_analytic_rate_formula():
    params = FilterParams(1000, 5)
    assert params.false_positive_rate(100) == pytest.approx((1 - math.exp(-0.5)) ** 5)
