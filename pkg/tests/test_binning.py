from collections import Counter

import numpy as np
import pytest

from ssip.binning import (
    BinningParams,
    BinOverflow,
    StashOverflow,
    choose_beta,
    cuckoo_build,
    dummy_key,
    is_dummy,
    pad_client_bins,
    replicated_loads,
    server_bin,
    two_choice_build,
)
from ssip.field import FieldModulus


def items(n, tag=b"i"):
    return [(tag + b"%d" % i, i) for i in range(n)]


def test_params_validation():
    with pytest.raises(ValueError):
        BinningParams(m_bins=2, k=3)
    with pytest.raises(ValueError):
        BinningParams(m_bins=8, eta=0)
    with pytest.raises(ValueError):
        BinningParams(m_bins=8, beta=0)


def test_cuckoo_empty(rng):
    a = cuckoo_build([], BinningParams(m_bins=10), rng)
    assert all(not b for b in a.bins) and a.stash == []


def test_cuckoo_single_item_lands_in_a_candidate(rng):
    params = BinningParams(m_bins=10)
    a = cuckoo_build([(b"x", 1)], params, rng)
    (where,) = [b for b, content in enumerate(a.bins) if content]
    assert where in params.candidates(b"x")


def test_cuckoo_conservation_and_placement(rng):
    params = BinningParams(m_bins=1300, hash_seed=rng.bytes(16), stash_bound=None)
    data = items(1000)
    a = cuckoo_build(data, params, rng)
    placed = [x for content in a.bins for x in content] + a.stash
    assert sorted(placed) == sorted(data)
    assert a.max_load <= 1
    for b, content in enumerate(a.bins):
        for key, _ in content:
            assert b in params.candidates(key)


def test_cuckoo_stash_small_over_seeds():
    small = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        params = BinningParams(m_bins=1300, hash_seed=rng.bytes(16), stash_bound=None)
        small += len(cuckoo_build(items(1000), params, rng).stash) <= 4
    assert small >= 99


def test_cuckoo_expansion_precondition(rng):
    with pytest.raises(ValueError):
        cuckoo_build(items(100), BinningParams(m_bins=120), rng)


def test_stash_overflow(rng):
    raised = 0
    for seed in range(20):
        params = BinningParams(13, 3, hash_seed=bytes([seed]) * 16, max_relocations=0, stash_bound=0)
        try:
            cuckoo_build(items(10), params, rng)
        except StashOverflow:
            raised += 1
    assert raised > 0


def test_two_choice_single_item_goes_to_first_candidate():
    params = BinningParams(m_bins=50)
    a = two_choice_build([(b"x", 1)], params)
    assert a.bins[params.candidates(b"x")[0]] == [(b"x", 1)]


def test_two_choice_identical_candidates_split():
    params = BinningParams(m_bins=2, k=2)
    by_cands = {}
    for key, v in items(20):
        by_cands.setdefault(tuple(params.candidates(key)), []).append((key, v))
    pair = next(group[:2] for group in by_cands.values() if len(group) >= 2)
    a = two_choice_build(pair, params)
    assert a.loads == [1, 1] and a.stash == []


def _greedy_oracle_max_load(keys, params):
    loads = [0] * params.m_bins
    for key in keys:
        h1, h2 = params.candidates(key)[:2]
        loads[h1 if loads[h1] <= loads[h2] else h2] += 1
    return max(loads)


def test_two_choice_max_load_vs_greedy_oracle():
    params = BinningParams(m_bins=250, hash_seed=b"\x07" * 16)
    data = items(1000)
    a = two_choice_build(data, params)
    assert sum(a.loads) == 1000
    assert a.max_load <= 2 * _greedy_oracle_max_load([k for k, _ in data], params)


def test_server_bin_single_item(rng):
    params = BinningParams(m_bins=10, k=3, beta=4)
    a = server_bin([(b"y", 9)], params, rng)
    holders = [b for b, content in enumerate(a.bins) if (b"y", 9) in content]
    assert sorted(holders) == sorted(params.candidates(b"y"))
    assert all(len(content) == 4 for content in a.bins)


def test_server_padding_is_dummy_and_in_field(rng):
    F = FieldModulus()
    a = server_bin([(b"y", 9)], BinningParams(m_bins=10, beta=4), rng, F)
    pads = [(k, v) for content in a.bins for k, v in content if k != b"y"]
    assert pads and all(is_dummy(k) and 0 <= v < F.p for k, v in pads)
    assert len({k for k, _ in pads}) == len(pads)


def test_server_bin_overflow(rng):
    with pytest.raises(BinOverflow):
        server_bin(items(30), BinningParams(m_bins=10, beta=2), rng)


def test_choose_beta_is_power_of_two():
    params = BinningParams(m_bins=64, hash_seed=b"\x03" * 16)
    keys = [k for k, _ in items(200)]
    beta = choose_beta(keys, params)
    top = max(replicated_loads(keys, params))
    assert beta & (beta - 1) == 0 and top <= beta < 2 * top
    assert choose_beta([], params) == 1


def test_server_items_replicated_k_times(rng):
    params = BinningParams(m_bins=100, hash_seed=b"\x09" * 16)
    data = items(300)
    a = server_bin(data, params, rng)
    count = Counter(x for content in a.bins for x in content if not is_dummy(x[0]))
    assert all(count[x] == 3 for x in data)


def test_completeness_cuckoo_meets_server(rng):
    params = BinningParams(m_bins=1300, hash_seed=rng.bytes(16), stash_bound=None)
    server = items(1000, b"y")
    client = server[::3] + items(200, b"absent")
    c = cuckoo_build(client, params, rng)
    s = server_bin(server, params, rng)
    server_keys = [{k for k, _ in content} for content in s.bins]
    members = {k for k, _ in server}
    for b, content in enumerate(c.bins):
        for key, _ in content:
            if key in members:
                assert key in server_keys[b]


def test_pad_client_bins(rng):
    params = BinningParams(m_bins=20)
    a = two_choice_build(items(10), params)
    eta = a.max_load
    rows = pad_client_bins(a, eta)
    assert all(len(r) == eta for r in rows)
    real = [item for r in rows for item, dummy in r if not dummy]
    assert sorted(real) == sorted(items(10))
    assert all(v == 0 and is_dummy(k) for r in rows for (k, v), d in r if d)
    crowded = two_choice_build(items(30), params)
    with pytest.raises(BinOverflow):
        pad_client_bins(crowded, crowded.max_load - 1)


def test_dummy_keys_disjoint_by_side():
    assert dummy_key("c", 1, 0) != dummy_key("s", 1, 0)
    assert not is_dummy(b"real-key")
