import numpy as np
import pytest

from ssip.field import FieldModulus
from ssip.he import make_backend
from ssip.pir import (
    PirDatabase,
    PirError,
    PirQuery,
    answer_from_bytes,
    answer_to_bytes,
    default_shape,
    pir_answer,
    pir_extract,
    pir_query,
    sum_pir,
    sum_pir_answer,
)


def keyed(name="transparent", p=None, seed=0):
    F = FieldModulus(p) if p else FieldModulus()
    b = make_backend(name, F)
    rng = np.random.default_rng(seed)
    return b, b.keygen(rng), rng, F


def test_default_shape():
    assert default_shape(4) == (2, 2)
    assert default_shape(5) == (3, 3)
    assert default_shape(100) == (10, 10)
    assert default_shape(1) == (1, 1)


@pytest.mark.parametrize("i, row, col", [(0, [1, 0], [1, 0]), (3, [0, 1], [0, 1])])
def test_query_selectors_one_hot(i, row, col):
    b, kp, rng, _ = keyed()
    q = pir_query(b, kp.pk, i, (2, 2), rng)
    assert b.decrypt(kp.sk, q.row_selector).tolist() == row
    assert b.decrypt(kp.sk, q.col_selector).tolist() == col
    assert q.row_selector.level == 0


def test_all_indices_of_5x5_give_distinct_pairs():
    b, kp, rng, _ = keyed()
    q = pir_query(b, kp.pk, np.arange(25), (5, 5), rng)
    rows = b.decrypt(kp.sk, q.row_selector)
    cols = b.decrypt(kp.sk, q.col_selector)
    pairs = {(int(np.argmax(r)), int(np.argmax(c))) for r, c in zip(rows, cols)}
    assert len(pairs) == 25
    assert np.all(rows.sum(axis=1) == 1) and np.all(cols.sum(axis=1) == 1)


def test_answer_examples():
    b, kp, rng, F = keyed()
    db = PirDatabase.from_entries([10, 20, 30, 40], F)
    assert pir_extract(kp.sk, pir_answer(pir_query(b, kp.pk, 2, db.shape, rng), db)) == 30
    zeros = PirDatabase.from_entries([0] * 9, F)
    assert pir_extract(kp.sk, pir_answer(pir_query(b, kp.pk, 7, zeros.shape, rng), zeros)) == 0


@pytest.mark.parametrize("name", ["transparent", "integer"])
def test_every_index_of_random_db(name):
    b, kp, rng, F = keyed(name)
    db = PirDatabase.from_entries(rng.integers(0, F.p, size=100, dtype=np.uint64), F)
    got = pir_extract(kp.sk, pir_answer(pir_query(b, kp.pk, np.arange(100), db.shape, rng), db))
    assert np.array_equal(got, db.entries)


def test_query_errors():
    b, kp, rng, F = keyed()
    with pytest.raises(PirError):
        pir_query(b, kp.pk, 4, (2, 2), rng)
    with pytest.raises(PirError):
        pir_query(b, kp.pk, 3, (2, 2), rng, db_size=3)
    db = PirDatabase.from_entries(range(9), F)
    with pytest.raises(PirError):
        pir_answer(pir_query(b, kp.pk, 0, (2, 2), rng), db)
    with pytest.raises(PirError):
        PirDatabase(np.zeros(5, dtype=np.uint64), 2, 2, F)


def test_query_serialization_round_trip():
    b, kp, rng, F = keyed()
    q = pir_query(b, kp.pk, [[1, 2, 3]], (3, 3), rng)
    back = PirQuery.from_bytes(q.to_bytes(), b, kp.pk)
    assert back.shape == (3, 3) and back.batch_shape == (1, 3)
    data = q.to_bytes()
    with pytest.raises(PirError):
        PirQuery.from_bytes(data[:8] + (5).to_bytes(4, "little") + data[12:], b, kp.pk)


def test_answer_serialization():
    b, kp, rng, F = keyed()
    db = PirDatabase.from_entries(range(10), F)
    q = pir_query(b, kp.pk, [4, 9], db.shape, rng)
    header, d = answer_from_bytes(answer_to_bytes(q, pir_answer(q, db)), b, kp.pk)
    assert header == (4, 4, 2)
    assert b.decrypt(kp.sk, d).tolist() == [4, 9]


def test_sum_pir_example():
    b, kp, rng, F = keyed()
    db = PirDatabase.from_entries([10, 20, 30, 40], F)
    assert sum_pir(b, kp, [0, 2], db, 7, rng) == 33


def test_sum_pir_requires_distinct_indices():
    b, kp, rng, F = keyed()
    db = PirDatabase.from_entries([10, 20, 30, 40], F)
    with pytest.raises(PirError):
        sum_pir(b, kp, [1, 1], db, 0, rng)


def test_sum_pir_identity_random_trials():
    b, kp, rng, F = keyed()
    for _ in range(200):
        n = int(rng.integers(4, 300))
        db = PirDatabase.from_entries(rng.integers(0, F.p, size=n, dtype=np.uint64), F)
        k = int(rng.integers(1, min(n, 8) + 1))
        zeta = rng.choice(n, size=k, replace=False)
        r = int(rng.integers(F.p))
        v = sum_pir(b, kp, zeta, db, r, rng, server_backend=b)
        assert (v + r) % F.p == sum(int(db.entries[z]) for z in zeta) % F.p


def test_batched_sum_pir_answer():
    b, kp, rng, F = keyed()
    db = PirDatabase.from_entries(rng.integers(0, F.p, size=50, dtype=np.uint64), F)
    zeta = np.array([[1, 2, 3], [10, 20, 49]])
    masks = np.array([5, 6], dtype=np.uint64)
    got = b.decrypt(kp.sk, sum_pir_answer(pir_query(b, kp.pk, zeta, db.shape, rng), db, masks, rng))
    want = [(sum(int(db.entries[z]) for z in row) - int(m)) % F.p for row, m in zip(zeta, masks)]
    assert got.tolist() == want


def test_row_scale_folds_a_factor():
    b, kp, rng, F = keyed()
    db = PirDatabase.from_entries([3, 5, 7, 11], F)
    q = pir_query(b, kp.pk, [1, 3], db.shape, rng, row_scale=[[10], [10]][0])
    assert b.decrypt(kp.sk, pir_answer(q, db)).tolist() == [50, 110]


def test_query_size_scales_with_sqrt_n():
    b, kp, rng, F = keyed()
    small = len(pir_query(b, kp.pk, 0, default_shape(100), rng).to_bytes())
    large = len(pir_query(b, kp.pk, 0, default_shape(10_000), rng).to_bytes())
    assert 8 <= large / small <= 12
