import numpy as np
import pytest

from ssip.field import FieldModulus
from ssip.he import (
    MULTIPLIED,
    IntegerBackend,
    KeyMismatch,
    LevelError,
    MalformedCiphertext,
    TransparentBackend,
    he_add,
    he_ct_mul,
    he_dec,
    he_enc,
    he_keygen,
    he_plain_mul,
    he_sub,
    make_backend,
)

BACKENDS = ["transparent", "integer"]


def setup(name, p=97, seed=0):
    backend = make_backend(name, FieldModulus(p))
    rng = np.random.default_rng(seed)
    return backend, he_keygen(backend, rng), rng


def test_transparent_flags_itself_insecure(caplog, monkeypatch):
    monkeypatch.setattr(TransparentBackend, "_warned", False)
    with caplog.at_level("WARNING"):
        TransparentBackend()
    assert "insecure" in caplog.text
    assert not TransparentBackend.secure and IntegerBackend.secure


def test_unknown_backend():
    with pytest.raises(ValueError):
        make_backend("bfv")


@pytest.mark.parametrize("name", BACKENDS)
def test_distinct_seeds_give_distinct_keys(name):
    b, kp1, _ = setup(name, seed=1)
    _, kp2, _ = setup(name, seed=2)
    assert kp1.pk.key_id != kp2.pk.key_id


@pytest.mark.parametrize("name", BACKENDS)
def test_encrypt_decrypt_identity(name):
    b, kp, rng = setup(name, p=None or FieldModulus().p)
    xs = rng.integers(0, b.modulus.p, size=100, dtype=np.uint64)
    assert np.array_equal(b.decrypt(kp.sk, b.encrypt(kp.pk, xs, rng)), xs)
    assert he_dec(kp.sk, he_enc(b, kp.pk, 0, rng)) == 0
    assert he_dec(kp.sk, he_enc(b, kp.pk, b.modulus.p - 1, rng)) == b.modulus.p - 1


@pytest.mark.parametrize("name", BACKENDS)
def test_keypair_serialization_round_trip(name):
    b, kp, rng = setup(name)
    back = b.keypair_from_bytes(b.keypair_to_bytes(kp))
    assert back == kp
    ct = he_enc(b, kp.pk, 42, rng)
    assert he_dec(back.sk, b.from_bytes(ct.to_bytes(), back.pk)) == 42


def test_real_backend_randomizes():
    b, kp, rng = setup("integer")
    assert he_enc(b, kp.pk, 5, rng).to_bytes() != he_enc(b, kp.pk, 5, rng).to_bytes()


@pytest.mark.parametrize("name", BACKENDS)
def test_small_field_examples(name):
    b, kp, rng = setup(name)
    enc = lambda v: he_enc(b, kp.pk, v, rng)
    assert he_dec(kp.sk, he_add(enc(40), enc(60))) == 3
    assert he_dec(kp.sk, he_sub(enc(5), enc(9))) == 93
    assert he_dec(kp.sk, he_plain_mul(enc(7), 0)) == 0
    assert he_dec(kp.sk, he_ct_mul(enc(6), enc(7))) == 42
    assert he_dec(kp.sk, he_add(he_ct_mul(enc(2), enc(3)), enc(4))) == 10


@pytest.mark.parametrize("name", BACKENDS)
def test_multiply_by_one(name):
    b, kp, rng = setup(name, p=FieldModulus().p)
    xs = rng.integers(0, b.modulus.p, size=100, dtype=np.uint64)
    one = b.encrypt(kp.pk, np.ones(100, dtype=np.uint64), rng)
    assert np.array_equal(b.decrypt(kp.sk, b.ct_mul(b.encrypt(kp.pk, xs, rng), one)), xs)


@pytest.mark.parametrize("name", BACKENDS)
def test_level_tracking(name):
    b, kp, rng = setup(name)
    prod = he_ct_mul(he_enc(b, kp.pk, 2, rng), he_enc(b, kp.pk, 3, rng))
    assert prod.level == MULTIPLIED
    assert he_add(prod, he_enc(b, kp.pk, 1, rng)).level == MULTIPLIED
    with pytest.raises(LevelError):
        he_ct_mul(prod, he_enc(b, kp.pk, 1, rng))
    assert b.from_bytes(prod.to_bytes(), kp.pk).level == MULTIPLIED


@pytest.mark.parametrize("name", BACKENDS)
def test_key_mismatch(name):
    b, kp1, rng = setup(name, seed=1)
    _, kp2, _ = setup(name, seed=2)
    a = he_enc(b, kp1.pk, 1, rng)
    c = he_enc(b, kp2.pk, 1, rng)
    with pytest.raises(KeyMismatch):
        he_add(a, c)
    with pytest.raises(KeyMismatch):
        b.decrypt(kp2.sk, a)
    with pytest.raises(KeyMismatch):
        b.from_bytes(a.to_bytes(), kp2.pk)


@pytest.mark.parametrize("name", BACKENDS)
def test_malformed_ciphertext(name):
    b, kp, rng = setup(name)
    data = he_enc(b, kp.pk, 3, rng).to_bytes()
    with pytest.raises(MalformedCiphertext):
        b.from_bytes(data[:3], kp.pk)
    with pytest.raises(MalformedCiphertext):
        b.from_bytes(data + b"\x00", kp.pk)
    other = "integer" if name == "transparent" else "transparent"
    ob, okp, _ = setup(other)
    with pytest.raises(MalformedCiphertext):
        ob.from_bytes(data, okp.pk)


@pytest.mark.parametrize("name", BACKENDS)
def test_homomorphism_laws_on_random_tuples(name):
    b, kp, rng = setup(name, p=FieldModulus().p, seed=7)
    F = b.modulus
    n = 10_000
    x, y, s = (rng.integers(0, F.p, size=n, dtype=np.uint64) for _ in range(3))
    cx, cy = b.encrypt(kp.pk, x, rng), b.encrypt(kp.pk, y, rng)
    assert np.array_equal(b.decrypt(kp.sk, b.add(cx, cy)), F.add(x, y))
    assert np.array_equal(b.decrypt(kp.sk, b.sub(cx, cy)), F.sub(x, y))
    assert np.array_equal(b.decrypt(kp.sk, b.plain_mul(cx, s)), F.mul(x, s))
    assert np.array_equal(b.decrypt(kp.sk, b.ct_mul(cx, cy)), F.mul(x, y))


def test_backends_agree_bit_for_bit():
    F = FieldModulus()
    rng = np.random.default_rng(11)
    M = rng.integers(0, F.p, size=(6, 9), dtype=np.uint64)
    v = rng.integers(0, F.p, size=(9, 2), dtype=np.uint64)
    w = rng.integers(0, F.p, size=(6, 2), dtype=np.uint64)
    out = []
    for name in BACKENDS:
        b, kp, r = setup(name, p=F.p, seed=3)
        ct = b.ct_mul(b.plain_matmul(M, b.encrypt(kp.pk, v, r)), b.encrypt(kp.pk, w, r))
        out.append(b.decrypt(kp.sk, b.sum(ct, axis=0)))
    assert np.array_equal(out[0], out[1])


@pytest.mark.parametrize("name", BACKENDS)
def test_array_helpers(name):
    b, kp, rng = setup(name)
    ct = b.encrypt(kp.pk, np.arange(12, dtype=np.uint64).reshape(3, 4), rng)
    flat = ct.reshape(12)
    assert b.decrypt(kp.sk, b.take(flat, [[0, 5], [11, 1]])).tolist() == [[0, 5], [11, 1]]
    assert list(b.decrypt(kp.sk, b.sum(ct, axis=1))) == [6, 22, 38]
    stacked = b.stack([ct[0], ct[2]])
    assert stacked.shape == (2, 4)
    assert b.counters["enc"] >= 12
