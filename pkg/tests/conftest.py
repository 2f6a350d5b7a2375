import numpy as np
import pytest

from ssip import ClientInput, FieldModulus, ServerInput


def random_instance(rng, t, n, overlap=0.5, p=None, value_bits=None):
    """Client and server pair lists that share about ``overlap * min(t, n)`` keys."""
    F = FieldModulus(p) if p else FieldModulus()
    high = F.p if value_bits is None else 1 << value_bits
    shared = int(round(overlap * min(t, n)))
    base = int(rng.integers(1 << 40))
    server_keys = [b"y%d-%d" % (base, i) for i in range(n)]
    client_keys = server_keys[:shared] + [b"x%d-%d" % (base, i) for i in range(t - shared)]
    rng.shuffle(client_keys)
    client = ClientInput.of([(k, int(rng.integers(high))) for k in client_keys], F)
    server = ServerInput.of([(k, int(rng.integers(high))) for k in server_keys], F)
    return client, server


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def small_field():
    return FieldModulus(97)
