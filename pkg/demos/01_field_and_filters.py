"""Field arithmetic, fixed-point encoding and the two Bloom filter flavours."""

import numpy as np

from ssip.field import FieldModulus, FixedPointCodec
from ssip.filters import bf_contains, gbf_sum, params_for
from ssip.protocol import ServerInput, setup

F = FieldModulus()
print(f"default prime p = {F.p} ({F.p.bit_length()} bits)")
print("3 * 5 - 20 mod p =", int(F.sub(F.mul(3, 5), 20)))

codec = FixedPointCodec(12, F, max_components=4096, max_magnitude=16.0)
a, b = codec.encode(0.3), codec.encode(0.2)
print("decode(encode(0.3) * encode(0.2)) =", float(codec.decode(F.mul(a, b), scale_levels=2)))

params = params_for(1000, 2.0**-10)
print(f"filter for n=1000 at fpr 2^-10: m={params.m} k={params.k}")
pairs = [(b"key%d" % i, i * i) for i in range(1000)]
rng = np.random.default_rng(0)
# setup re-seeds the hash functions if a garbled filter insertion runs out of free slots
filters = setup(ServerInput.of(pairs), params, rng, F)
bf, gbf = filters.bf, filters.gbf
print("b'key7' in BF:", bf_contains(bf, b"key7"), "| GBF sum:", gbf_sum(gbf, b"key7"))
probes = 50_000
hits = sum(bf_contains(bf, b"absent%d" % i) for i in range(probes))
print(f"measured fpr {hits / probes:.2e} vs analytic {params.false_positive_rate(1000):.2e}")
