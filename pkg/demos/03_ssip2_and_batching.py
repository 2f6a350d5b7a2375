"""S-SIP2 over Sum-PIR, and its batched form that splits both sets into hash bins."""

import numpy as np

from ssip.protocol import BatchConfig, ClientInput, ProtocolConfig, ServerInput, plaintext_sip, run_batched, run_ssip2

rng = np.random.default_rng(3)
server_keys = [b"item%d" % i for i in range(400)]
client_keys = list(rng.choice(server_keys, 20, replace=False)) + [b"other%d" % i for i in range(20)]
client = ClientInput.of([(k, int(v)) for k, v in zip(client_keys, rng.integers(1, 100, 40))])
server = ServerInput.of([(k, int(v)) for k, v in zip(server_keys, rng.integers(1, 100, 400))])
config = ProtocolConfig(seed=4)

plain = plaintext_sip(client, server, config.modulus.p)
direct = run_ssip2(client, server, config)
batched = run_batched(client, server, BatchConfig(m_bins=60), config)
print("plaintext:", plain, "| ssip2:", direct.value, "| batched:", batched.value)
print("batched server bin size beta:", batched.client.extra["beta"], "| stash used:", batched.client.extra["stash_size"])
for label, res in (("ssip2", direct), ("batched", batched)):
    online = res.metrics.phases["online"]
    print(f"{label:8s} online bytes={online.total_bytes} rounds={online.rounds}")
