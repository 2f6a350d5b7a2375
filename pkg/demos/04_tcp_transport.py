"""The same seeded session over the in-process channel and over TCP gives one transcript."""

from ssip.protocol import ClientInput, ProtocolConfig, ServerInput, run_ssip2

client = ClientInput.of([("a", 2), ("b", 5)])
server = ServerInput.of([("b", 7), ("c", 9)])
config = ProtocolConfig(seed=11)

local = run_ssip2(client, server, config)
tcp = run_ssip2(client, server, config, transport="tcp")
print("local value", local.value, "digest", local.digest[:16])
print("tcp   value", tcp.value, "digest", tcp.digest[:16])
print("identical transcripts:", local.digest == tcp.digest)
