"""S-SIP1: the server publishes encrypted filters once, then each query is online only."""

from ssip.protocol import ClientInput, ProtocolConfig, ServerInput, run_ssip1

client = ClientInput.of([("apple", 2), ("banana", 5), ("cherry", 4)])
server = ServerInput.of([("banana", 7), ("cherry", 3), ("durian", 9)])

result = run_ssip1(client, server, ProtocolConfig(seed=1), reveal=True)
print("client share:", result.client_aggregate)
print("server share:", result.server_aggregate)
print("reconstructed:", result.value, "(expected 5*7 + 4*3 = 47)")
print("per-component values:", result.component_values())
for name, phase in result.metrics.phases.items():
    print(f"  {name:8s} bytes={phase.total_bytes:6d} frames={phase.frames:3d} rounds={phase.rounds}")
