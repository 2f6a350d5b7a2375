"""Run both parties of a session and assemble the joint result.

Each party runs in its own thread with its own RNG stream, HE backend
and OT backend; they only share the channel. With a fixed seed the
transcript is identical over the in-process and TCP transports.
"""

from __future__ import annotations

import threading
from typing import Sequence

import numpy as np

from ..transport import Channel, ChannelClosed, local_pair, tcp_accept, tcp_connect, tcp_listen
from .batched import BatchedClient, BatchedServer
from .common import (
    CLIENT,
    SERVER,
    BatchConfig,
    ClientInput,
    PartyResult,
    ProtocolConfig,
    ServerInput,
    SessionResult,
    ShareOutcome,
    derive_bytes,
    false_positive_mask,
    party_rng,
)
from .ssip1 import Ssip1Client, Ssip1Server
from .ssip2 import Ssip2Client, Ssip2Server


def session_secrets(seed: int | None) -> tuple[bytes, bytes]:
    """Session id and dealer seed; both parties derive the same pair from ``seed``."""
    return derive_bytes(seed, "session", 8), derive_bytes(seed, "dealer", 32)


def _drive(party, chan: Channel, out: dict, role: str) -> None:
    try:
        out[role] = party.run(chan)
    except BaseException as exc:  # noqa: BLE001 - reported to the caller
        out[role + "_error"] = exc
        chan.abort(f"{role} failed: {type(exc).__name__}")
    else:
        chan.close()


def run_parties(
    client,
    server,
    session_id: bytes,
    transport: str = "local",
    addr: str = "127.0.0.1:0",
    timeout: float = 600.0,
) -> tuple[PartyResult, PartyResult]:
    """Run the two state machines concurrently and return their results."""
    out: dict = {}
    if transport == "local":
        c_chan, s_chan = local_pair(session_id, timeout)
        thread = threading.Thread(target=_drive, args=(server, s_chan, out, "server"), daemon=True)
        thread.start()
        _drive(client, c_chan, out, "client")
    elif transport == "tcp":
        listener = tcp_listen(addr)
        host, port = listener.getsockname()[:2]

        def serve() -> None:
            try:
                chan = tcp_accept(listener, session_id, timeout)
            except OSError as exc:
                out["server_error"] = exc
                return
            finally:
                listener.close()
            _drive(server, chan, out, "server")

        thread = threading.Thread(target=serve, daemon=True)
        thread.start()
        _drive(client, tcp_connect(f"{host}:{port}", session_id, timeout=timeout), out, "client")
    else:
        raise ValueError(f"unknown transport {transport!r}")
    thread.join(timeout)
    errors = [out.get("client_error"), out.get("server_error")]
    # prefer the root cause over the peer's resulting ChannelClosed
    errors = sorted((e for e in errors if e is not None), key=lambda e: isinstance(e, ChannelClosed))
    if errors:
        raise errors[0]
    if thread.is_alive():
        raise TimeoutError("server party did not finish")
    return out["client"], out["server"]


def _assemble(
    protocol: str,
    config: ProtocolConfig,
    session_id: bytes,
    client_groups: Sequence[ClientInput],
    server_groups: Sequence[ServerInput],
    filters,
    client: PartyResult,
    server: PartyResult,
) -> SessionResult:
    outcomes = []
    fps = []
    bound = 0.0
    for g, (cg, sg, flt) in enumerate(zip(client_groups, server_groups, filters)):
        dummy = client.dummy[g] if client.dummy is not None else np.zeros(len(cg), dtype=bool)
        outcomes.append([
            ShareOutcome(int(c), int(s), j, g, bool(d))
            for j, (c, s, d) in enumerate(zip(client.shares[g], server.shares[g], dummy))
        ])
        fp = false_positive_mask(cg, sg, flt.bf) & ~dummy
        fps.append(fp)
        bound += int((~dummy).sum()) * flt.params.false_positive_rate(len(sg))
    return SessionResult(protocol, config.modulus, outcomes, client, server, session_id, min(1.0, bound), fps)


def run_ssip1_groups(
    client_groups: Sequence[ClientInput],
    server_groups: Sequence[ServerInput],
    config: ProtocolConfig | None = None,
    transport: str = "local",
    reveal: bool = False,
    published=None,
    cached=None,
) -> SessionResult:
    """One S-SIP1 session holding several independent groups.

    ``published`` (key pair, packages, filters) lets the server reuse an
    earlier offline phase; pass the packages as ``cached`` to the client
    to skip sending them again.
    """
    config = config or ProtocolConfig()
    session_id, dealer = session_secrets(config.seed)
    server = Ssip1Server(
        server_groups, config, party_rng(config.seed, SERVER), dealer,
        published=published, send_offline=cached is None, reveal=reveal,
    )
    client = Ssip1Client(client_groups, config, party_rng(config.seed, CLIENT), dealer, cached=cached, reveal=reveal)
    c, s = run_parties(client, server, session_id, transport)
    return _assemble("ssip1", config, session_id, client_groups, server_groups, server.filters, c, s)


def run_ssip1(
    client_input: ClientInput,
    server_input: ServerInput,
    config: ProtocolConfig | None = None,
    transport: str = "local",
    reveal: bool = False,
) -> SessionResult:
    return run_ssip1_groups([client_input], [server_input], config, transport, reveal)


def run_ssip2_groups(
    client_groups: Sequence[ClientInput],
    server_groups: Sequence[ServerInput],
    config: ProtocolConfig | None = None,
    transport: str = "local",
    reveal: bool = False,
) -> SessionResult:
    config = config or ProtocolConfig()
    session_id, dealer = session_secrets(config.seed)
    server = Ssip2Server(server_groups, config, party_rng(config.seed, SERVER), dealer, reveal)
    client = Ssip2Client(client_groups, config, party_rng(config.seed, CLIENT), dealer, reveal)
    c, s = run_parties(client, server, session_id, transport)
    return _assemble("ssip2", config, session_id, client_groups, server_groups, server.filters, c, s)


def run_ssip2(
    client_input: ClientInput,
    server_input: ServerInput,
    config: ProtocolConfig | None = None,
    transport: str = "local",
    reveal: bool = False,
) -> SessionResult:
    return run_ssip2_groups([client_input], [server_input], config, transport, reveal)


def run_batched(
    client_input: ClientInput,
    server_input: ServerInput,
    batch_config: BatchConfig,
    config: ProtocolConfig | None = None,
    transport: str = "local",
    reveal: bool = False,
) -> SessionResult:
    config = config or ProtocolConfig()
    session_id, dealer = session_secrets(config.seed)
    server = BatchedServer(server_input, batch_config, config, party_rng(config.seed, SERVER), dealer, reveal)
    client = BatchedClient(client_input, config, party_rng(config.seed, CLIENT), dealer, reveal)
    c, s = run_parties(client, server, session_id, transport)
    return _assemble(
        "batched", config, session_id, c.extra["groups"], server.groups, server.filters, c, s
    )


def run_protocol(
    protocol: str,
    client_input: ClientInput,
    server_input: ServerInput,
    config: ProtocolConfig | None = None,
    batch_config: BatchConfig | None = None,
    transport: str = "local",
    reveal: bool = False,
) -> SessionResult:
    if protocol == "ssip1":
        return run_ssip1(client_input, server_input, config, transport, reveal)
    if protocol == "ssip2":
        return run_ssip2(client_input, server_input, config, transport, reveal)
    if protocol == "batched":
        if batch_config is None:
            batch_config = default_batch(len(client_input))
        return run_batched(client_input, server_input, batch_config, config, transport, reveal)
    raise ValueError(f"unknown protocol {protocol!r}")


def default_batch(t: int) -> BatchConfig:
    """Cuckoo table with 1.5 bins per client item, at least 3 bins."""
    return BatchConfig(m_bins=max(3, -(-3 * max(t, 1) // 2)))


def build_parties(
    protocol: str,
    client_input: ClientInput | None,
    server_input: ServerInput | None,
    config: ProtocolConfig,
    batch_config: BatchConfig | None = None,
    reveal: bool = False,
):
    """State machines for one or both roles, as used by two-process runs.

    Returns ``(client, server, session_id)``; a party is ``None`` when its
    input is. Both processes must use the same ``config.seed``.
    """
    session_id, dealer = session_secrets(config.seed)
    client = server = None
    if protocol == "ssip1":
        if server_input is not None:
            server = Ssip1Server([server_input], config, party_rng(config.seed, SERVER), dealer, reveal=reveal)
        if client_input is not None:
            client = Ssip1Client([client_input], config, party_rng(config.seed, CLIENT), dealer, reveal=reveal)
    elif protocol == "ssip2":
        if server_input is not None:
            server = Ssip2Server([server_input], config, party_rng(config.seed, SERVER), dealer, reveal)
        if client_input is not None:
            client = Ssip2Client([client_input], config, party_rng(config.seed, CLIENT), dealer, reveal)
    elif protocol == "batched":
        if server_input is not None:
            if batch_config is None:
                if client_input is None:
                    raise ValueError("a batched server needs an explicit bin count")
                batch_config = default_batch(len(client_input))
            server = BatchedServer(server_input, batch_config, config, party_rng(config.seed, SERVER), dealer, reveal)
        if client_input is not None:
            client = BatchedClient(client_input, config, party_rng(config.seed, CLIENT), dealer, reveal)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    return client, server, session_id
