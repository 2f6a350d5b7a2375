"""S-SIP2: Sum-PIR against server-resident filters, then OT-based shares.

Key ownership: the **client** generates the HE key pair and the server
never publishes anything. For each client component ``(x, s)`` with
filter positions ``zeta = h_1(x)..h_k(x)``:

1. membership: Sum-PIR over the BF with server mask ``-mu``,
   ``mu`` in ``[0, p-k-1]``; the client decrypts ``eta + mu`` without
   wraparound. The server flips OT index ``(k + mu) mod (k+1)``, the
   client chooses its value mod ``k+1``.
2. value: Sum-PIR over the GBF with mask ``rho``. The client puts ``s``
   in place of the 1 in its row selectors, so the single ciphertext
   multiplication inside the PIR answer already yields
   ``s * sum GBF[zeta_i]``; the client decrypts ``delta`` with
   ``delta + rho = s * gbf_sum(x)``.
3. component product, shared with S-SIP1.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..field import FieldModulus, sample_uniform
from ..filters import FilterParams, index_matrix
from ..he import Ciphertext, HEBackend, HEKeyPair, make_backend
from ..ot import DealerOT, OTBackend, PayloadKind, make_ot_backend, ot_transfer_batch
from ..pir import (
    PirDatabase,
    PirQuery,
    answer_from_bytes,
    answer_to_bytes,
    default_shape,
    pir_query,
    sum_pir_answer,
)
from ..transport import Channel, MsgType
from . import engine
from .common import (
    ClientInput,
    MembershipShares,
    PartyResult,
    ProtocolConfig,
    ServerFilters,
    ServerInput,
)
from .ssip1 import membership_mask


def filter_databases(filters: ServerFilters, modulus: FieldModulus) -> tuple[PirDatabase, PirDatabase]:
    bf = PirDatabase.from_entries(filters.bf.bits.astype(np.uint64), modulus)
    gbf = PirDatabase.from_entries(filters.gbf.slots, modulus)
    return bf, gbf


def membership_query2(backend: HEBackend, pk, keys: Sequence[bytes], params: FilterParams, rng) -> PirQuery:
    idx = index_matrix(list(keys), params)
    rows_cols = default_shape(params.m)
    return pir_query(backend, pk, idx, rows_cols, rng, db_size=params.m)


def value_query2(backend: HEBackend, pk, keys: Sequence[bytes], s, params: FilterParams, rng) -> PirQuery:
    idx = index_matrix(list(keys), params)
    rows_cols = default_shape(params.m)
    scale = np.asarray(s, dtype=backend.modulus.dtype).reshape(-1, 1)
    return pir_query(backend, pk, idx, rows_cols, rng, row_scale=scale, db_size=params.m)


def server_flip_index2(mu: np.ndarray, k: int) -> np.ndarray:
    return (np.asarray(mu, dtype=np.int64) + k) % (k + 1)


def client_choice2(mu_prime: np.ndarray, k: int) -> np.ndarray:
    return np.asarray(mu_prime, dtype=np.int64) % (k + 1)


def membership_answer2(q: PirQuery, db: PirDatabase, mu: np.ndarray, rng) -> Ciphertext:
    F = db.modulus
    return sum_pir_answer(q, db, F.neg(np.asarray(mu, dtype=np.uint64)), rng)


def value_answer2(q: PirQuery, db: PirDatabase, rho: np.ndarray, rng) -> Ciphertext:
    return sum_pir_answer(q, db, rho, rng)


# in-process sub-protocols


def membership_check2(
    keys: Sequence[bytes],
    filters: ServerFilters,
    keypair: HEKeyPair,
    client_backend: HEBackend,
    server_backend: HEBackend,
    client_rng: np.random.Generator,
    server_rng: np.random.Generator,
    ot: OTBackend | None = None,
    mu: np.ndarray | None = None,
) -> list[MembershipShares]:
    F = client_backend.modulus
    k = filters.params.k
    bf_db, _ = filter_databases(filters, F)
    q = membership_query2(client_backend, keypair.pk, keys, filters.params, client_rng)
    q = PirQuery.from_bytes(q.to_bytes(), server_backend, keypair.pk)
    mu = membership_mask(server_rng, F, k, len(keys)) if mu is None else np.asarray(mu, dtype=np.uint64)
    ans = membership_answer2(q, bf_db, mu, server_rng)
    mu_prime = client_backend.decrypt(keypair.sk, client_backend.from_bytes(ans.to_bytes(), keypair.pk))
    b_server = server_rng.integers(0, 2, size=len(keys), dtype=np.uint8)
    msgs = engine.membership_ot_messages(server_flip_index2(mu, k), b_server, k + 1)
    ot = ot or DealerOT(bytes(16), F)
    b_client = ot_transfer_batch(msgs.tolist(), client_choice2(mu_prime, k).tolist(), PayloadKind.BIT, ot, rng=client_rng)
    return [MembershipShares(int(c), int(s)) for c, s in zip(b_client, b_server)]


def value_extract2(
    keys: Sequence[bytes],
    s: Sequence[int],
    filters: ServerFilters,
    keypair: HEKeyPair,
    client_backend: HEBackend,
    server_backend: HEBackend,
    client_rng: np.random.Generator,
    server_rng: np.random.Generator,
    rho: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(delta, rho)`` with ``delta + rho = s * gbf_sum(x)``."""
    F = client_backend.modulus
    _, gbf_db = filter_databases(filters, F)
    s = F.array(np.asarray(s, dtype=object))
    q = value_query2(client_backend, keypair.pk, keys, s, filters.params, client_rng)
    q = PirQuery.from_bytes(q.to_bytes(), server_backend, keypair.pk)
    rho = sample_uniform(server_rng, F, size=len(keys)) if rho is None else np.asarray(rho, dtype=np.uint64)
    ans = value_answer2(q, gbf_db, rho, server_rng)
    delta = client_backend.decrypt(keypair.sk, client_backend.from_bytes(ans.to_bytes(), keypair.pk))
    return delta, rho


# party state machines


class Ssip2Server:
    protocol = "ssip2"

    def __init__(
        self,
        groups: Sequence[ServerInput],
        config: ProtocolConfig,
        rng: np.random.Generator,
        dealer_seed: bytes = bytes(16),
        reveal: bool = False,
        filters: Sequence[ServerFilters] | None = None,
    ) -> None:
        self.groups = list(groups)
        self.config = config
        self.rng = rng
        self.F = config.modulus
        self.he = make_backend(config.he, self.F)
        self.ot = make_ot_backend(config.ot, self.F, dealer_seed)
        self.reveal = reveal
        self.filters = list(filters) if filters is not None else None

    def group_params(self, g: int, grp: ServerInput) -> FilterParams:
        return self.config.filter_params(len(grp), self.rng.bytes(16))

    def batch_header(self) -> bytes:
        return b""

    def run(self, chan: Channel) -> PartyResult:
        F = self.F
        chan.phase("setup")
        if self.filters is None:
            self.filters = [
                ServerFilters.build(grp, self.group_params(g, grp), self.rng, F)
                for g, grp in enumerate(self.groups)
            ]
        dbs = [filter_databases(f, F) for f in self.filters]
        header = engine.SessionHeader(
            self.protocol, F.p, engine.KEY_CLIENT, self.he.name, self.ot.name,
            [f.params for f in self.filters], False, bytes(8), self.batch_header(),
        )
        chan.send(MsgType.SESSION_HEADER, header.to_bytes())
        driver = engine.OTDriver(self.ot, chan, self.rng)
        driver.send_setup()

        chan.phase("online")
        pk = self.he.public_key_from_bytes(chan.recv(MsgType.PUBLIC_KEY))
        sizes = engine.recv_client_header(chan)
        if len(sizes) != len(self.filters):
            raise ValueError(f"client sent {len(sizes)} groups, server has {len(self.filters)}")
        driver.recv_setup()
        chan.gather(engine.component_keys([MsgType.PIR_QUERY, MsgType.PIR_QUERY], sizes))
        tails = []
        for g, (t, flt, (bf_db, gbf_db)) in enumerate(zip(sizes, self.filters, dbs)):
            k = flt.params.k
            q_bf, q_gbf = [], []
            for j in range(t):
                q_bf.append(PirQuery.from_bytes(chan.recv(MsgType.PIR_QUERY, g, j), self.he, pk))
                q_gbf.append(PirQuery.from_bytes(chan.recv(MsgType.PIR_QUERY, g, j), self.he, pk))
            mu = membership_mask(self.rng, F, k, t)
            rho = sample_uniform(self.rng, F, size=t)
            b_server = self.rng.integers(0, 2, size=t, dtype=np.uint8)
            if t:
                qb = self._stack(q_bf, pk)
                qg = self._stack(q_gbf, pk)
                a_bf = membership_answer2(qb, bf_db, mu, self.rng)
                a_gbf = value_answer2(qg, gbf_db, rho, self.rng)
                for j in range(t):
                    chan.send(MsgType.PIR_ANSWER, answer_to_bytes(q_bf[j], a_bf[j]), g, j)
                    chan.send(MsgType.PIR_ANSWER, answer_to_bytes(q_gbf[j], a_gbf[j]), g, j)
            msgs = engine.membership_ot_messages(server_flip_index2(mu, k), b_server, k + 1)
            tails.append(engine.ServerTail(msgs, b_server, rho))
        alphas = engine.server_tail(driver, tails, F, self.rng)
        aggregates = [int(F.sum(a)) if len(a) else 0 for a in alphas]
        if self.reveal:
            chan.phase("reveal")
            engine.send_reveal(chan, aggregates)
        chan.flush()
        chan.metrics.finish()
        counters = dict(self.he.counters)
        counters["ot"] = self.ot.count
        return PartyResult(alphas, aggregates, counters, chan.metrics, extra={"bits": [t.b_server for t in tails]})

    def _stack(self, queries: list[PirQuery], pk) -> PirQuery:
        return PirQuery(
            self.he.stack([q.row_selector for q in queries], pk),
            self.he.stack([q.col_selector for q in queries], pk),
        )


class Ssip2Client:
    protocol = "ssip2"

    def __init__(
        self,
        groups: Sequence[ClientInput] | None,
        config: ProtocolConfig,
        rng: np.random.Generator,
        dealer_seed: bytes = bytes(16),
        reveal: bool = False,
    ) -> None:
        self.groups = list(groups) if groups is not None else None
        self.config = config
        self.rng = rng
        self.F = config.modulus
        self.he = make_backend(config.he, self.F)
        self.ot = make_ot_backend(config.ot, self.F, dealer_seed)
        self.reveal = reveal
        self.dummy: list[np.ndarray] | None = None

    def extra_info(self) -> dict:
        return {}

    def prepare_groups(self, header: engine.SessionHeader) -> list[ClientInput]:
        return self.groups

    def run(self, chan: Channel) -> PartyResult:
        F = self.F
        chan.phase("setup")
        header = engine.SessionHeader.from_bytes(chan.recv(MsgType.SESSION_HEADER))
        header.check(self.protocol, F.p, self.he.name, self.ot.name)
        groups = self.prepare_groups(header)
        if len(header.params) != len(groups):
            raise ValueError(f"server has {len(header.params)} groups, client has {len(groups)}")
        driver = engine.OTDriver(self.ot, chan, self.rng)
        driver.recv_setup()

        chan.phase("online")
        keypair = self.he.keygen(self.rng, self.config.security_param)
        chan.send(MsgType.PUBLIC_KEY, self.he.public_key_to_bytes(keypair.pk))
        engine.send_client_header(chan, [len(grp) for grp in groups])
        driver.send_setup()
        for g, (grp, params) in enumerate(zip(groups, header.params)):
            if not len(grp):
                continue
            s = np.asarray(grp.values, dtype=np.uint64)
            q_bf = membership_query2(self.he, keypair.pk, grp.keys, params, self.rng)
            q_gbf = value_query2(self.he, keypair.pk, grp.keys, s, params, self.rng)
            for j in range(len(grp)):
                chan.send(MsgType.PIR_QUERY, PirQuery(q_bf.row_selector[j], q_bf.col_selector[j]).to_bytes(), g, j)
                chan.send(MsgType.PIR_QUERY, PirQuery(q_gbf.row_selector[j], q_gbf.col_selector[j]).to_bytes(), g, j)
        chan.gather(engine.component_keys([MsgType.PIR_ANSWER, MsgType.PIR_ANSWER], [len(g) for g in groups]))
        deltas = []
        for g, (grp, params) in enumerate(zip(groups, header.params)):
            k, t = params.k, len(grp)
            a_bf, a_gbf = [], []
            for j in range(t):
                a_bf.append(answer_from_bytes(chan.recv(MsgType.PIR_ANSWER, g, j), self.he, keypair.pk)[1])
                a_gbf.append(answer_from_bytes(chan.recv(MsgType.PIR_ANSWER, g, j), self.he, keypair.pk)[1])
            if t:
                mu_prime = self.he.decrypt(keypair.sk, self.he.stack(a_bf))
                delta = np.asarray(self.he.decrypt(keypair.sk, self.he.stack(a_gbf)), dtype=F.dtype)
            else:
                mu_prime = delta = F.zeros(0)
            choice = client_choice2(mu_prime, k)
            for j in range(t):
                driver.request(g, j, engine.OT_MEMBERSHIP, k + 1, int(choice[j]))
            deltas.append(delta)
        shares, bits = engine.client_tail(driver, deltas, F, self.rng)
        aggregates = [int(F.sum(s)) if len(s) else 0 for s in shares]
        extra = {"bits": bits, "groups": groups}
        extra.update(self.extra_info())
        if self.reveal:
            chan.phase("reveal")
            server_aggs = engine.recv_reveal(chan)
            extra["revealed"] = [(a + b) % F.p for a, b in zip(aggregates, server_aggs)]
        chan.metrics.finish()
        counters = dict(self.he.counters)
        counters["ot"] = self.ot.count
        return PartyResult(shares, aggregates, counters, chan.metrics, dummy=self.dummy, extra=extra)
