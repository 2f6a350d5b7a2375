"""kNN, logistic-regression and naive-Bayes pipelines over S-SIP.

Feature ids are the S-SIP keys and feature values the payloads, so each
S-SIP instance computes a sparse dot product over the shared support.
Both sides encode reals with the same fixed-point codec; the product
carries two scale factors and is decoded once with ``scale_levels=2``.

Post-processing runs at the client in plaintext. kNN reveals every
per-document similarity score to the client and the logistic pipeline
reveals the raw logit; both are labelled as leakage in the results.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from ..field import FieldModulus, FixedPointCodec
from ..protocol.common import SERVER, ClientInput, ProtocolConfig, ServerInput, party_rng
from ..protocol.session import default_batch, run_batched, run_ssip1_groups, run_ssip2_groups
from ..protocol.ssip1 import Ssip1Server
from .data import LabeledCorpus, SparseVector, normalize_l2

PROTOCOLS = ("ssip1", "ssip2", "batched")
KNN_LEAKAGE = "reveal-scores: the client learns every per-document similarity score"
LOGREG_LEAKAGE = "client-side sigmoid: the client learns the raw logit"
NB_LEAKAGE = "client-side argmax: the client learns every per-class score"


def default_codec(fraction_bits: int = 12, modulus: FieldModulus | None = None) -> FixedPointCodec:
    """Codec with headroom for 4096 matched components of magnitude up to 16."""
    return FixedPointCodec(fraction_bits, modulus or FieldModulus(), max_components=4096, max_magnitude=16.0)


def feature_key(fid: Hashable) -> bytes:
    if isinstance(fid, bytes):
        return fid
    if isinstance(fid, (int, np.integer)):
        return b"f%d" % int(fid)
    return str(fid).encode()


def encode_client(vec: SparseVector, codec: FixedPointCodec) -> ClientInput:
    values = codec.encode(vec.values) if vec.nnz else []
    return ClientInput.of(
        [(feature_key(fid), int(v)) for fid, v in zip(vec.ids, values)], codec.modulus
    )


def encode_server(vec: SparseVector, codec: FixedPointCodec) -> ServerInput:
    values = codec.encode(vec.values) if vec.nnz else []
    return ServerInput.of(
        [(feature_key(fid), int(v)) for fid, v in zip(vec.ids, values)], codec.modulus
    )


def fixed_point_tolerance(t_match: int, codec: FixedPointCodec) -> float:
    """Bound on |decoded - real| for a dot product over ``t_match`` shared entries of magnitude <= 1."""
    return 2 * max(1, t_match) * 2.0 ** -codec.fraction_bits


def _derive_seed(seed: int | None, label: str, index: int) -> int | None:
    if seed is None:
        return None
    digest = hashlib.blake2b(struct.pack("<qq", seed, index) + label.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


class EncodedCorpus:
    """Server-side encoded vectors, plus a cached S-SIP1 offline phase.

    The offline packages are produced once and handed to the client once;
    later S-SIP1 queries against the same corpus only run the online phase.
    """

    def __init__(
        self,
        vectors: Sequence[SparseVector],
        codec: FixedPointCodec,
        config: ProtocolConfig | None = None,
    ) -> None:
        self.vectors = list(vectors)
        self.codec = codec
        self.config = config or ProtocolConfig(modulus=codec.modulus)
        self.groups = [encode_server(v, codec) for v in self.vectors]
        self._published = None

    def __len__(self) -> int:
        return len(self.groups)

    def published(self):
        if self._published is None:
            seed = _derive_seed(self.config.seed, "offline", 0)
            server = Ssip1Server(self.groups, self.config, party_rng(seed, SERVER))
            self._published = server.publish()
        return self._published

    @property
    def offline_bytes(self) -> int:
        keypair, packages, _ = self.published()
        return sum(len(pkg.to_bytes()) for pkg in packages)


@dataclass
class SimilarityResult:
    """Per-document additive score shares and their client-side decoding."""

    client_shares: list[int]
    server_shares: list[int]
    codec: FixedPointCodec
    metric_rows: list[dict] = field(default_factory=list)
    flagged: bool = False

    @property
    def reconstructed(self) -> list[int]:
        p = self.codec.modulus.p
        return [(c + s) % p for c, s in zip(self.client_shares, self.server_shares)]

    @property
    def scores(self) -> np.ndarray:
        if not self.client_shares:
            return np.zeros(0)
        return np.atleast_1d(self.codec.decode(np.array(self.reconstructed, dtype=object), scale_levels=2))


def secure_similarity(
    client_vec: SparseVector,
    server_corpus: Sequence[SparseVector] | EncodedCorpus,
    protocol: str = "ssip1",
    config: ProtocolConfig | None = None,
    codec: FixedPointCodec | None = None,
    transport: str = "local",
) -> SimilarityResult:
    """One S-SIP instance per document; returns the per-document score shares.

    ssip1 and ssip2 run all documents as groups of one session. batched
    runs one session per document because its binning is per instance.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if isinstance(server_corpus, EncodedCorpus):
        corpus = server_corpus
        codec = codec or corpus.codec
        config = config or corpus.config
    else:
        codec = codec or default_codec()
        config = config or ProtocolConfig(modulus=codec.modulus)
        corpus = EncodedCorpus(server_corpus, codec, config)
    if len(corpus) == 0:
        return SimilarityResult([], [], codec)
    query = encode_client(client_vec, codec)
    if protocol == "ssip1":
        published = corpus.published()
        result = run_ssip1_groups(
            [query] * len(corpus), corpus.groups, config, transport, published=published, cached=published[1]
        )
        return SimilarityResult(
            list(result.client.aggregates), list(result.server.aggregates), codec,
            result.metric_rows(), result.flagged,
        )
    if protocol == "ssip2":
        result = run_ssip2_groups([query] * len(corpus), corpus.groups, config, transport)
        return SimilarityResult(
            list(result.client.aggregates), list(result.server.aggregates), codec,
            result.metric_rows(), result.flagged,
        )
    client_shares, server_shares, rows, flagged = [], [], [], False
    for d, group in enumerate(corpus.groups):
        cfg = replace(config, seed=_derive_seed(config.seed, "doc", d))
        result = run_batched(query, group, default_batch(len(query)), cfg, transport)
        client_shares.append(result.client_aggregate)
        server_shares.append(result.server_aggregate)
        rows.extend(result.metric_rows())
        flagged = flagged or result.flagged
    return SimilarityResult(client_shares, server_shares, codec, rows, flagged)


# kNN


def cosine_scores(query: SparseVector, docs: Sequence[SparseVector]) -> np.ndarray:
    """Plaintext oracle: dot products of the given (already normalized) vectors."""
    return np.array([query.dot(doc) for doc in docs], dtype=np.float64)


def knn_vote(scores: Sequence[float], labels: Sequence[Hashable], k_nn: int) -> Hashable:
    """Top ``k_nn`` by score (ties to the lower index), then majority (ties to the smaller label)."""
    if not len(labels):
        raise ValueError("empty corpus")
    if not 1 <= k_nn <= len(labels):
        raise ValueError(f"k_nn must lie in [1, {len(labels)}]")
    order = sorted(range(len(labels)), key=lambda i: (-float(scores[i]), i))[:k_nn]
    votes = Counter(labels[i] for i in order)
    best = max(votes.values())
    return min(label for label, count in votes.items() if count == best)


def knn_classify(
    score_shares: SimilarityResult,
    labels: Sequence[Hashable],
    k_nn: int,
    mode: str = "reveal-scores",
) -> Hashable:
    if mode != "reveal-scores":
        raise ValueError("only the reveal-scores mode is supported")
    if len(score_shares.client_shares) != len(labels):
        raise ValueError("one score per labelled document is required")
    return knn_vote(score_shares.scores, labels, k_nn)


def knn_oracle(query: SparseVector, corpus: LabeledCorpus, k_nn: int) -> Hashable:
    """Plaintext kNN over real cosine similarity."""
    docs = [normalize_l2(v) for v in corpus.vectors]
    return knn_vote(cosine_scores(normalize_l2(query), docs), corpus.labels, k_nn)


@dataclass
class KnnPrediction:
    label: Hashable
    scores: np.ndarray
    neighbours: list[int]
    metric_rows: list[dict]
    leakage: str = KNN_LEAKAGE


def knn_pipeline(
    query: SparseVector,
    corpus: LabeledCorpus,
    k_nn: int,
    protocol: str = "ssip1",
    config: ProtocolConfig | None = None,
    codec: FixedPointCodec | None = None,
    encoded: EncodedCorpus | None = None,
    transport: str = "local",
) -> KnnPrediction:
    """Normalize, score every document securely, then vote at the client."""
    if not len(corpus):
        raise ValueError("empty corpus")
    query = normalize_l2(query)
    if encoded is None:
        codec = codec or default_codec()
        encoded = EncodedCorpus([normalize_l2(v) for v in corpus.vectors], codec, config)
    shares = secure_similarity(query, encoded, protocol, config, codec, transport)
    label = knn_classify(shares, corpus.labels, k_nn)
    scores = shares.scores
    neighbours = sorted(range(len(corpus)), key=lambda i: (-float(scores[i]), i))[:k_nn]
    return KnnPrediction(label, scores, neighbours, shares.metric_rows)


# logistic regression


@dataclass(frozen=True)
class LogisticModel:
    weights: SparseVector
    bias: float = 0.0


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def logreg_oracle(features: SparseVector, model: LogisticModel) -> float:
    return sigmoid(features.dot(model.weights) + model.bias)


@dataclass
class LogRegResult:
    probability: float
    logit: float
    metric_rows: list[dict]
    leakage: str = LOGREG_LEAKAGE


def logreg_infer(
    client_features: SparseVector,
    server_model: LogisticModel | EncodedCorpus,
    protocol: str = "ssip1",
    config: ProtocolConfig | None = None,
    codec: FixedPointCodec | None = None,
    bias: float | None = None,
    transport: str = "local",
) -> LogRegResult:
    """Secure ``<w, x>``, then ``sigmoid(logit + bias)`` at the client.

    ``server_model`` may be an :class:`EncodedCorpus` holding the single
    weight vector, so repeated queries reuse one S-SIP1 offline phase; the
    bias must then be passed separately.
    """
    if isinstance(server_model, LogisticModel):
        corpus: Sequence[SparseVector] | EncodedCorpus = [server_model.weights]
        bias = server_model.bias if bias is None else bias
    else:
        corpus = server_model
        if len(corpus) != 1:
            raise ValueError("a logistic model is one weight vector")
    shares = secure_similarity(client_features, corpus, protocol, config, codec, transport)
    logit = float(shares.scores[0]) + float(bias or 0.0)
    return LogRegResult(sigmoid(logit), logit, shares.metric_rows)


# naive Bayes


@dataclass(frozen=True)
class NaiveBayesTable:
    """Per-class log-likelihood weights keyed by feature id."""

    classes: tuple
    weights: tuple[SparseVector, ...]

    def __post_init__(self) -> None:
        if len(self.classes) != len(self.weights):
            raise ValueError("one weight vector per class is required")


def indicator(features: SparseVector) -> SparseVector:
    """Replace every value by 1; the client's payload in the intersection step."""
    return SparseVector(tuple((fid, 1.0) for fid in features.ids), features.dim)


def nb_oracle(features: SparseVector, table: NaiveBayesTable) -> tuple[np.ndarray, Hashable]:
    scores = cosine_scores(indicator(features), list(table.weights))
    return scores, argmax_label(scores, table.classes)


def argmax_label(scores: Sequence[float], classes: Sequence[Hashable]) -> Hashable:
    best = max(scores)
    return min(c for c, s in zip(classes, scores) if s == best)


@dataclass
class NbResult:
    scores: np.ndarray
    label: Hashable
    metric_rows: list[dict]
    leakage: str = NB_LEAKAGE


def nb_intersect(
    client_features: SparseVector,
    server_table: NaiveBayesTable,
    protocol: str = "ssip1",
    config: ProtocolConfig | None = None,
    codec: FixedPointCodec | None = None,
    encoded: EncodedCorpus | None = None,
    transport: str = "local",
) -> NbResult:
    """One S-SIP per class over ``(feature, 1)`` x ``(feature, log-weight)``."""
    corpus = encoded if encoded is not None else list(server_table.weights)
    shares = secure_similarity(indicator(client_features), corpus, protocol, config, codec, transport)
    scores = shares.scores
    return NbResult(scores, argmax_label(scores, server_table.classes), shares.metric_rows)


def fit_naive_bayes(corpus: LabeledCorpus, alpha: float = 1.0) -> NaiveBayesTable:
    """Multinomial log-likelihoods ``log P(feature | class)`` with Laplace smoothing.

    Only features seen in a class get an entry, so features the class
    never saw contribute nothing to its intersection score.
    """
    dim = max(1, corpus.dim)
    weights = []
    for c in corpus.classes:
        totals: dict[Hashable, float] = {}
        for vec, label in corpus.docs:
            if label == c:
                for fid, v in vec.entries:
                    totals[fid] = totals.get(fid, 0.0) + v
        denom = sum(totals.values()) + alpha * dim
        entries = tuple((fid, math.log((v + alpha) / denom)) for fid, v in sorted(totals.items()))
        weights.append(SparseVector(entries, dim))
    return NaiveBayesTable(tuple(corpus.classes), tuple(weights))


# results out

PREDICTION_COLUMNS = ("query_id", "item", "score", "label")


def write_predictions_csv(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=PREDICTION_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
