"""Sparse vectors, labeled corpora, libsvm-style ingestion and synthetic data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np


class SparseFormatError(ValueError):
    """A corpus file line that does not parse; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class SparseVector:
    """Nonzero ``(feature_id, value)`` entries of a ``dim``-dimensional vector."""

    entries: tuple[tuple[Hashable, float], ...]
    dim: int

    def __post_init__(self) -> None:
        ids = [fid for fid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("feature ids must be distinct")
        if len(ids) > self.dim:
            raise ValueError(f"{len(ids)} entries exceed dimension {self.dim}")

    @classmethod
    def of(cls, entries: Iterable[tuple[Hashable, float]], dim: int | None = None) -> SparseVector:
        entries = tuple((fid, float(v)) for fid, v in entries)
        if dim is None:
            ints = [fid for fid, _ in entries if isinstance(fid, (int, np.integer))]
            dim = max([len(entries)] + [int(i) + 1 for i in ints])
        return cls(entries, dim)

    @property
    def ids(self) -> list[Hashable]:
        return [fid for fid, _ in self.entries]

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.entries], dtype=np.float64)

    @property
    def nnz(self) -> int:
        return len(self.entries)

    def as_dict(self) -> dict[Hashable, float]:
        return dict(self.entries)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values)) if self.entries else 0.0

    def dot(self, other: SparseVector) -> float:
        """Real-arithmetic inner product over the shared support."""
        small, large = (self, other) if self.nnz <= other.nnz else (other, self)
        table = large.as_dict()
        return float(sum(v * table[fid] for fid, v in small.entries if fid in table))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        for fid, v in self.entries:
            out[int(fid)] = v
        return out


@dataclass
class LabeledCorpus:
    """Documents with class labels; ``classes`` is the sorted label set."""

    docs: list[tuple[SparseVector, Hashable]] = field(default_factory=list)
    classes: tuple = ()

    def __post_init__(self) -> None:
        labels = {label for _, label in self.docs}
        if not self.classes:
            self.classes = tuple(sorted(labels))
        elif not labels <= set(self.classes):
            raise ValueError("document label outside the class set")

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def vectors(self) -> list[SparseVector]:
        return [v for v, _ in self.docs]

    @property
    def labels(self) -> list[Hashable]:
        return [label for _, label in self.docs]

    @property
    def dim(self) -> int:
        return max((v.dim for v, _ in self.docs), default=0)

    def mean_nnz(self) -> float:
        return float(np.mean([v.nnz for v, _ in self.docs])) if self.docs else 0.0


def _parse_label(token: str) -> Hashable:
    try:
        return int(token)
    except ValueError:
        try:
            value = float(token)
        except ValueError:
            return token
        return int(value) if value.is_integer() else value


def load_sparse(path: str | Path) -> LabeledCorpus:
    """Read ``label idx:val idx:val ...`` lines.

    Blank lines and lines starting with ``#`` are skipped. The dimension
    is inferred as one past the largest index seen in the file.
    """
    rows: list[tuple[list[tuple[int, float]], Hashable]] = []
    max_idx = -1
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            label_tok, *pairs = text.split()
            entries: list[tuple[int, float]] = []
            seen: set[int] = set()
            for tok in pairs:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise SparseFormatError(line_no, f"expected idx:val, got {tok!r}")
                try:
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise SparseFormatError(line_no, f"bad entry {tok!r}") from None
                if idx < 0:
                    raise SparseFormatError(line_no, f"negative index {idx}")
                if not math.isfinite(val):
                    raise SparseFormatError(line_no, f"non-finite value in {tok!r}")
                if idx in seen:
                    raise SparseFormatError(line_no, f"duplicate index {idx}")
                seen.add(idx)
                entries.append((idx, val))
                max_idx = max(max_idx, idx)
            rows.append((entries, _parse_label(label_tok)))
    dim = max_idx + 1
    return LabeledCorpus([(SparseVector(tuple(e), max(dim, len(e))), label) for e, label in rows])


def save_sparse(corpus: LabeledCorpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for vec, label in corpus.docs:
            body = " ".join(f"{int(fid)}:{v:.17g}" for fid, v in sorted(vec.entries, key=lambda e: int(e[0])))
            fh.write(f"{label} {body}".rstrip() + "\n")


def normalize_l2(v: SparseVector) -> SparseVector:
    """Scale to unit Euclidean norm so inner products become cosines."""
    norm = v.norm()
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return SparseVector(tuple((fid, val / norm) for fid, val in v.entries), v.dim)


# synthetic corpora with published sparsity profiles


@dataclass(frozen=True)
class SparsityProfile:
    name: str
    documents: int
    classes: int
    mean_nnz: float
    dim: int


PROFILES: dict[str, SparsityProfile] = {
    "movies": SparsityProfile("movies", 14341, 2, 136, 95626),
    "newsgroups": SparsityProfile("newsgroups", 9051, 20, 98, 101631),
    "languages-1": SparsityProfile("languages-1", 783, 11, 43, 1033),
    "languages-2": SparsityProfile("languages-2", 783, 11, 231, 9915),
}


def profile(name: str) -> SparsityProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def custom_profile(dim: int, mean_nnz: float, classes: int = 2, name: str = "custom") -> SparsityProfile:
    if not 0 < mean_nnz <= dim:
        raise ValueError("mean_nnz must lie in (0, dim]")
    return SparsityProfile(name, 0, classes, mean_nnz, dim)


def synthetic_vector(
    prof: SparsityProfile,
    rng: np.random.Generator,
    topic: np.ndarray | None = None,
    topic_share: float = 0.5,
) -> SparseVector:
    """One document: Poisson support size, part drawn from a class topic pool.

    Values are positive term-frequency-like weights ``1 + Exp(1)``.
    """
    nnz = int(np.clip(rng.poisson(prof.mean_nnz), 1, prof.dim))
    ids: dict[int, None] = {}
    if topic is not None and len(topic):
        n_topic = min(len(topic), int(rng.binomial(nnz, topic_share)))
        ids.update(dict.fromkeys(rng.choice(topic, size=n_topic, replace=False).tolist()))
    while len(ids) < nnz:
        ids.update(dict.fromkeys(rng.integers(0, prof.dim, size=nnz - len(ids)).tolist()))
    values = 1.0 + rng.exponential(1.0, size=len(ids))
    return SparseVector(tuple(zip(ids.keys(), values.tolist())), prof.dim)


def topic_pools(prof: SparsityProfile, rng: np.random.Generator, pool_factor: float = 4.0) -> list[np.ndarray]:
    size = min(prof.dim, max(1, int(pool_factor * prof.mean_nnz)))
    return [rng.choice(prof.dim, size=size, replace=False) for _ in range(prof.classes)]


@dataclass
class SyntheticSource:
    """Draws labeled documents for one profile.

    Each class owns a pool of features that supplies ``topic_share`` of
    its documents' support, so nearest-neighbour structure exists.
    """

    prof: SparsityProfile
    rng: np.random.Generator
    topic_share: float = 0.5
    normalize: bool = False
    pools: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.pools:
            self.pools = topic_pools(self.prof, self.rng)

    def sample(self, label: int | None = None) -> tuple[SparseVector, int]:
        label = int(self.rng.integers(0, self.prof.classes)) if label is None else label
        vec = synthetic_vector(self.prof, self.rng, self.pools[label], self.topic_share)
        return (normalize_l2(vec) if self.normalize else vec), label

    def corpus(self, n_docs: int) -> LabeledCorpus:
        return LabeledCorpus([self.sample() for _ in range(n_docs)], tuple(range(self.prof.classes)))


def synthetic_corpus(
    prof: SparsityProfile | str,
    n_docs: int,
    rng: np.random.Generator,
    topic_share: float = 0.5,
    normalize: bool = False,
) -> LabeledCorpus:
    """Labeled documents whose mean support size follows ``prof``."""
    prof = profile(prof) if isinstance(prof, str) else prof
    return SyntheticSource(prof, rng, topic_share, normalize).corpus(n_docs)


def nnz_counts(vectors: Sequence[SparseVector]) -> np.ndarray:
    return np.array([v.nnz for v in vectors], dtype=np.int64)
