"""Embeddings and exact top-k cosine search over chunk corpora."""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Chunk, CorpusHandle
from .errors import EmbedBackendError
from .text import tokenize

DEFAULT_DIM = 384
DEFAULT_TOP_K = 5
CACHE_MAGIC = b"PDRIX1"
# Scores equal to this many decimals count as ties and fall back to chunk_id.
TIE_DECIMALS = 12


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashingEmbedder:
    """Bag-of-tokens feature hashing, L2-normalized.

    Text without any alphanumeric token embeds to the zero vector, which
    scores 0 against everything.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmbedBackendError("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text):
            vec[bucket(tok, self.dim)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float
    origin: str

    @property
    def chunk_id(self) -> str:
        return self.chunk.chunk_id

    def to_dict(self) -> dict:
        return {"chunk_id": self.chunk.chunk_id, "score": round(self.score, 12), "origin": self.origin}


class Index:
    """Immutable matrix of unit vectors, one row per chunk."""

    def __init__(self, chunks: Sequence[Chunk], vectors: np.ndarray, origin: str, embedder: Embedder):
        if len(chunks) != len(vectors):
            raise ValueError("chunks and vectors differ in length")
        self.chunks = tuple(chunks)
        self.origin = origin
        self.embedder = embedder
        self.dim = embedder.dim
        self._matrix = np.asarray(vectors, dtype=np.float64).reshape(len(chunks), self.dim)
        self._matrix.setflags(write=False)
        self._lock = threading.Lock()
        self._searches = 0

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def vectors(self) -> np.ndarray:
        return self._matrix

    @property
    def search_count(self) -> int:
        with self._lock:
            return self._searches

    def search(self, query: str, k: int = DEFAULT_TOP_K) -> list[ScoredChunk]:
        return search(self, query, k)


def index_build(corpus: CorpusHandle, embedder: Embedder | None = None) -> Index:
    embedder = embedder or HashingEmbedder()
    vectors = np.array([embedder.embed(c.text) for c in corpus.chunks], dtype=np.float64)
    return Index(corpus.chunks, vectors.reshape(len(corpus.chunks), embedder.dim), corpus.kind, embedder)


def search(index: Index, query: str, k: int = DEFAULT_TOP_K) -> list[ScoredChunk]:
    """Exact top-``k`` by cosine, descending, ties broken by ascending chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    with index._lock:
        index._searches += 1
    if not index.chunks:
        return []
    q = index.embedder.embed(query)
    scores = np.clip(index.vectors @ q, -1.0, 1.0)
    keys = np.round(scores, TIE_DECIMALS)
    order = sorted(range(len(index.chunks)), key=lambda i: (-keys[i], index.chunks[i].chunk_id))
    return [ScoredChunk(index.chunks[i], float(scores[i]), index.origin) for i in order[:k]]


def save_index(index: Index, path: str | Path) -> None:
    """Write the on-disk cache: header, then (id, float32 vector) records."""
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IQ", index.dim, len(index)))
        for chunk, vec in zip(index.chunks, index.vectors):
            cid = chunk.chunk_id.encode("utf-8")
            fh.write(struct.pack("<I", len(cid)))
            fh.write(cid)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def read_index_cache(path: str | Path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    data = Path(path).read_bytes()
    if data[:6] != CACHE_MAGIC:
        raise ValueError(f"{path}: not an index cache")
    dim, count = struct.unpack_from("<IQ", data, 6)
    pos = 6 + 12
    records = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        cid = data[pos : pos + n].decode("utf-8")
        pos += n
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += 4 * dim
        records.append((cid, vec))
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after {count} records")
    return dim, records


def load_index(corpus: CorpusHandle, path: str | Path, embedder: Embedder | None = None) -> Index:
    """Rebuild an index for ``corpus`` from a cache file written by :func:`save_index`.

    Cached vectors are float32, so scores may differ from a fresh build in the
    last few bits.
    """
    embedder = embedder or HashingEmbedder()
    dim, records = read_index_cache(path)
    if dim != embedder.dim:
        raise ValueError(f"cache dim {dim} does not match embedder dim {embedder.dim}")
    ids = [c.chunk_id for c in corpus.chunks]
    if [cid for cid, _ in records] != ids:
        raise ValueError("cache chunk ids do not match the corpus")
    vectors = np.array([v for _, v in records]).reshape(len(ids), dim)
    return Index(corpus.chunks, vectors, corpus.kind, embedder)
