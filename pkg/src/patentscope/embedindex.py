"""Chunking, embedding providers and an exact cosine top-k vector index."""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import httpx
import numpy as np

from .errors import (
    CorruptIndex,
    DimensionMismatch,
    IndexIoError,
    InvalidChunkParams,
    ProviderUnavailable,
)
from .ingest import CleanDocument, tokenize

logger = logging.getLogger(__name__)

DEFAULT_DIM = 4096
DEFAULT_CHUNK_SIZE = 512
DEFAULT_OVERLAP = 64

INDEX_MAGIC = b"EVPIDX1\0"


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    seq_no: int
    text: str
    token_span: tuple[int, int]

    @property
    def key(self) -> str:
        return chunk_key(self.doc_id, self.seq_no)


def chunk_key(doc_id: str, seq_no: int) -> str:
    return f"{doc_id}#{seq_no}"


def chunk_document(
    doc: CleanDocument, chunk_size: int = DEFAULT_CHUNK_SIZE, overlap: int = DEFAULT_OVERLAP
) -> list[Chunk]:
    """Slide a ``chunk_size`` window with stride ``chunk_size - overlap`` over the tokens."""
    if not (0 <= overlap < chunk_size):
        raise InvalidChunkParams(f"need 0 <= overlap < chunk_size, got {overlap}, {chunk_size}")
    tokens = tokenize(doc.text)
    n = len(tokens)
    chunks: list[Chunk] = []
    start = 0
    stride = chunk_size - overlap
    while start < n:
        end = min(start + chunk_size, n)
        chunks.append(Chunk(doc.doc_id, len(chunks), " ".join(tokens[start:end]), (start, end)))
        if end == n:
            break
        start += stride
    return chunks


def normalize(values) -> np.ndarray:
    """Return a float32 unit vector; raises on zero or non-finite input."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("embedding must be a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding contains NaN or Inf")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return (v / norm).astype(np.float32)


# ---------------------------------------------------------------- providers


class EmbeddingProvider(Protocol):
    dim: int

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def _bucket(feature: str, dim: int) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def hashed_features(text: str) -> list[str]:
    """Word unigrams and bigrams over the shared tokenizer."""
    tokens = tokenize(text)
    return tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]


class LocalEmbedder:
    """Deterministic offline embedder: feature-hashed bag of 1-2 grams, L2-normalized."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed_one(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dim, dtype=np.float64)
        features = hashed_features(text)
        if not features:
            raise ValueError("cannot embed text without tokens")
        for feat in features:
            counts[_bucket(feat, self.dim)] += 1.0
        return normalize(counts)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed_one(t) for t in texts]


class HttpEmbedder:
    """Remote embedder speaking ``{"input": [...]}`` -> ``{"data": [{"embedding": [...]}]}``."""

    def __init__(
        self,
        endpoint: str,
        dim: int,
        api_key_env: Optional[str] = None,
        model: Optional[str] = None,
        timeout: float = 30.0,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.endpoint = endpoint
        self.dim = dim
        self.api_key_env = api_key_env
        self.model = model
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise ProviderUnavailable(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        body: dict = {"input": list(texts)}
        if self.model:
            body["model"] = self.model
        try:
            resp = self._client.post(self.endpoint, json=body, headers=self._headers())
            resp.raise_for_status()
            data = resp.json()["data"]
        except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
            raise ProviderUnavailable(f"embedding request failed: {exc}") from exc
        if len(data) != len(texts):
            raise ProviderUnavailable(f"expected {len(texts)} embeddings, got {len(data)}")
        out = []
        for item in data:
            vec = item["embedding"]
            if len(vec) != self.dim:
                raise DimensionMismatch(f"provider returned dim {len(vec)}, expected {self.dim}")
            out.append(normalize(vec))
        return out


def embed(text: str, provider: EmbeddingProvider) -> np.ndarray:
    (vec,) = provider.embed_batch([text])
    if vec.shape != (provider.dim,):
        raise DimensionMismatch(f"got dim {vec.shape}, expected {provider.dim}")
    return vec


# ---------------------------------------------------------------- index


class VectorIndex:
    """Flat index of unit vectors searched by full scan.

    Single writer, many readers: ``add`` takes a lock, ``search`` works on a
    snapshot of the arrays and never blocks.
    """

    def __init__(self, dim: int):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._keys: list[str] = []
        self._key_set: set[str] = set()
        self._matrix = np.zeros((0, dim), dtype=np.float32)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def keys(self) -> list[str]:
        return list(self._keys)

    @property
    def vectors(self) -> np.ndarray:
        return self._matrix

    def add(self, key: str, vector) -> None:
        self.add_many([key], [vector])

    def add_many(self, keys: Sequence[str], vectors) -> None:
        if not keys:
            return
        mat = np.asarray(vectors, dtype=np.float32)
        if mat.ndim != 2 or mat.shape[1] != self.dim:
            raise DimensionMismatch(f"vectors must have dim {self.dim}, got shape {mat.shape}")
        if len(keys) != mat.shape[0]:
            raise ValueError("keys and vectors differ in length")
        if not np.all(np.isfinite(mat)):
            raise ValueError("vectors contain NaN or Inf")
        norms = np.linalg.norm(mat.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-5):
            raise ValueError("index vectors must be unit-norm")
        with self._lock:
            if len(set(keys)) != len(keys) or self._key_set.intersection(keys):
                raise ValueError("chunk keys must be unique")
            self._matrix = np.vstack([self._matrix, mat])
            self._keys.extend(keys)
            self._key_set.update(keys)

    def search(self, query, k: int) -> list[tuple[str, float]]:
        return index_search(self, query, k)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorIndex):
            return NotImplemented
        return (
            self.dim == other.dim
            and self._keys == other._keys
            and self._matrix.tobytes() == other._matrix.tobytes()
        )


def index_search(index: VectorIndex, query, k: int) -> list[tuple[str, float]]:
    """Exact cosine top-k, similarity descending, ties by ascending key."""
    q = np.asarray(query, dtype=np.float32)
    if q.shape != (index.dim,):
        raise DimensionMismatch(f"query dim {q.shape} does not match index dim {index.dim}")
    if k < 0:
        raise ValueError("k must be non-negative")
    keys, mat = index._keys, index._matrix
    n = min(len(keys), mat.shape[0])
    if k == 0 or n == 0:
        return []
    # row-wise reduction so identical rows always score identically
    sims = (mat[:n].astype(np.float64) * q.astype(np.float64)).sum(axis=1)
    qn = float(np.linalg.norm(q.astype(np.float64)))
    if qn > 0:
        sims = sims / qn
    np.clip(sims, -1.0, 1.0, out=sims)
    order = sorted(range(n), key=lambda i: (-sims[i], keys[i]))
    return [(keys[i], float(sims[i])) for i in order[:k]]


def _serialize(index: VectorIndex) -> bytes:
    parts = [INDEX_MAGIC, struct.pack("<IQ", index.dim, len(index))]
    for key, row in zip(index._keys, index._matrix):
        kb = key.encode("utf-8")
        parts.append(struct.pack("<I", len(kb)))
        parts.append(kb)
        parts.append(row.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _deserialize(data: bytes) -> VectorIndex:
    header = len(INDEX_MAGIC) + 12
    if len(data) < header + 4 or data[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise CorruptIndex("bad magic or truncated header")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptIndex("checksum mismatch")
    dim, count = struct.unpack_from("<IQ", body, len(INDEX_MAGIC))
    if dim == 0:
        raise CorruptIndex("dimension is zero")
    pos = header
    keys, rows = [], []
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            keys.append(body[pos : pos + klen].decode("utf-8"))
            pos += klen
            row = np.frombuffer(body, dtype="<f4", count=dim, offset=pos)
            rows.append(row.astype(np.float32))
            pos += 4 * dim
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptIndex(f"malformed entry: {exc}") from exc
    if pos != len(body):
        raise CorruptIndex("trailing bytes after last entry")
    index = VectorIndex(dim)
    if keys:
        try:
            index.add_many(keys, np.vstack(rows))
        except ValueError as exc:
            raise CorruptIndex(str(exc)) from exc
    return index


def index_save(index: VectorIndex, path: Union[str, Path]) -> None:
    path = Path(path)
    data = _serialize(index)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IndexIoError(f"cannot write index {path}: {exc}") from exc


def index_load(path: Union[str, Path]) -> VectorIndex:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IndexIoError(f"cannot read index {path}: {exc}") from exc
    return _deserialize(data)
