"""Document embedding providers.

Two kinds: a remote embedding service client, and a fully deterministic
offline fallback (hashed character n-gram counts projected with a seeded
random sign matrix). Absolute diversity numbers differ between embedders;
only within-embedder comparisons are meaningful.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from .corpus import Document
from .errors import DegenerateEmbeddingError, EmbedderUnavailableError
from .remote import post_json
from .seeding import rng_for

HASH_BUCKETS = 2**18
NGRAM_SIZES = (3, 4, 5)


def _texts(docs: Sequence[Document | str]) -> list[str]:
    return [d.text if isinstance(d, Document) else d for d in docs]


class HashedProjectionEmbedder:
    """Character n-gram hashing followed by a seeded random sign projection.

    Counts character n-grams of sizes 3..5 into 2^18 hash buckets, projects
    the sparse count vector through a {-1, +1} matrix drawn once from the
    projection seed, and L2-normalizes. Deterministic per (seed, dim).
    """

    kind = "hashed-projection"

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ValueError("embedding dim must be >= 2")
        self.dim = dim
        self.seed = seed
        self._signs: np.ndarray | None = None

    def _sign_matrix(self) -> np.ndarray:
        if self._signs is None:
            rng = rng_for(self.seed, "hashed-projection-signs")
            self._signs = (
                rng.integers(0, 2, size=(HASH_BUCKETS, self.dim), dtype=np.int8) * 2 - 1
            ).astype(np.int8)
        return self._signs

    @staticmethod
    def bucket_counts(text: str) -> dict[int, int]:
        """Hashed n-gram counts of one text; the hash is seed-independent."""
        data = text.encode("utf-8")
        counts: dict[int, int] = {}
        blake = hashlib.blake2b
        for size in NGRAM_SIZES:
            for i in range(len(data) - size + 1):
                digest = blake(data[i : i + size], digest_size=8).digest()
                bucket = int.from_bytes(digest, "little") % HASH_BUCKETS
                counts[bucket] = counts.get(bucket, 0) + 1
        return counts

    def embed(self, docs: Sequence[Document | str]) -> np.ndarray:
        """Unit-normalized embeddings, one row per document."""
        if not docs:
            raise ValueError("no documents to embed")
        signs = self._sign_matrix()
        out = np.empty((len(docs), self.dim), dtype=np.float64)
        for row, text in enumerate(_texts(docs)):
            counts = self.bucket_counts(text)
            if not counts:
                raise DegenerateEmbeddingError(f"document row {row} yields no character n-grams")
            buckets = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
            weights = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
            vec = weights @ signs[buckets].astype(np.float64)
            norm = np.linalg.norm(vec)
            if norm <= 0:
                raise DegenerateEmbeddingError(f"document row {row} projects to the zero vector")
            out[row] = vec / norm
        return out

    def fingerprint(self) -> str:
        return f"hashed-projection:dim={self.dim}:buckets={HASH_BUCKETS}:ngrams={NGRAM_SIZES}:seed={self.seed}"


class RemoteEmbedder:
    """Client for a remote embedding service.

    Protocol: POST <url>/v1/embed with {"texts": [...]} returning
    {"embeddings": [[float x m], ...], "model": "<name>", "normalized": true}.
    """

    kind = "remote"

    def __init__(self, base_url: str, batch_size: int = 64, timeout: float = 30.0, retries: int = 3):
        self.base_url = base_url.rstrip("/")
        self.batch_size = batch_size
        self.timeout = timeout
        self.retries = retries
        self._model_name = ""

    def embed(self, docs: Sequence[Document | str]) -> np.ndarray:
        if not docs:
            raise ValueError("no documents to embed")
        texts = _texts(docs)
        url = f"{self.base_url}/v1/embed"
        rows: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start : start + self.batch_size]
            try:
                body = post_json(url, {"texts": batch}, timeout=self.timeout, retries=self.retries)
            except Exception as exc:
                raise EmbedderUnavailableError(f"remote embedder {url} failed: {exc}") from exc
            vecs = body.get("embeddings")
            if not isinstance(vecs, list) or len(vecs) != len(batch):
                raise EmbedderUnavailableError(
                    f"remote embedder returned {len(vecs) if isinstance(vecs, list) else 'no'} "
                    f"embeddings for {len(batch)} texts"
                )
            self._model_name = str(body.get("model", ""))
            block = np.asarray(vecs, dtype=np.float64)
            if not bool(body.get("normalized", False)):
                norms = np.linalg.norm(block, axis=1, keepdims=True)
                if np.any(norms == 0):
                    raise DegenerateEmbeddingError("remote embedder returned a zero vector")
                block = block / norms
            rows.append(block)
        X = np.vstack(rows)
        norms = np.linalg.norm(X, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise EmbedderUnavailableError("remote embedder claims normalized output but norms deviate")
        return X

    def fingerprint(self) -> str:
        return f"remote:{self.base_url}:{self._model_name}"
