import hashlib

import numpy as np
import pytest

from scalingfilter.corpus import Document
from scalingfilter.embedding import (
    HASH_BUCKETS,
    NGRAM_SIZES,
    HashedProjectionEmbedder,
    RemoteEmbedder,
)
from scalingfilter.errors import DegenerateEmbeddingError, EmbedderUnavailableError
from scalingfilter.seeding import rng_for


class TestHashedProjection:
    def test_identical_docs_identical_rows(self):
        emb = HashedProjectionEmbedder(dim=16, seed=1)
        X = emb.embed(["the same text here", "the same text here"])
        assert np.array_equal(X[0], X[1])
        assert X[0] @ X[1] == pytest.approx(1.0, abs=1e-12)

    def test_rows_unit_normalized(self):
        emb = HashedProjectionEmbedder(dim=32, seed=2)
        X = emb.embed([f"document number {i} with words" for i in range(20)])
        assert np.allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-9)

    def test_deterministic_across_instances(self):
        texts = ["alpha beta gamma", "delta epsilon zeta"]
        X1 = HashedProjectionEmbedder(dim=16, seed=5).embed(texts)
        X2 = HashedProjectionEmbedder(dim=16, seed=5).embed(texts)
        assert np.array_equal(X1, X2)

    def test_seed_changes_embedding(self):
        texts = ["alpha beta gamma"]
        X1 = HashedProjectionEmbedder(dim=16, seed=5).embed(texts)
        X2 = HashedProjectionEmbedder(dim=16, seed=6).embed(texts)
        assert not np.array_equal(X1, X2)

    def test_matches_straight_line_oracle(self):
        # independent re-derivation: hash -> count -> project -> normalize
        dim, seed = 12, 9
        docs = [f"oracle text {i} padded with tokens" for i in range(20)]
        emb = HashedProjectionEmbedder(dim=dim, seed=seed)
        X = emb.embed(docs)

        signs = (
            rng_for(seed, "hashed-projection-signs").integers(
                0, 2, size=(HASH_BUCKETS, dim), dtype=np.int8
            )
            * 2
            - 1
        )
        for row, text in enumerate(docs):
            data = text.encode("utf-8")
            vec = np.zeros(dim)
            for size in NGRAM_SIZES:
                for i in range(len(data) - size + 1):
                    digest = hashlib.blake2b(data[i : i + size], digest_size=8).digest()
                    bucket = int.from_bytes(digest, "little") % HASH_BUCKETS
                    vec += signs[bucket]
            vec /= np.linalg.norm(vec)
            assert np.allclose(X[row], vec, atol=1e-9)

    def test_too_short_doc_is_degenerate(self):
        emb = HashedProjectionEmbedder(dim=8, seed=0)
        with pytest.raises(DegenerateEmbeddingError) as exc:
            emb.embed(["ab"])
        assert exc.value.code == "degenerate-embedding"

    def test_accepts_documents_and_strings(self):
        emb = HashedProjectionEmbedder(dim=8, seed=0)
        text = "interchangeable input types"
        X1 = emb.embed([Document.create("d", text)])
        X2 = emb.embed([text])
        assert np.array_equal(X1, X2)

    def test_dim_validation(self):
        with pytest.raises(ValueError):
            HashedProjectionEmbedder(dim=1)


class TestRemoteEmbedder:
    def test_normalized_response(self, make_service):
        def embed_fn(texts):
            return [[1.0, 0.0, 0.0] for _ in texts], True

        svc = make_service(embed_fn=embed_fn)
        emb = RemoteEmbedder(svc.url, timeout=5, retries=2)
        X = emb.embed(["a text", "b text"])
        assert X.shape == (2, 3)
        assert np.allclose(np.linalg.norm(X, axis=1), 1.0)

    def test_unnormalized_response_gets_normalized(self, make_service):
        def embed_fn(texts):
            return [[3.0, 4.0] for _ in texts], False

        svc = make_service(embed_fn=embed_fn)
        X = RemoteEmbedder(svc.url, timeout=5, retries=2).embed(["a"])
        assert np.allclose(X[0], [0.6, 0.8])

    def test_batching(self, make_service):
        calls = []

        def embed_fn(texts):
            calls.append(len(texts))
            return [[1.0, 0.0] for _ in texts], True

        svc = make_service(embed_fn=embed_fn)
        emb = RemoteEmbedder(svc.url, batch_size=4, timeout=5, retries=2)
        emb.embed([f"t{i}" for i in range(10)])
        assert calls == [4, 4, 2]

    def test_failure_is_embedder_unavailable(self, make_service):
        svc = make_service(embed_fn=lambda texts: ([[1.0, 0.0]] * len(texts), True))
        svc.set_failing(True)
        with pytest.raises(EmbedderUnavailableError) as exc:
            RemoteEmbedder(svc.url, timeout=2, retries=2).embed(["x"])
        assert exc.value.code == "embedder-unavailable"

    def test_zero_vector_is_degenerate(self, make_service):
        svc = make_service(embed_fn=lambda texts: ([[0.0, 0.0]] * len(texts), False))
        with pytest.raises(DegenerateEmbeddingError):
            RemoteEmbedder(svc.url, timeout=5, retries=2).embed(["x"])

    def test_count_mismatch_is_unavailable(self, make_service):
        svc = make_service(embed_fn=lambda texts: ([[1.0, 0.0]], True))
        with pytest.raises(EmbedderUnavailableError):
            RemoteEmbedder(svc.url, timeout=5, retries=2).embed(["x", "y"])
