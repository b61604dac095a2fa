"""Per-document quality scoring from a meta-model pair.

The quality factor of a document is the ratio of the small model's
perplexity to the large model's perplexity. Both models saw the same
training data, so the ratio cancels out how generically predictable a
text is and keeps how much extra capacity helps on it; higher means
higher estimated quality. Equivalently d = 2^(L_small - L_large) in bits.

Corpus scoring is deterministic regardless of worker count: rows are
keyed by doc_id and sorted before writing, never emitted in completion
order.
"""

from __future__ import annotations

import hashlib
import math
import multiprocessing
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .corpus import Document
from .errors import (
    ErrorBudgetExceededError,
    InvalidPerplexityError,
    ScalingFilterError,
    ScorerUnavailableError,
)
from .ngram import MetaModelPair, tokenize
from .remote import post_json

SCORE_HEADER = ("doc_id", "n_tokens", "ppl_small", "ppl_large", "quality_factor")


def _fmt(x: float) -> str:
    return format(x, ".17g")


def quality_factor(ppl_small: float, ppl_large: float) -> float:
    """Ratio of the two perplexities; both must be finite and positive."""
    if not (math.isfinite(ppl_small) and ppl_small > 0):
        raise InvalidPerplexityError(f"small-model perplexity {ppl_small!r} is not finite and positive")
    if not (math.isfinite(ppl_large) and ppl_large > 0):
        raise InvalidPerplexityError(f"large-model perplexity {ppl_large!r} is not finite and positive")
    return ppl_small / ppl_large


@dataclass(frozen=True)
class QualityScore:
    doc_id: str
    n_tokens: int
    ppl_small: float
    ppl_large: float
    d: float


class RemotePerplexityModel:
    """Client for one remote perplexity service speaking the 2^L convention.

    Protocol: POST <url>/v1/perplexity with {"texts": [...]} returning
    {"perplexities": [...], "model": "<name>", "log_base": 2}.
    """

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 3):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._model_name: Optional[str] = None

    def _call(self, texts: list[str]) -> dict:
        url = f"{self.base_url}/v1/perplexity"
        try:
            body = post_json(url, {"texts": texts}, timeout=self.timeout, retries=self.retries)
        except Exception as exc:
            raise ScorerUnavailableError(f"remote scorer {url} failed: {exc}") from exc
        if "log_base" in body and body["log_base"] != 2:
            raise InvalidPerplexityError(f"remote scorer {url} declares log_base={body['log_base']}, need 2")
        self._model_name = str(body.get("model", ""))
        return body

    def perplexities(self, texts: list[str]) -> list[float]:
        body = self._call(texts)
        ppls = body.get("perplexities")
        if not isinstance(ppls, list) or len(ppls) != len(texts):
            raise ScorerUnavailableError(
                f"remote scorer returned {len(ppls) if isinstance(ppls, list) else 'no'} "
                f"perplexities for {len(texts)} texts"
            )
        return [float(p) for p in ppls]

    def model_name(self) -> str:
        if self._model_name is None:
            self._call([])
        return self._model_name or ""

    def fingerprint(self) -> str:
        tag = f"remote:{self.base_url}:{self.model_name()}"
        return hashlib.blake2b(tag.encode("utf-8"), digest_size=8).hexdigest()


@dataclass
class ScorerEndpoint:
    """Either an in-process model pair or a pair of remote perplexity URLs."""

    kind: str  # "local-pair" | "remote-pair"
    local: Optional[MetaModelPair] = None
    remote_small: Optional[RemotePerplexityModel] = None
    remote_large: Optional[RemotePerplexityModel] = None
    batch_size: int = 32
    timeout: float = 30.0

    def __post_init__(self):
        has_local = self.local is not None
        has_remote = self.remote_small is not None and self.remote_large is not None
        if has_local == has_remote:
            raise ValueError("configure exactly one of local pair / remote URL pair")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def local_pair(cls, pair: MetaModelPair) -> "ScorerEndpoint":
        return cls(kind="local-pair", local=pair)

    @classmethod
    def remote_pair(
        cls,
        small_url: str,
        large_url: str,
        batch_size: int = 32,
        timeout: float = 30.0,
        retries: int = 3,
    ) -> "ScorerEndpoint":
        return cls(
            kind="remote-pair",
            remote_small=RemotePerplexityModel(small_url, timeout=timeout, retries=retries),
            remote_large=RemotePerplexityModel(large_url, timeout=timeout, retries=retries),
            batch_size=batch_size,
            timeout=timeout,
        )

    def fingerprints(self) -> tuple[str, str]:
        if self.local is not None:
            return self.local.small.fingerprint(), self.local.large.fingerprint()
        return self.remote_small.fingerprint(), self.remote_large.fingerprint()


def score_document(endpoint: ScorerEndpoint, doc: Document) -> QualityScore:
    n_tokens = len(tokenize(doc.text))
    if endpoint.local is not None:
        ppl_s = endpoint.local.small.perplexity(doc)
        ppl_l = endpoint.local.large.perplexity(doc)
    else:
        try:
            (ppl_s,) = endpoint.remote_small.perplexities([doc.text])
            (ppl_l,) = endpoint.remote_large.perplexities([doc.text])
        except ScorerUnavailableError as exc:
            raise ScorerUnavailableError(f"{exc} (doc_id={doc.id})", doc_id=doc.id) from exc
    return QualityScore(
        doc_id=doc.id,
        n_tokens=n_tokens,
        ppl_small=ppl_s,
        ppl_large=ppl_l,
        d=quality_factor(ppl_s, ppl_l),
    )


def content_hash(text: str) -> str:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


class ScoreCache:
    """Append-only perplexity cache keyed by document content and model pair.

    A row is only reused when doc id, content hash, and both model
    fingerprints all match, so scores from a retrained pair can never leak
    into a new run. Reads may be concurrent; all writes go through the
    single owning process.
    """

    def __init__(self, path: str | Path, fp_small: str, fp_large: str):
        self.path = Path(path)
        self.fp_small = fp_small
        self.fp_large = fp_large
        self._rows: dict[tuple[str, str], tuple[int, float, float]] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    parts = line.rstrip("\n").split("\t")
                    if len(parts) != 7:
                        continue
                    doc_id, chash, fs, fl, n_tok, ppl_s, ppl_l = parts
                    if fs == fp_small and fl == fp_large:
                        self._rows[(doc_id, chash)] = (int(n_tok), float(ppl_s), float(ppl_l))
        self._appended: list[str] = []

    def get(self, doc_id: str, chash: str) -> Optional[tuple[int, float, float]]:
        return self._rows.get((doc_id, chash))

    def put(self, doc_id: str, chash: str, n_tokens: int, ppl_small: float, ppl_large: float) -> None:
        self._rows[(doc_id, chash)] = (n_tokens, ppl_small, ppl_large)
        self._appended.append(
            "\t".join(
                (doc_id, chash, self.fp_small, self.fp_large, str(n_tokens), _fmt(ppl_small), _fmt(ppl_large))
            )
        )

    def flush(self) -> None:
        if not self._appended:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            for row in self._appended:
                fh.write(row + "\n")
        self._appended.clear()


@dataclass
class ScoreSummary:
    count: int
    error_count: int
    endpoint_evaluations: int
    cache_hits: int
    mean_d: float
    quantiles: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "error_count": self.error_count,
            "endpoint_evaluations": self.endpoint_evaluations,
            "cache_hits": self.cache_hits,
            "mean_quality_factor": self.mean_d,
            "quality_factor_quantiles": self.quantiles,
        }


def _nearest_rank_quantiles(values: Sequence[float], pcts=(5, 25, 50, 75, 95)) -> dict[str, float]:
    ordered = sorted(values)
    n = len(ordered)
    out = {}
    for p in pcts:
        rank = max(1, math.ceil(p / 100.0 * n))
        out[f"p{p:02d}"] = ordered[rank - 1]
    return out


# Module global read by forked workers: set right before the pool is
# created so children inherit the trained pair without pickling it.
_WORKER_PAIR: Optional[MetaModelPair] = None


def _score_text_local(task: tuple[str, str]) -> tuple[str, int, float, float]:
    doc_id, text = task
    pair = _WORKER_PAIR
    n_tokens = len(tokenize(text))
    return doc_id, n_tokens, pair.small.perplexity(text), pair.large.perplexity(text)


def _local_perplexities(
    pair: MetaModelPair, pending: list[tuple[str, str]], workers: int
) -> dict[str, tuple[int, float, float]]:
    global _WORKER_PAIR
    results: dict[str, tuple[int, float, float]] = {}
    if workers > 1 and len(pending) > 1:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:
            ctx = None
        if ctx is not None:
            _WORKER_PAIR = pair
            try:
                chunk = max(1, len(pending) // (workers * 8))
                with ctx.Pool(processes=workers) as pool:
                    for doc_id, n_tok, ppl_s, ppl_l in pool.imap_unordered(
                        _score_text_local, pending, chunksize=chunk
                    ):
                        results[doc_id] = (n_tok, ppl_s, ppl_l)
            finally:
                _WORKER_PAIR = None
            return results
    for doc_id, text in pending:
        n_tokens = len(tokenize(text))
        results[doc_id] = (n_tokens, pair.small.perplexity(text), pair.large.perplexity(text))
    return results


def _remote_perplexities(
    endpoint: ScorerEndpoint, pending: list[tuple[str, str]], workers: int
) -> dict[str, tuple[int, float, float]]:
    batches = [
        pending[i : i + endpoint.batch_size] for i in range(0, len(pending), endpoint.batch_size)
    ]

    def fetch(batch: list[tuple[str, str]]) -> list[tuple[str, int, float, float]]:
        texts = [text for _, text in batch]
        small = endpoint.remote_small.perplexities(texts)
        large = endpoint.remote_large.perplexities(texts)
        return [
            (doc_id, len(tokenize(text)), s, l)
            for (doc_id, text), s, l in zip(batch, small, large)
        ]

    results: dict[str, tuple[int, float, float]] = {}
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for rows in pool.map(fetch, batches):
                for doc_id, n_tok, ppl_s, ppl_l in rows:
                    results[doc_id] = (n_tok, ppl_s, ppl_l)
    else:
        for batch in batches:
            for doc_id, n_tok, ppl_s, ppl_l in fetch(batch):
                results[doc_id] = (n_tok, ppl_s, ppl_l)
    return results


def score_corpus(
    endpoint: ScorerEndpoint,
    docs: Iterable[Document],
    out_path: str | Path,
    cache_path: Optional[str | Path] = None,
    workers: int = 1,
    error_budget: float = 0.01,
) -> ScoreSummary:
    """Score every document, writing one TSV row per doc sorted by doc_id.

    Cached (doc_id, content hash) rows under the same model fingerprints are
    reused without touching the endpoint. Per-document scorer errors go to
    an ``.errors.tsv`` sidecar; the run aborts only when the error fraction
    exceeds ``error_budget``.
    """
    out_path = Path(out_path)
    fp_small, fp_large = endpoint.fingerprints()
    cache = ScoreCache(cache_path, fp_small, fp_large) if cache_path is not None else None

    rows: dict[str, tuple[str, int, float, float]] = {}  # doc_id -> (chash, n_tok, ppl_s, ppl_l)
    pending: list[tuple[str, str]] = []
    hashes: dict[str, str] = {}
    total = 0
    errors: list[tuple[str, str, str]] = []  # doc_id, code, message
    cache_hits = 0

    for doc in docs:
        total += 1
        if doc.id in rows or doc.id in hashes:
            raise ValueError(f"duplicate doc_id {doc.id!r} in scoring input")
        chash = content_hash(doc.text)
        hashes[doc.id] = chash
        cached = cache.get(doc.id, chash) if cache is not None else None
        if cached is not None:
            n_tok, ppl_s, ppl_l = cached
            rows[doc.id] = (chash, n_tok, ppl_s, ppl_l)
            cache_hits += 1
        else:
            pending.append((doc.id, doc.text))

    evaluations = len(pending)
    if pending:
        try:
            if endpoint.local is not None:
                fetched = _local_perplexities(endpoint.local, pending, workers)
            else:
                fetched = _remote_perplexities(endpoint, pending, workers)
        except ScalingFilterError as exc:
            # Endpoint-level failure: charge it to every pending document.
            for doc_id, _ in pending:
                errors.append((doc_id, exc.code, str(exc)))
            fetched = {}
        for doc_id, (n_tok, ppl_s, ppl_l) in fetched.items():
            try:
                quality_factor(ppl_s, ppl_l)
            except InvalidPerplexityError as exc:
                errors.append((doc_id, exc.code, str(exc)))
                continue
            rows[doc_id] = (hashes[doc_id], n_tok, ppl_s, ppl_l)
            if cache is not None:
                cache.put(doc_id, hashes[doc_id], n_tok, ppl_s, ppl_l)

    if cache is not None:
        cache.flush()

    error_path = out_path.with_name(out_path.name + ".errors.tsv")
    if errors:
        with open(error_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("doc_id\tcode\tmessage\n")
            for doc_id, code, message in sorted(errors):
                fh.write(f"{doc_id}\t{code}\t{message}\n")
    elif error_path.exists():
        error_path.unlink()

    if total > 0 and len(errors) / total > error_budget:
        raise ErrorBudgetExceededError(
            f"{len(errors)}/{total} documents failed scoring (budget {error_budget:.2%})"
        )

    out_path.parent.mkdir(parents=True, exist_ok=True)
    d_values = []
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(SCORE_HEADER) + "\n")
        for doc_id in sorted(rows):
            _, n_tok, ppl_s, ppl_l = rows[doc_id]
            d = quality_factor(ppl_s, ppl_l)
            d_values.append(d)
            fh.write(f"{doc_id}\t{n_tok}\t{_fmt(ppl_s)}\t{_fmt(ppl_l)}\t{_fmt(d)}\n")

    return ScoreSummary(
        count=len(rows),
        error_count=len(errors),
        endpoint_evaluations=evaluations,
        cache_hits=cache_hits,
        mean_d=sum(d_values) / len(d_values) if d_values else float("nan"),
        quantiles=_nearest_rank_quantiles(d_values) if d_values else {},
    )


def read_score_file(path: str | Path) -> list[QualityScore]:
    scores = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != SCORE_HEADER:
            raise ValueError(f"unexpected score file header {header!r}")
        for line in fh:
            doc_id, n_tok, ppl_s, ppl_l, d = line.rstrip("\n").split("\t")
            scores.append(
                QualityScore(
                    doc_id=doc_id,
                    n_tokens=int(n_tok),
                    ppl_small=float(ppl_s),
                    ppl_large=float(ppl_l),
                    d=float(d),
                )
            )
    return scores
