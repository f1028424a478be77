"""Text encoders used for instruction and transition embeddings.

Two backends sit behind :class:`EmbedderSpec`:

* ``hashed-local``: lowercase, split on non-alphanumerics, drop stopwords,
  count unigrams (and bigrams) hashed into ``dimension`` buckets with a
  fixed 64-bit hash, then L2-normalise.  Deterministic, no weights.
* ``remote``: an HTTP client for an OpenAI-style ``/v1/embeddings``
  endpoint.  Responses are L2-normalised on arrival.

Both memoise by exact text for the lifetime of the embedder.
"""
from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("hashed-local", "remote")

STOPWORDS = frozenset(
    """a an the of to from and or in on at with by for then is are be it its this that
    your you some any into onto""".split()
)

_TOKEN = re.compile(r"[a-z0-9]+")


class EmbeddingError(RuntimeError):
    """Remote embedding failure, with the number of attempts made."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "hashed-local"
    dimension: int = 256
    bigrams: bool = True
    stopwords: bool = True
    endpoint: str = "http://localhost:8000/v1/embeddings"
    model: str = "sentence-transformers/all-MiniLM-L6-v2"
    timeout: float = 30.0
    retries: int = 2
    api_key_env: str = "OIR_EMBEDDING_API_KEY"
    batch_size: int = 64
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown embedder kind {self.kind!r}; expected one of {KINDS}")
        if self.dimension <= 0:
            raise ValueError("embedding dimension must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


def tokenize(text: str, stopwords: bool = True) -> list[str]:
    toks = _TOKEN.findall(text.lower())
    if stopwords:
        toks = [t for t in toks if t not in STOPWORDS]
    return toks


def features(text: str, bigrams: bool = True, stopwords: bool = True) -> list[str]:
    toks = tokenize(text, stopwords)
    feats = list(toks)
    if bigrams:
        feats.extend(f"{a} {b}" for a, b in zip(toks, toks[1:]))
    return feats


def bucket(feature: str, dimension: int) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dimension


def _normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        return v
    return v / n


class HashedEmbedder:
    def __init__(self, spec: EmbedderSpec):
        self.spec = spec
        self.dimension = spec.dimension
        self._memo: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        vec = self._memo.get(text)
        if vec is not None:
            return vec
        v = np.zeros(self.dimension, dtype=np.float64)
        for f in features(text, self.spec.bigrams, self.spec.stopwords):
            v[bucket(f, self.dimension)] += 1.0
        v = _normalize(v)
        v.flags.writeable = False
        with self._lock:
            self._memo[text] = v
        return v

    def embed_many(self, texts) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dimension))
        return np.stack([self.embed(t) for t in texts])


class RemoteEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    One POST per batch of up to ``batch_size`` uncached texts; batches run
    concurrently up to ``max_in_flight``.  The bearer token is read from
    the environment variable named by ``spec.api_key_env`` (optional).
    """

    def __init__(self, spec: EmbedderSpec, client=None):
        import httpx

        self.spec = spec
        self.dimension = spec.dimension
        self._memo: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self._client = client or httpx.Client(timeout=spec.timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.spec.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _request(self, texts: list[str]) -> list[np.ndarray]:
        import httpx

        payload = {"model": self.spec.model, "input": texts}
        attempts = 0
        last = None
        while attempts <= self.spec.retries:
            attempts += 1
            try:
                resp = self._client.post(self.spec.endpoint, json=payload, headers=self._headers())
                resp.raise_for_status()
                body = resp.json()
                rows = sorted(body["data"], key=lambda r: r.get("index", 0))
                if len(rows) != len(texts):
                    raise EmbeddingError(f"expected {len(texts)} embeddings, got {len(rows)}", attempts)
                out = []
                for r in rows:
                    v = np.asarray(r["embedding"], dtype=np.float64)
                    if v.shape != (self.dimension,):
                        raise EmbeddingError(
                            f"embedding dimension {v.shape} does not match configured {self.dimension}", attempts)
                    out.append(_normalize(v))
                return out
            except EmbeddingError:
                raise
            except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
                last = exc
                log.warning("embedding request failed (attempt %d): %s", attempts, exc)
                if attempts <= self.spec.retries:
                    time.sleep(min(2.0, 0.1 * 2 ** (attempts - 1)))
        raise EmbeddingError(f"embedding request to {self.spec.endpoint} failed: {last}", attempts)

    def embed_many(self, texts) -> np.ndarray:
        texts = list(texts)
        missing = []
        for t in texts:
            if t not in self._memo and t not in missing and t.strip():
                missing.append(t)
        bs = max(1, self.spec.batch_size)
        batches = [missing[i:i + bs] for i in range(0, len(missing), bs)]
        if batches:
            with ThreadPoolExecutor(max_workers=max(1, self.spec.max_in_flight)) as pool:
                results = list(pool.map(self._request, batches))
            with self._lock:
                for batch, vecs in zip(batches, results):
                    for t, v in zip(batch, vecs):
                        v.flags.writeable = False
                        self._memo[t] = v
        zero = np.zeros(self.dimension)
        if not texts:
            return np.zeros((0, self.dimension))
        return np.stack([self._memo.get(t, zero) if t.strip() else zero for t in texts])

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


_EMBEDDERS: dict = {}


def make_embedder(spec: EmbedderSpec):
    """Shared embedder (with its memo table) for ``spec``."""
    emb = _EMBEDDERS.get(spec)
    if emb is None:
        emb = HashedEmbedder(spec) if spec.kind == "hashed-local" else RemoteEmbedder(spec)
        _EMBEDDERS[spec] = emb
    return emb


def embed(text: str, spec: EmbedderSpec | None = None) -> np.ndarray:
    """Embed one text; the empty (or all-stopword) text maps to the zero vector."""
    return make_embedder(spec or EmbedderSpec()).embed(text)


def cosine(a, b) -> float:
    """Cosine similarity, defined as 0 when either vector is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    c = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, c))
