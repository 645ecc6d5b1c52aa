"""Text embedding providers and vector similarity.

Every provider returns float64 vectors; :func:`embed_text` validates and
normalizes them to unit L2 norm, so downstream cosine similarity reduces to a
dot product.
"""

from __future__ import annotations

import hashlib
import os
import re
from functools import lru_cache
from typing import Protocol, Sequence

import httpx
import numpy as np

DEFAULT_DIM = 384

_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


class EmbeddingError(Exception):
    pass


class EmptyTextError(EmbeddingError, ValueError):
    pass


class DimensionMismatchError(EmbeddingError, ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected dimension {expected}, got {got}")
        self.expected = expected
        self.got = got


class TransportError(EmbeddingError):
    """Remote embedding call failed. ``status`` is None for network errors."""

    retryable = True

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class EmbeddingProvider(Protocol):
    dimension: int

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise EmbeddingError("cannot normalize a zero or non-finite vector")
    return v / n


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(u.shape[-1], v.shape[-1])
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    # the product of norms is symmetric, keeping cosine(u, v) == cosine(v, u)
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


class StubEmbedder:
    """Deterministic bag-of-tokens hash embedder.

    Each lowercased token is hashed (BLAKE2b, keyed by ``seed``) into the seed
    of a Gaussian vector; the text embedding is the normalized sum over its
    tokens. Identical texts give bitwise-identical vectors, unrelated texts are
    nearly orthogonal, and texts sharing most tokens land close together.
    """

    def __init__(self, dimension: int = DEFAULT_DIM, seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self._token_vector = lru_cache(maxsize=65536)(self._make_token_vector)

    def _make_token_vector(self, token: str) -> np.ndarray:
        key = self.seed.to_bytes(8, "little", signed=True)
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        vec = rng.standard_normal(self.dimension)
        vec.setflags(write=False)
        return vec

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            tokens = _TOKEN_RE.findall(text.lower())
            if not tokens:
                raise EmptyTextError("text has no tokens")
            acc = np.zeros(self.dimension)
            for tok in tokens:
                acc += self._token_vector(tok)
            out.append(acc)
        return out


class RemoteEmbedder:
    """Client for a JSON-over-HTTP embedding service.

    Speaks ``POST {base_url}/embed`` with ``{"texts": [...]}`` and expects
    ``{"embeddings": [[...], ...]}`` back. Safe to share between threads.
    """

    def __init__(
        self,
        base_url: str | None = None,
        dimension: int = DEFAULT_DIM,
        token: str | None = None,
        timeout: float = 30.0,
        batch_size: int = 32,
        max_retries: int = 2,
        transport: httpx.BaseTransport | None = None,
    ):
        base_url = base_url or os.environ.get("HIPPOMAP_EMBED_URL")
        if not base_url:
            raise ValueError("no embedding endpoint configured (HIPPOMAP_EMBED_URL)")
        self.base_url = base_url.rstrip("/")
        self.dimension = dimension
        self.token = token if token is not None else os.environ.get("HIPPOMAP_EMBED_TOKEN")
        self.batch_size = batch_size
        self.max_retries = max_retries
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, texts: list[str]) -> list[list[float]]:
        last: TransportError | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = self._client.post(f"{self.base_url}/embed", json={"texts": texts})
            except httpx.HTTPError as exc:
                last = TransportError(f"embedding request failed: {exc}")
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = TransportError(f"embedding service returned {resp.status_code}", resp.status_code)
                continue
            if resp.status_code >= 400:
                err = TransportError(f"embedding service returned {resp.status_code}", resp.status_code)
                err.retryable = False
                raise err
            body = resp.json()
            embeddings = body.get("embeddings")
            if not isinstance(embeddings, list) or len(embeddings) != len(texts):
                raise EmbeddingError("malformed embedding response")
            return embeddings
        assert last is not None
        raise last

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        texts = list(texts)
        for i in range(0, len(texts), self.batch_size):
            for row in self._post(texts[i : i + self.batch_size]):
                vec = np.asarray(row, dtype=np.float64)
                if vec.ndim != 1 or vec.shape[0] != self.dimension:
                    raise DimensionMismatchError(self.dimension, vec.shape[-1] if vec.ndim else 0)
                out.append(vec)
        return out


def _validate(text: str) -> None:
    if not text or not text.strip():
        raise EmptyTextError("text is empty after trimming whitespace")


def _finish(vec: np.ndarray, dimension: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (dimension,):
        raise DimensionMismatchError(dimension, vec.shape[-1] if vec.ndim else 0)
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError("embedding contains non-finite values")
    return normalize(vec)


def embed_text(text: str, provider: EmbeddingProvider) -> np.ndarray:
    """Embed one reasoning step as a unit vector of the provider's dimension."""
    _validate(text)
    return _finish(provider.embed_batch([text])[0], provider.dimension)


def embed_texts(texts: Sequence[str], provider: EmbeddingProvider) -> list[np.ndarray]:
    for t in texts:
        _validate(t)
    if not texts:
        return []
    raw = provider.embed_batch(list(texts))
    return [_finish(v, provider.dimension) for v in raw]
