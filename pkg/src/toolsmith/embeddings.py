"""Pluggable text-embedding providers.

Two built-ins: a remote endpoint client for production, and a deterministic
character-n-gram hashing vectorizer whose output depends only on the input
text, making similarity-based tests reproducible on any machine.
"""

from __future__ import annotations

import math
import zlib
from typing import Protocol, Sequence

import requests


class ZeroNorm(ValueError):
    """Cosine similarity is undefined for a zero-length vector."""


class EmbedderUnavailable(RuntimeError):
    pass


class EmbeddingProvider(Protocol):
    def embed(self, text: str) -> tuple[float, ...]: ...


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Plain cosine similarity; sums run left to right so results are
    bit-for-bit reproducible."""
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNorm("cosine similarity requires nonzero vectors")
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (norm_a * norm_b)


def cosine_or_zero(a: Sequence[float], b: Sequence[float]) -> float:
    try:
        return cosine(a, b)
    except ZeroNorm:
        return 0.0


class NgramHashEmbedder:
    """Character n-gram counts hashed into a fixed-size vector, L2-normalized.

    crc32 is used for bucketing because Python's builtin hash is salted per
    process.
    """

    def __init__(self, dim: int = 1024, n: int = 3) -> None:
        if dim < 1 or n < 1:
            raise ValueError("dim and n must be positive")
        self.dim = dim
        self.n = n

    def embed(self, text: str) -> tuple[float, ...]:
        normalized = " ".join(text.lower().split())
        counts = [0.0] * self.dim
        if normalized:
            grams = (
                [normalized[i : i + self.n] for i in range(len(normalized) - self.n + 1)]
                if len(normalized) >= self.n
                else [normalized]
            )
            for gram in grams:
                counts[zlib.crc32(gram.encode("utf-8")) % self.dim] += 1.0
        norm = math.sqrt(sum(c * c for c in counts))
        if norm == 0.0:
            return tuple(counts)
        return tuple(c / norm for c in counts)


class RemoteEmbedder:
    """Client for an HTTP embedding endpoint returning OpenAI-style payloads."""

    def __init__(self, endpoint_url: str, model_name: str = "", timeout_s: float = 30.0):
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.timeout_s = timeout_s

    def embed(self, text: str) -> tuple[float, ...]:
        try:
            response = requests.post(
                self.endpoint_url,
                json={"model": self.model_name, "input": text},
                timeout=self.timeout_s,
            )
            response.raise_for_status()
            payload = response.json()
            return tuple(float(x) for x in payload["data"][0]["embedding"])
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise EmbedderUnavailable(str(exc)) from exc
