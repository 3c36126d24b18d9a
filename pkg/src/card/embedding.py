"""Text embedders.

The default embedder pools signed hashes of word unigrams and bigrams into a
fixed number of buckets and L2-normalizes the result. An external embedder can
be registered instead; it speaks a newline-delimited protocol over a byte
stream (one text line in, ``d`` space-separated decimals out).
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import BinaryIO, Callable, Sequence

import numpy as np

from .errors import ExternalEmbedderUnavailable, ShapeMismatch, ValidationError

_TOKEN = re.compile(r"[^\W_]+")

FEATURE_HASH = "feature-hash"
EXTERNAL = "external"


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = FEATURE_HASH
    dimension: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (FEATURE_HASH, EXTERNAL):
            raise ValidationError(f"unknown embedder kind {self.kind!r}")
        if self.dimension < 8:
            raise ValidationError("embedding dimension must be >= 8")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: list[str]) -> list[str]:
    grams = ["u:" + t for t in tokens]
    grams += [f"b:{a} {b}" for a, b in zip(tokens, tokens[1:])]
    return grams


def _bucket_sign(gram: str, dimension: int, seed: int) -> tuple[int, float]:
    key = seed.to_bytes(16, "little", signed=True)
    h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest(), "little")
    sign = -1.0 if (h >> 63) & 1 else 1.0
    return h % dimension, sign


@lru_cache(maxsize=8192)
def _feature_hash(text: str, dimension: int, seed: int) -> np.ndarray:
    vec = np.zeros(dimension)
    for gram in _ngrams(tokenize(text)):
        bucket, sign = _bucket_sign(gram, dimension, seed)
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    vec.setflags(write=False)
    return vec


# --- external adapters -------------------------------------------------------

ExternalAdapter = Callable[[str], Sequence[float]]
_external: dict[str, ExternalAdapter] = {}


def register_external_embedder(adapter: ExternalAdapter | None) -> None:
    """Install (or with ``None`` remove) the adapter used for ``kind="external"``."""
    if adapter is None:
        _external.pop(EXTERNAL, None)
    else:
        _external[EXTERNAL] = adapter


class StreamEmbedder:
    """Client side of the line protocol over a pair of binary streams."""

    def __init__(self, reader: BinaryIO, writer: BinaryIO):
        self.reader = reader
        self.writer = writer
        self._lock = threading.Lock()

    def __call__(self, text: str) -> list[float]:
        line = " ".join(text.splitlines()) + "\n"
        with self._lock:
            self.writer.write(line.encode("utf-8"))
            self.writer.flush()
            reply = self.reader.readline()
        if not reply:
            raise ExternalEmbedderUnavailable("external embedder closed the stream")
        return [float(tok) for tok in reply.split()]


def serve_stream(embed_fn: Callable[[str], Sequence[float]], reader: BinaryIO, writer: BinaryIO) -> int:
    """Server side: answer requests until EOF. Returns the number served."""
    served = 0
    for raw in iter(reader.readline, b""):
        vec = embed_fn(raw.decode("utf-8").rstrip("\n"))
        writer.write((" ".join(repr(float(v)) for v in vec) + "\n").encode("ascii"))
        writer.flush()
        served += 1
    return served


def _external_embed(text: str, spec: EmbedderSpec) -> np.ndarray:
    adapter = _external.get(EXTERNAL)
    if adapter is None:
        raise ExternalEmbedderUnavailable("no external embedder adapter is registered")
    vec = np.asarray(adapter(text), dtype=float)
    if vec.shape != (spec.dimension,):
        raise ShapeMismatch(f"external embedder returned shape {vec.shape}, expected ({spec.dimension},)")
    if not np.all(np.isfinite(vec)):
        raise ValidationError("external embedder returned non-finite values")
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


# --- public API --------------------------------------------------------------

def embed(text: str, spec: EmbedderSpec = EmbedderSpec()) -> np.ndarray:
    if spec.kind == EXTERNAL:
        return _external_embed(text, spec)
    return _feature_hash(text, spec.dimension, spec.seed)


def batch_embed(texts: Sequence[str], spec: EmbedderSpec = EmbedderSpec()) -> np.ndarray:
    if len(texts) == 0:
        raise ValidationError("batch_embed needs at least one text")
    return np.vstack([embed(t, spec) for t in texts])
