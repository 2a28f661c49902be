"""Vector providers: word-vector file loading, deterministic fallback
embeddings, sentence/triplet-component encoding, and video-feature
ingestion.

All embedding tables are frozen; lookups never mutate state, so tables
are safe to share across threads.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .autodiff import UsageError


class ParseError(ValueError):
    """Raised for malformed embedding or dictionary files."""


_STRIP = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip leading/trailing punctuation."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP)
        if tok:
            out.append(tok)
    return out


def deterministic_embedding(token: str, seed: int, d: int) -> np.ndarray:
    """Unit-norm d-vector derived from a stable hash of (seed, token).

    The same (token, seed, d) always yields the same vector, across
    processes and platforms.
    """
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


@dataclass
class EmbeddingTable:
    """Frozen token -> d-vector map with a deterministic fallback.

    Tokens absent from the file-backed map fall back to
    ``deterministic_embedding`` keyed by ``seed``.
    """

    d: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0
    source: str = "deterministic"

    def lookup(self, token: str) -> np.ndarray:
        vec = self.vectors.get(token)
        if vec is None:
            return deterministic_embedding(token, self.seed, self.d)
        return vec

    def __contains__(self, token: str) -> bool:
        return token in self.vectors


def load_word_vectors(path: str, d: int, seed: int = 0) -> EmbeddingTable:
    """Parse a word-vector text file: one record per line, token then d decimals.

    Later duplicate lines override earlier ones. Raises ``ParseError``
    naming the offending line for malformed records.
    """
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != d + 1:
                raise ParseError(
                    f"{path}: line {lineno}: expected token plus {d} values, "
                    f"got {len(fields) - 1}")
            try:
                vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            vectors[fields[0]] = vec
    return EmbeddingTable(d=d, vectors=vectors, seed=seed, source=f"file:{path}")


def encode_text(tokens: list[str], table: EmbeddingTable) -> np.ndarray:
    """Arithmetic mean of per-token vectors; order-free."""
    if not tokens:
        raise UsageError("encode_text needs at least one token")
    acc = np.zeros(table.d)
    for tok in tokens:
        acc += table.lookup(tok)
    return acc / len(tokens)


@dataclass
class VideoFeatures:
    """Frame embedding matrix with its mean-pooled summary vector."""

    video_id: str
    frames: np.ndarray
    pooled: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def ingest_video(frames, video_id: str) -> VideoFeatures:
    """Wrap an N x d frame matrix; the pooled vector is the row mean."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise UsageError(f"frames must be a non-empty 2-D matrix, got shape {arr.shape}")
    return VideoFeatures(video_id=video_id, frames=arr, pooled=arr.mean(axis=0))


@dataclass
class EmotionDictionary:
    """Ordered emotion word list with its embedded matrix."""

    words: list[str]
    matrix: np.ndarray

    @property
    def size(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index_of(self, word: str) -> int:
        return self._index[word]

    def __post_init__(self):
        self._index = {w: i for i, w in enumerate(self.words)}


def build_emotion_dictionary(words: list[str], table: EmbeddingTable) -> EmotionDictionary:
    if len(set(words)) != len(words):
        dupes = sorted({w for w in words if words.count(w) > 1})
        raise ParseError(f"emotion dictionary has duplicate words: {dupes}")
    if not words:
        raise UsageError("emotion dictionary must not be empty")
    matrix = np.stack([encode_text([w], table) for w in words])
    return EmotionDictionary(words=words, matrix=matrix)


def load_emotion_words(path: str) -> list[str]:
    """One emotion word per line; blank lines ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        words = [line.strip() for line in fh if line.strip()]
    if not words:
        raise ParseError(f"{path}: emotion dictionary file is empty")
    return words


def default_emotion_words() -> list[str]:
    """The 179-word lexicon shipped with the package."""
    text = resources.files("face_forge").joinpath("data/emotion_words.txt").read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def default_verb_lexicon() -> set[str]:
    text = resources.files("face_forge").joinpath("data/verbs.txt").read_text("utf-8")
    return {line.strip() for line in text.splitlines() if line.strip()}
