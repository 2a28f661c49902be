"""Caption repository: exact cosine top-K retrieval with leave-one-out
exclusion, subject-predicate-object extraction, and triplet encoding.

The index stores unit-normalized sentence embeddings so a query reduces
to one matrix-vector product followed by an exact sort. Ties are broken
by ascending entry id. The index is immutable after construction and
safe for concurrent queries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import UsageError
from .embeddings import EmbeddingTable, encode_text, tokenize

DEFAULT_PREFIX = "a photo of"

# skipped when picking triplet subjects/objects around the predicate
_STOPWORDS = {
    "a", "an", "the", "her", "his", "its", "their", "my", "your", "our",
    "this", "that", "these", "those", "some", "any", "is", "are", "was",
    "were", "be", "been", "being", "to", "of", "in", "on", "at", "with",
    "and", "or", "very", "so",
}


class DataError(ValueError):
    """Raised for malformed corpus or dataset files."""


class ExtractionError(ValueError):
    """Raised when a sentence is too short to yield a triplet."""


@dataclass(frozen=True)
class Triplet:
    subject: str
    predicate: str
    object: str

    def __post_init__(self):
        for name in ("subject", "predicate", "object"):
            if not getattr(self, name):
                raise UsageError(f"triplet {name} must be non-empty")

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)


@dataclass
class CorpusEntry:
    entry_id: str
    video_id: str
    sentence: str
    triplet: Triplet | None
    embedding: np.ndarray


@dataclass
class RetrievalGroup:
    """One retrieved caption with its score, triplet, and 3 x d encoding."""

    rank: int
    entry: CorpusEntry
    score: float
    triplet: Triplet
    components: np.ndarray  # rows: subject, predicate, object


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UsageError("cosine_similarity of a zero-norm vector")
    return float(a @ b / (na * nb))


def extract_triplet(sentence: str, lexicon: set[str]) -> Triplet:
    """Heuristic S-P-O extraction: first lexicon verb splits the sentence.

    Subject is the first content token before the verb, object the first
    after it. Without a lexicon verb, the middle content token is the
    predicate and its neighbors become subject/object.
    """
    tokens = tokenize(sentence)
    content = [t for t in tokens if t not in _STOPWORDS]
    if len(content) < 3:
        raise ExtractionError(
            f"need at least 3 content tokens to extract a triplet, got {len(content)}: {content}")
    verb_pos = next((i for i, t in enumerate(content) if t in lexicon), None)
    if verb_pos is not None and 0 < verb_pos < len(content) - 1:
        return Triplet(content[verb_pos - 1], content[verb_pos], content[verb_pos + 1])
    mid = len(content) // 2
    return Triplet(content[mid - 1], content[mid], content[mid + 1])


def fallback_triplet(sentence: str) -> Triplet:
    """(first, middle, last) tokens for sentences the heuristic rejects."""
    tokens = tokenize(sentence)
    if not tokens:
        raise ExtractionError("cannot build a fallback triplet from an empty sentence")
    return Triplet(tokens[0], tokens[len(tokens) // 2], tokens[-1])


def encode_triplet(triplet: Triplet, table: EmbeddingTable,
                   prefix: str = DEFAULT_PREFIX) -> np.ndarray:
    """3 x d matrix: each component encoded with the shared prefix prepended."""
    prefix_tokens = tokenize(prefix) if prefix else []
    rows = []
    for component in triplet.as_tuple():
        rows.append(encode_text(prefix_tokens + tokenize(component), table))
    return np.stack(rows)


def load_corpus(path: str, table: EmbeddingTable) -> list[CorpusEntry]:
    """Read a JSONL corpus; precomputed embeddings override encoding."""
    entries: list[CorpusEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            for key in ("id", "video_id", "sentence"):
                if key not in obj:
                    raise DataError(f"{path}: line {lineno}: missing field {key!r}")
            triplet = None
            if obj.get("triplet") is not None:
                trip = obj["triplet"]
                if len(trip) != 3:
                    raise DataError(f"{path}: line {lineno}: triplet must have 3 elements")
                triplet = Triplet(*[str(t) for t in trip])
            if obj.get("embedding") is not None:
                emb = np.asarray(obj["embedding"], dtype=np.float64)
                if emb.shape != (table.d,):
                    raise DataError(
                        f"{path}: line {lineno}: embedding has width {emb.shape} "
                        f"but the table dimension is {table.d}")
            else:
                emb = encode_text(tokenize(obj["sentence"]), table)
            entries.append(CorpusEntry(
                entry_id=str(obj["id"]),
                video_id=str(obj["video_id"]),
                sentence=str(obj["sentence"]),
                triplet=triplet,
                embedding=emb,
            ))
    return entries


def save_corpus(entries: list[CorpusEntry], path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            obj = {
                "id": e.entry_id,
                "video_id": e.video_id,
                "sentence": e.sentence,
            }
            if e.triplet is not None:
                obj["triplet"] = list(e.triplet.as_tuple())
            obj["embedding"] = [float(v) for v in e.embedding]
            fh.write(json.dumps(obj) + "\n")


class CorpusIndex:
    """Exact-scan retrieval index over a frozen corpus."""

    def __init__(self, entries: list[CorpusEntry]):
        if not entries:
            raise DataError("corpus is empty")
        self.entries = list(entries)
        norms = np.array([np.linalg.norm(e.embedding) for e in self.entries])
        if np.any(norms == 0.0):
            bad = [e.entry_id for e, n in zip(self.entries, norms) if n == 0.0]
            raise DataError(f"corpus entries with zero-norm embeddings: {bad}")
        self._matrix = np.stack([e.embedding for e in self.entries]) / norms[:, None]
        self._video_ids = np.array([e.video_id for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)

    def scores(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        nq = np.linalg.norm(q)
        if nq == 0.0:
            raise UsageError("retrieval query has zero norm")
        return self._matrix @ (q / nq)

    def topk(self, query: np.ndarray, k: int,
             exclude_video: str | None = None) -> list[tuple[CorpusEntry, float]]:
        """K best entries by cosine, descending; ties by ascending entry id."""
        if k < 1:
            raise UsageError(f"k must be >= 1, got {k}")
        sims = self.scores(query)
        if exclude_video is None:
            eligible = np.arange(len(self.entries))
        else:
            eligible = np.nonzero(self._video_ids != exclude_video)[0]
        if eligible.size < k:
            raise DataError(
                f"need {k} eligible corpus entries but only {eligible.size} remain "
                f"after excluding video {exclude_video!r} "
                f"(corpus size {len(self.entries)})")
        order = sorted(eligible.tolist(),
                       key=lambda i: (-sims[i], self.entries[i].entry_id))
        return [(self.entries[i], float(sims[i])) for i in order[:k]]


class Retriever:
    """Completes raw top-K hits into triplet-encoded retrieval groups."""

    def __init__(self, index: CorpusIndex, table: EmbeddingTable,
                 lexicon: set[str], prefix: str = DEFAULT_PREFIX):
        self.index = index
        self.table = table
        self.lexicon = lexicon
        self.prefix = prefix

    def triplet_for(self, entry: CorpusEntry) -> Triplet:
        if entry.triplet is not None:
            return entry.triplet
        try:
            return extract_triplet(entry.sentence, self.lexicon)
        except ExtractionError:
            return fallback_triplet(entry.sentence)

    def retrieve(self, query: np.ndarray, k: int,
                 exclude_video: str | None = None) -> list[RetrievalGroup]:
        groups = []
        for rank, (entry, score) in enumerate(self.index.topk(query, k, exclude_video), start=1):
            triplet = self.triplet_for(entry)
            groups.append(RetrievalGroup(
                rank=rank,
                entry=entry,
                score=score,
                triplet=triplet,
                components=encode_triplet(triplet, self.table, self.prefix),
            ))
        return groups
