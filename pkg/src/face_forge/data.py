"""Dataset records, JSONL loading/saving, and the deterministic
synthetic dataset generator used by the acceptance runs.

Frames are stored inline as nested lists or as a path (relative to the
dataset file) to a text matrix with one whitespace-separated row per
line.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import UsageError
from .embeddings import EmbeddingTable, encode_text, tokenize
from .retrieval import CorpusEntry, DataError, Triplet, encode_triplet, save_corpus

# template word pools for the generator; vocab_size caps how many are used
_SUBJECTS = [
    "girl", "boy", "man", "woman", "dog", "cat", "child", "clown", "dancer",
    "singer", "player", "chef", "artist", "rider", "runner", "teacher",
    "farmer", "baby", "bird", "horse", "monkey", "panda", "robot", "pilot",
]
_VERBS = [
    "holds", "throws", "catches", "kicks", "rides", "paints", "plays",
    "washes", "carries", "pushes", "pulls", "lifts", "chases", "feeds",
    "draws", "opens", "climbs", "watches", "builds", "cooks",
]
_OBJECTS = [
    "ball", "rope", "kite", "drum", "bike", "cake", "book", "box", "guitar",
    "flower", "toy", "wagon", "ladder", "bucket", "broom", "wheel", "piano",
    "banner", "basket", "puzzle",
]
_FILLERS = [
    "outside", "today", "slowly", "quickly", "together", "again", "nearby",
    "indoors", "carefully", "quietly", "gently", "twice",
]


@dataclass
class SampleRecord:
    sample_id: str
    video_id: str
    frames: np.ndarray
    caption: str
    emotion_words: list[str] | None = None
    triplet: Triplet | None = None


def load_dataset(path: str, d: int | None = None) -> list[SampleRecord]:
    """Read a JSONL dataset, resolving frame paths and validating widths."""
    base = os.path.dirname(os.path.abspath(path))
    records: list[SampleRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            for key in ("id", "video_id", "frames", "caption"):
                if key not in obj:
                    raise DataError(f"{path}: line {lineno}: missing field {key!r}")
            if not str(obj["caption"]).strip():
                raise DataError(f"{path}: line {lineno}: caption is empty")
            frames_field = obj["frames"]
            if isinstance(frames_field, str):
                frames = _load_frames_file(os.path.join(base, frames_field))
            else:
                rows = list(frames_field)
                widths = {len(r) for r in rows}
                if not rows or len(widths) != 1:
                    raise DataError(f"{path}: line {lineno}: frames must be a "
                                    f"non-empty rectangular matrix")
                frames = np.asarray(rows, dtype=np.float64)
            if d is not None and frames.shape[1] != d:
                raise DataError(
                    f"{path}: line {lineno}: frames have width {frames.shape[1]} "
                    f"but the configured dimension is {d}")
            triplet = None
            if obj.get("triplet") is not None:
                trip = obj["triplet"]
                if len(trip) != 3:
                    raise DataError(f"{path}: line {lineno}: triplet must have 3 elements")
                triplet = Triplet(*[str(t) for t in trip])
            emotion_words = obj.get("emotion_words")
            if emotion_words is not None:
                emotion_words = [str(w) for w in emotion_words]
            records.append(SampleRecord(
                sample_id=str(obj["id"]),
                video_id=str(obj["video_id"]),
                frames=frames,
                caption=str(obj["caption"]),
                emotion_words=emotion_words,
                triplet=triplet,
            ))
    if not records:
        raise DataError(f"{path}: dataset is empty")
    return records


def _load_frames_file(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            rows = [[float(v) for v in line.split()] for line in fh if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read frames file {path}: {exc}") from exc
    widths = {len(r) for r in rows}
    if not rows or len(widths) != 1:
        raise DataError(f"{path}: frames file must be a non-empty rectangular matrix")
    return np.asarray(rows, dtype=np.float64)


def save_dataset(records: list[SampleRecord], path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            obj = {
                "id": rec.sample_id,
                "video_id": rec.video_id,
                "frames": [[float(v) for v in row] for row in rec.frames],
                "caption": rec.caption,
            }
            if rec.emotion_words is not None:
                obj["emotion_words"] = rec.emotion_words
            if rec.triplet is not None:
                obj["triplet"] = list(rec.triplet.as_tuple())
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthSpec:
    samples: int = 64
    vocab_size: int = 40
    emotion_words: int = 8
    proportions: tuple[float, float, float] = (0.25, 0.5, 0.25)
    seed: int = 0
    d: int = 32
    n_frames: int = 4
    corpus_extra: int = 2      # sibling corpus entries per sample
    noise: float = 0.05

    def __post_init__(self):
        if self.samples < 1:
            raise UsageError("samples must be >= 1")
        if abs(sum(self.proportions) - 1.0) > 1e-9:
            raise UsageError(
                f"bias proportions must sum to 1, got {self.proportions} "
                f"(sum {sum(self.proportions)})")
        if self.emotion_words < 0:
            raise UsageError("emotion_words must be >= 0")


def _label_counts(spec: SynthSpec) -> tuple[int, int, int]:
    """Largest-remainder split of samples into the three bias labels."""
    raw = [p * spec.samples for p in spec.proportions]
    counts = [int(np.floor(x)) for x in raw]
    remainder = spec.samples - sum(counts)
    order = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return tuple(counts)


def _pool_slice(pool: list[str], count: int) -> list[str]:
    out = list(pool)
    suffix = 2
    while len(out) < count:
        out.extend(f"{w}{suffix}" for w in pool)
        suffix += 1
    return out[:count]


def synth_dataset(spec: SynthSpec, emotion_lexicon: list[str]
                  ) -> tuple[list[SampleRecord], list[CorpusEntry], list[str]]:
    """Deterministic dataset + corpus whose captions realize the requested
    bias proportions exactly under the ratio rule.

    Frames sit near the caption triplet's embedding (plus seeded noise)
    and each triplet maps to a fixed emotion word, so retrieval and
    emotion supervision are learnable at desk scale. Returns (records,
    corpus entries, emotion words used).
    """
    if spec.emotion_words > len(emotion_lexicon):
        raise UsageError(
            f"requested {spec.emotion_words} emotion words but the lexicon has "
            f"{len(emotion_lexicon)}")
    emotions = list(emotion_lexicon[:spec.emotion_words])
    rng = np.random.default_rng(spec.seed)
    table = EmbeddingTable(d=spec.d, seed=spec.seed)

    n_subj = max(2, spec.vocab_size // 3)
    n_verb = max(2, spec.vocab_size // 3)
    n_obj = max(2, spec.vocab_size - n_subj - n_verb)
    subjects = _pool_slice(_SUBJECTS, n_subj)
    verbs = _pool_slice(_VERBS, n_verb)
    objects = _pool_slice(_OBJECTS, n_obj)

    n_emo, n_neutral, n_fact = _label_counts(spec)
    labels = [0] * n_emo + [1] * n_neutral + [2] * n_fact
    rng.shuffle(labels)

    records: list[SampleRecord] = []
    corpus: list[CorpusEntry] = []
    for idx, label in enumerate(labels):
        s = subjects[int(rng.integers(len(subjects)))]
        v = verbs[int(rng.integers(len(verbs)))]
        o = objects[int(rng.integers(len(objects)))]
        triplet = Triplet(s, v, o)
        if emotions:
            emo = emotions[(subjects.index(s) * 31 + verbs.index(v) * 7
                            + objects.index(o)) % len(emotions)]
        else:
            emo = None
        filler = _FILLERS[idx % len(_FILLERS)]
        filler2 = _FILLERS[(idx + 5) % len(_FILLERS)]
        if label == 0 and emo:
            # 5 tokens, 1 emotion word: ratio 0.2 > 1/6
            caption = f"{s} {v} {o} {emo} {filler}"
        elif label == 1 and emo:
            # 8 tokens, 1 emotion word: ratio 0.125 in [1/10, 1/6]
            caption = f"the {s} {v} the {o} {emo} {filler} {filler2}"
        else:
            # no emotion words: ratio 0 < 1/10
            caption = f"the {s} {v} the {o} {filler} {filler2}"
        video_id = f"v{idx:04d}"
        triplet_vec = encode_triplet(triplet, table, prefix="").mean(axis=0)
        frames = (np.tile(triplet_vec, (spec.n_frames, 1))
                  + spec.noise * rng.standard_normal((spec.n_frames, spec.d)))
        records.append(SampleRecord(
            sample_id=f"s{idx:04d}",
            video_id=video_id,
            frames=frames,
            caption=caption,
            emotion_words=[emo] if (emo and emo in caption.split()) else [],
            triplet=triplet,
        ))
        corpus.append(CorpusEntry(
            entry_id=f"c{idx:04d}-0",
            video_id=video_id,
            sentence=caption,
            triplet=triplet,
            embedding=encode_text(tokenize(caption), table),
        ))
        for j in range(spec.corpus_extra):
            alt_filler = _FILLERS[(idx + j + 1) % len(_FILLERS)]
            if emo:
                sentence = f"{s} {v} {o} {emo} {alt_filler}"
            else:
                sentence = f"{s} {v} {o} {alt_filler}"
            corpus.append(CorpusEntry(
                entry_id=f"c{idx:04d}-{j + 1}",
                video_id=f"aux-{idx:04d}-{j}",
                sentence=sentence,
                triplet=triplet,
                embedding=encode_text(tokenize(sentence), table),
            ))
    return records, corpus, emotions


def write_synth(spec: SynthSpec, emotion_lexicon: list[str], out_dir: str
                ) -> tuple[str, str, str]:
    """Generate and write dataset.jsonl, corpus.jsonl, and emotions.txt."""
    records, corpus, emotions = synth_dataset(spec, emotion_lexicon)
    os.makedirs(out_dir, exist_ok=True)
    dataset_path = os.path.join(out_dir, "dataset.jsonl")
    corpus_path = os.path.join(out_dir, "corpus.jsonl")
    emotions_path = os.path.join(out_dir, "emotions.txt")
    save_dataset(records, dataset_path)
    save_corpus(corpus, corpus_path)
    with open(emotions_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(emotions) + ("\n" if emotions else ""))
    return dataset_path, corpus_path, emotions_path
