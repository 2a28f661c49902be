"""Caption quality metrics and the emotion-ratio bias statistics tool.

BLEU is corpus-level modified n-gram precision with a brevity penalty
and no smoothing. ROUGE-L is the LCS F-measure with beta = 1.2. The
consensus metric is the TF-IDF n-gram cosine over n = 1..4, scaled by
10. The emotion accuracy and hybrid definitions are adopted
conventions; every report names the combiner so alternates can be
swapped in.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

from .autodiff import UsageError
from .embeddings import EmotionDictionary, tokenize

log = logging.getLogger(__name__)

ROUGE_BETA = 1.2
T1_DEFAULT = 1.0 / 6.0
T2_DEFAULT = 1.0 / 10.0

EMOTIONAL = "emotional-bias"
NEUTRAL = "neutral"
FACTUAL = "factual-bias"


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU


def bleu_n(candidates: list[list[str]], references: list[list[list[str]]],
           n: int) -> float:
    """Corpus BLEU at order n: geometric mean of clipped precisions for
    orders 1..n times the brevity penalty. Any zero precision gives 0."""
    if n not in (1, 2, 3, 4):
        raise UsageError(f"BLEU order must be in 1..4, got {n}")
    if not candidates or len(candidates) != len(references):
        raise UsageError("need equal, non-empty candidate and reference lists")
    matched = [0] * n
    totals = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise UsageError("every candidate needs at least one reference")
        cand_len += len(cand)
        # closest reference length; ties go to the shorter one
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for k in range(1, n + 1):
            counts = _ngrams(cand, k)
            max_ref = Counter()
            for ref in refs:
                for gram, c in _ngrams(ref, k).items():
                    max_ref[gram] = max(max_ref[gram], c)
            totals[k - 1] += sum(counts.values())
            matched[k - 1] += sum(min(c, max_ref[gram]) for gram, c in counts.items())
    if any(t == 0 for t in totals) or any(m == 0 for m in matched):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matched, totals)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    return bp * math.exp(log_prec)


# ---------------------------------------------------------------------------
# ROUGE-L


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str],
            beta: float = ROUGE_BETA) -> float:
    """LCS-based F-measure favoring recall via beta."""
    if not candidate or not reference:
        raise UsageError("ROUGE-L needs non-empty token sequences")
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    denom = recall + beta * beta * precision
    return (1.0 + beta * beta) * recall * precision / denom


def corpus_rouge_l(candidates: list[list[str]],
                   references: list[list[list[str]]]) -> float:
    """Mean over samples of the best F against any reference."""
    if not candidates or len(candidates) != len(references):
        raise UsageError("need equal, non-empty candidate and reference lists")
    scores = []
    for cand, refs in zip(candidates, references):
        scores.append(max(rouge_l(cand, ref) for ref in refs))
    return sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# consensus TF-IDF metric


def cider(candidates: list[list[str]], references: list[list[list[str]]],
          max_n: int = 4) -> float:
    """Mean over n of the reference-averaged TF-IDF n-gram cosine, x10.

    Document frequency counts reference sets containing each n-gram;
    IDF is log(N / df). A lone document makes every IDF zero; that
    degenerate case is computed anyway, with a warning.
    """
    if not candidates or len(candidates) != len(references):
        raise UsageError("need equal, non-empty candidate and reference lists")
    n_docs = len(candidates)
    if n_docs < 2:
        log.warning("consensus metric over %d document(s): IDF is degenerate", n_docs)
    df: list[Counter] = [Counter() for _ in range(max_n)]
    for refs in references:
        for k in range(1, max_n + 1):
            seen = set()
            for ref in refs:
                seen.update(_ngrams(ref, k).keys())
            for gram in seen:
                df[k - 1][gram] += 1

    def tfidf(tokens: list[str], k: int) -> dict:
        counts = _ngrams(tokens, k)
        return {g: c * (math.log(n_docs) - math.log(max(df[k - 1][g], 1)))
                for g, c in counts.items()}

    def cosine(u: dict, v: dict) -> float:
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        dot = sum(u[g] * v[g] for g in u.keys() & v.keys())
        return dot / (nu * nv)

    total = 0.0
    for cand, refs in zip(candidates, references):
        per_n = []
        for k in range(1, max_n + 1):
            cand_vec = tfidf(cand, k)
            sims = [cosine(cand_vec, tfidf(ref, k)) for ref in refs]
            per_n.append(sum(sims) / len(sims))
        total += sum(per_n) / max_n
    return 10.0 * total / n_docs


# ---------------------------------------------------------------------------
# emotion accuracy and hybrids


def emotion_accuracy(candidates: list[list[str]],
                     references: list[list[list[str]]],
                     dictionary: EmotionDictionary) -> tuple[float, float]:
    """(acc_sw, acc_c) over the corpus.

    acc_sw pools generated emotion-word tokens and counts the fraction
    found in the reference emotion-word set; captions with no generated
    emotion words add nothing to the denominator. acc_c counts captions
    whose generated emotion-word set intersects the reference's, with
    both-empty counting as correct.
    """
    matched_tokens = 0
    total_tokens = 0
    correct_captions = 0
    for cand, refs in zip(candidates, references):
        gen_emotions = [t for t in cand if t in dictionary]
        ref_emotions = {t for ref in refs for t in ref if t in dictionary}
        total_tokens += len(gen_emotions)
        matched_tokens += sum(1 for t in gen_emotions if t in ref_emotions)
        if gen_emotions or ref_emotions:
            if set(gen_emotions) & ref_emotions:
                correct_captions += 1
        else:
            correct_captions += 1
    acc_sw = matched_tokens / total_tokens if total_tokens else 0.0
    acc_c = correct_captions / len(candidates) if candidates else 0.0
    return acc_sw, acc_c


def _harmonic(a: float, b: float) -> float:
    return 2.0 * a * b / (a + b) if (a + b) > 0 else 0.0


COMBINERS = {"harmonic": _harmonic}


@dataclass
class MetricReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    rouge_l: float
    cider: float
    acc_sw: float
    acc_c: float
    bfs: float = 0.0
    cfs: float = 0.0
    combiner: str = "harmonic"
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bleu_1": self.bleu_1, "bleu_2": self.bleu_2,
            "bleu_3": self.bleu_3, "bleu_4": self.bleu_4,
            "rouge_l": self.rouge_l, "cider": self.cider,
            "acc_sw": self.acc_sw, "acc_c": self.acc_c,
            "bfs": self.bfs, "cfs": self.cfs,
            "combiner": self.combiner, "notes": self.notes,
        }


def hybrid_scores(report: MetricReport, combiner: str = "harmonic") -> tuple[float, float]:
    """Combine n-gram quality with caption-level emotion accuracy."""
    if combiner not in COMBINERS:
        raise UsageError(f"unknown combiner {combiner!r}; expected one of {sorted(COMBINERS)}")
    fn = COMBINERS[combiner]
    bleu_mean = (report.bleu_1 + report.bleu_2 + report.bleu_3 + report.bleu_4) / 4.0
    bfs = fn(bleu_mean, report.acc_c)
    cfs = fn(min(report.cider / 10.0, 1.0), report.acc_c)
    return bfs, cfs


def evaluate_captions(candidates: list[list[str]],
                      references: list[list[list[str]]],
                      dictionary: EmotionDictionary,
                      combiner: str = "harmonic") -> MetricReport:
    """Full metric report for aligned candidate/reference lists."""
    acc_sw, acc_c = emotion_accuracy(candidates, references, dictionary)
    report = MetricReport(
        bleu_1=bleu_n(candidates, references, 1),
        bleu_2=bleu_n(candidates, references, 2),
        bleu_3=bleu_n(candidates, references, 3),
        bleu_4=bleu_n(candidates, references, 4),
        rouge_l=corpus_rouge_l(candidates, references),
        cider=cider(candidates, references),
        acc_sw=acc_sw,
        acc_c=acc_c,
        combiner=combiner,
        notes=["emotion accuracy counts word tokens; hybrid formulas are "
               "adopted conventions named by the combiner field"],
    )
    report.bfs, report.cfs = hybrid_scores(report, combiner)
    return report


# ---------------------------------------------------------------------------
# bias statistics


@dataclass
class BiasReport:
    t1: float
    t2: float
    counts: dict[str, int]
    proportions: dict[str, float]
    video_labels: dict[str, str]
    caption_labels: list[dict]

    def to_dict(self) -> dict:
        return {
            "t1": self.t1, "t2": self.t2,
            "counts": self.counts, "proportions": self.proportions,
            "video_labels": self.video_labels,
            "caption_labels": self.caption_labels,
        }


def classify_bias(caption: str, dictionary: EmotionDictionary,
                  t1: float = T1_DEFAULT, t2: float = T2_DEFAULT) -> str:
    """Label a caption by its emotion-word ratio.

    Ratios strictly above t1 are emotional-bias, strictly below t2 are
    factual-bias; boundary values are neutral.
    """
    tokens = tokenize(caption)
    if not tokens:
        raise UsageError("cannot classify an empty caption")
    ratio = sum(1 for t in tokens if t in dictionary) / len(tokens)
    if ratio > t1:
        return EMOTIONAL
    if ratio < t2:
        return FACTUAL
    return NEUTRAL


def bias_report(records, dictionary: EmotionDictionary,
                t1: float = T1_DEFAULT, t2: float = T2_DEFAULT) -> BiasReport:
    """Label every caption, aggregate to per-video majority labels, and
    report label proportions over videos. Majority ties are neutral."""
    if t2 >= t1:
        raise UsageError(f"thresholds must satisfy t2 < t1, got t1={t1}, t2={t2}")
    records = list(records)
    if not records:
        raise UsageError("bias_report needs at least one record")
    caption_labels = []
    by_video: dict[str, list[str]] = {}
    for rec in records:
        label = classify_bias(rec.caption, dictionary, t1, t2)
        caption_labels.append({"id": rec.sample_id, "video_id": rec.video_id,
                               "label": label})
        by_video.setdefault(rec.video_id, []).append(label)
    video_labels: dict[str, str] = {}
    for video_id in sorted(by_video):
        tally = Counter(by_video[video_id])
        best = tally.most_common()
        if len(best) > 1 and best[0][1] == best[1][1]:
            video_labels[video_id] = NEUTRAL
        else:
            video_labels[video_id] = best[0][0]
    counts = {EMOTIONAL: 0, NEUTRAL: 0, FACTUAL: 0}
    for label in video_labels.values():
        counts[label] += 1
    n_videos = len(video_labels)
    proportions = {name: counts[name] / n_videos for name in counts}
    return BiasReport(t1=t1, t2=t2, counts=counts, proportions=proportions,
                      video_labels=video_labels, caption_labels=caption_labels)
