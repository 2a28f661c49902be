"""Query-based aggregation of the multimodal representation into a fixed
number of decoder-readable vectors, plus a small autoregressive decoder
with greedy and length-normalized beam decoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, UsageError
from .embeddings import EmotionDictionary

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)

_MASK_VALUE = -1e9


class Vocabulary:
    """Ordered token list with special tokens and emotion membership flags."""

    def __init__(self, words: list[str], emotions: EmotionDictionary):
        seen = dict.fromkeys(w for w in words if w not in SPECIALS)
        self.tokens: list[str] = list(SPECIALS) + list(seen)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self._index[PAD]
        self.bos_id = self._index[BOS]
        self.eos_id = self._index[EOS]
        self.unk_id = self._index[UNK]
        self.emotion_flags = np.array([t in emotions for t in self.tokens], dtype=bool)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self._index.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def caption(self, ids: list[int]) -> str:
        return " ".join(t for t in self.decode(ids) if t not in SPECIALS)


def build_vocabulary(sentences: list[list[str]], emotions: EmotionDictionary) -> Vocabulary:
    """Vocabulary over every word in the corpus, sorted for stability."""
    words = sorted({tok for sent in sentences for tok in sent})
    return Vocabulary(words, emotions)


# ---------------------------------------------------------------------------
# Q-former


@dataclass
class QFormerParams:
    """Learnable queries plus query/key maps; values stay unprojected so
    attention outputs remain convex combinations of the raw rows."""

    queries: Tensor   # N_q x d
    self_wq: Tensor   # d x d
    self_wk: Tensor   # d x d
    cross_wq: Tensor  # d x d
    cross_wk: Tensor  # d x d
    phi_m: Tensor     # d x d output map

    def named(self) -> dict[str, Tensor]:
        return {
            "qformer.q": self.queries,
            "qformer.self.wq": self.self_wq,
            "qformer.self.wk": self.self_wk,
            "qformer.cross.wq": self.cross_wq,
            "qformer.cross.wk": self.cross_wk,
            "qformer.phi_m": self.phi_m,
        }


def qformer_aggregate(multimodal: Tensor, video: Tensor, params: QFormerParams) -> Tensor:
    """Aggregate the 2N multimodal rows and N video rows into N_q outputs.

    Self-attention over the queries plus residual, then cross-attention
    over the stacked key/value rows plus residual, then the output map.
    """
    if multimodal.data.shape[1] != video.data.shape[1]:
        raise UsageError(
            f"multimodal width {multimodal.shape} differs from video width {video.shape}")
    q = params.queries
    refined = ad.add(ad.cross_attention(ad.matmul(q, params.self_wq),
                                        ad.matmul(q, params.self_wk), q), q)
    kv = ad.concat([multimodal, video], axis=0)
    attended = ad.cross_attention(ad.matmul(refined, params.cross_wq),
                                  ad.matmul(kv, params.cross_wk), kv)
    return ad.matmul(ad.add(attended, refined), params.phi_m)


# ---------------------------------------------------------------------------
# decoder


@dataclass
class DecoderParams:
    tok_emb: Tensor    # vocab x d
    pos_emb: Tensor    # (max_len + 1) x d
    self_wq: Tensor
    self_wk: Tensor
    self_wv: Tensor
    cross_wq: Tensor
    cross_wk: Tensor
    cross_wv: Tensor
    out_w: Tensor      # d x vocab
    out_b: Tensor      # vocab

    def named(self) -> dict[str, Tensor]:
        return {
            "decoder.tok_emb": self.tok_emb,
            "decoder.pos_emb": self.pos_emb,
            "decoder.self.wq": self.self_wq,
            "decoder.self.wk": self.self_wk,
            "decoder.self.wv": self.self_wv,
            "decoder.cross.wq": self.cross_wq,
            "decoder.cross.wk": self.cross_wk,
            "decoder.cross.wv": self.cross_wv,
            "decoder.out_w": self.out_w,
            "decoder.out_b": self.out_b,
        }


def _causal_mask(t: int) -> Tensor:
    mask = np.triu(np.full((t, t), _MASK_VALUE), k=1)
    return Tensor(mask)


def decoder_logits(input_ids, memory: Tensor, params: DecoderParams) -> Tensor:
    """Per-step vocabulary logits for a token prefix, conditioned on memory.

    Step t's logits depend only on tokens before or at t (causal mask)
    and on the memory rows.
    """
    ids = np.asarray(input_ids, dtype=np.int64)
    t = ids.shape[0]
    if t < 1:
        raise UsageError("decoder needs at least one input token")
    if t > params.pos_emb.data.shape[0]:
        raise UsageError(
            f"prefix length {t} exceeds positional table {params.pos_emb.data.shape[0]}")
    x = ad.add(ad.take_rows(params.tok_emb, ids),
               ad.take_rows(params.pos_emb, np.arange(t)))
    scale = Tensor(1.0 / np.sqrt(x.data.shape[1]))
    scores = ad.add(ad.mul(ad.matmul(ad.matmul(x, params.self_wq),
                                     ad.transpose(ad.matmul(x, params.self_wk))), scale),
                    _causal_mask(t))
    attended = ad.matmul(ad.softmax(scores, axis=1), ad.matmul(x, params.self_wv))
    h = ad.add(x, attended)
    crossed = ad.cross_attention(ad.matmul(h, params.cross_wq),
                                 ad.matmul(memory, params.cross_wk),
                                 ad.matmul(memory, params.cross_wv))
    h = ad.add(h, crossed)
    return ad.add(ad.matmul(h, params.out_w), params.out_b)


def _step_log_probs(prefix: list[int], memory: Tensor, params: DecoderParams) -> np.ndarray:
    logits = decoder_logits(prefix, memory, params)
    row = logits.data[-1]
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def decode_greedy(memory: Tensor, params: DecoderParams, vocab: Vocabulary,
                  max_len: int = 15) -> list[int]:
    """Argmax decoding from <bos> until <eos> or max_len generated tokens.

    Deterministic; ties resolve to the lowest token index. Returns the
    generated ids without <bos>/<eos>.
    """
    prefix = [vocab.bos_id]
    out: list[int] = []
    for _ in range(max_len):
        logp = _step_log_probs(prefix, memory, params)
        nxt = int(np.argmax(logp))
        if nxt == vocab.eos_id:
            break
        out.append(nxt)
        prefix.append(nxt)
    return out


@dataclass
class BeamHypothesis:
    ids: tuple[int, ...]     # generated ids, <eos> excluded
    log_prob: float          # sum over generated steps, <eos> included
    steps: int               # generated steps, <eos> included
    finished: bool

    @property
    def score(self) -> float:
        return self.log_prob / max(self.steps, 1)


def decode_beam(memory: Tensor, params: DecoderParams, vocab: Vocabulary,
                beam: int = 5, max_len: int = 15) -> tuple[list[int], list[BeamHypothesis]]:
    """Length-normalized beam search.

    Returns the best hypothesis' ids and the final beam sorted by
    non-increasing score; ties resolve lexicographically on the ids, so
    beam=1 reproduces greedy decoding exactly.
    """
    if beam < 1:
        raise UsageError(f"beam width must be >= 1, got {beam}")

    def sort_key(h: BeamHypothesis):
        # emitted-token order; finished hypotheses count their <eos>, so a
        # score tie resolves to the lowest next-token index, matching greedy
        emitted = h.ids + ((vocab.eos_id,) if h.finished else ())
        return (-h.score, emitted)

    live = [BeamHypothesis(ids=(), log_prob=0.0, steps=0, finished=False)]
    done: list[BeamHypothesis] = []
    for _ in range(max_len):
        if not live:
            break
        candidates = list(done)
        for hyp in live:
            logp = _step_log_probs([vocab.bos_id, *hyp.ids], memory, params)
            for tok in range(len(vocab)):
                if tok == vocab.eos_id:
                    candidates.append(BeamHypothesis(
                        ids=hyp.ids, log_prob=hyp.log_prob + logp[tok],
                        steps=hyp.steps + 1, finished=True))
                else:
                    candidates.append(BeamHypothesis(
                        ids=hyp.ids + (tok,), log_prob=hyp.log_prob + logp[tok],
                        steps=hyp.steps + 1, finished=False))
        candidates.sort(key=sort_key)
        kept = candidates[:beam]
        done = [h for h in kept if h.finished]
        live = [h for h in kept if not h.finished]
    final = done + [BeamHypothesis(h.ids, h.log_prob, h.steps, True) for h in live]
    final.sort(key=sort_key)
    final = final[:beam]
    return list(final[0].ids), final
