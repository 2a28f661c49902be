"""Shared builders and oracles for the test suite."""

import numpy as np

from face_forge.autodiff import Tensor
from face_forge.embeddings import EmotionDictionary, deterministic_embedding
from face_forge.generation import DecoderParams, QFormerParams, Vocabulary


def make_emotions(words, d=6, seed=0):
    matrix = np.stack([deterministic_embedding(w, seed, d) for w in words])
    return EmotionDictionary(words=list(words), matrix=matrix)


def make_qformer(rng, d, n_q, identity_out=False):
    def mat():
        return rng.standard_normal((d, d)) * 0.4
    return QFormerParams(
        queries=Tensor(rng.standard_normal((n_q, d)), requires_grad=True),
        self_wq=Tensor(mat(), requires_grad=True),
        self_wk=Tensor(mat(), requires_grad=True),
        cross_wq=Tensor(mat(), requires_grad=True),
        cross_wk=Tensor(mat(), requires_grad=True),
        phi_m=Tensor(np.eye(d) if identity_out else mat(), requires_grad=True),
    )


def make_decoder(rng, vocab_size, d, max_len, scale=0.8):
    def mat():
        return rng.standard_normal((d, d)) * scale
    return DecoderParams(
        tok_emb=Tensor(rng.standard_normal((vocab_size, d)) * scale, requires_grad=True),
        pos_emb=Tensor(rng.standard_normal((max_len + 1, d)) * scale, requires_grad=True),
        self_wq=Tensor(mat(), requires_grad=True),
        self_wk=Tensor(mat(), requires_grad=True),
        self_wv=Tensor(mat(), requires_grad=True),
        cross_wq=Tensor(mat(), requires_grad=True),
        cross_wk=Tensor(mat(), requires_grad=True),
        cross_wv=Tensor(mat(), requires_grad=True),
        out_w=Tensor(rng.standard_normal((d, vocab_size)) * scale, requires_grad=True),
        out_b=Tensor(rng.standard_normal(vocab_size) * 0.1, requires_grad=True),
    )


def enumerate_best(memory, params, vocab: Vocabulary, max_len: int):
    """Oracle: score every possible sequence, pick the best with the same
    length-normalized score and tie-break as the beam search."""
    from face_forge.generation import _step_log_probs

    best = None

    def visit(ids, log_prob, steps):
        nonlocal best
        logp = _step_log_probs([vocab.bos_id, *ids], memory, params)
        for tok in range(len(vocab)):
            total = log_prob + logp[tok]
            if tok == vocab.eos_id:
                cand = (-(total / (steps + 1)), ids + (vocab.eos_id,), ids)
                if best is None or cand < best:
                    best = cand
            elif steps + 1 == max_len:
                cand = (-(total / (steps + 1)), ids + (tok,), ids + (tok,))
                if best is None or cand < best:
                    best = cand
            else:
                visit(ids + (tok,), total, steps + 1)

    visit((), 0.0, 0)
    return list(best[2])


def brute_force_topk(entries, query, k, exclude_video=None):
    """Independent retrieval oracle: per-entry cosine, full sort, id tie-break."""
    scored = []
    for e in entries:
        if exclude_video is not None and e.video_id == exclude_video:
            continue
        num = float(np.dot(e.embedding, query))
        den = float(np.linalg.norm(e.embedding) * np.linalg.norm(query))
        scored.append((-num / den, e.entry_id))
    scored.sort()
    return [eid for _, eid in scored[:k]]
