"""Progressive emotion augmentation: mine candidate emotions from the
dictionary with factual semantics, build a row-stochastic visual query
map, and filter candidates into per-group emotional semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, UsageError


@dataclass
class EmotionParams:
    """Bias-free d -> d projections for facts, video, and candidates."""

    phi_f: Tensor
    phi_v: Tensor
    phi_e: Tensor

    def named(self) -> dict[str, Tensor]:
        return {
            "pvea.phi_f": self.phi_f,
            "pvea.phi_v": self.phi_v,
            "pvea.phi_e": self.phi_e,
        }


def mine_candidates(factual_i: Tensor, dictionary: Tensor) -> Tensor:
    """Attend factual semantics over the emotion dictionary embeddings.

    Every output row is a convex combination of dictionary rows.
    """
    if dictionary.data.shape[0] < 1:
        raise UsageError("emotion dictionary must have at least one row")
    return ad.cross_attention(factual_i, dictionary, dictionary)


def visual_query(factual_i: Tensor, video: Tensor, params: EmotionParams) -> Tensor:
    """Row-stochastic N x N map from projected facts against projected frames."""
    if factual_i.data.shape != video.data.shape:
        raise UsageError(
            f"factual/video shapes differ: {factual_i.shape} vs {video.shape}")
    scores = ad.matmul(ad.matmul(factual_i, params.phi_f),
                       ad.transpose(ad.matmul(video, params.phi_v)))
    return ad.softmax(scores, axis=1)


def augment_emotion(query_map: Tensor, candidates: Tensor,
                    params: EmotionParams) -> Tensor:
    """Filter projected candidates through the visual query map."""
    if query_map.data.shape[1] != candidates.data.shape[0]:
        raise UsageError(
            f"query map {query_map.shape} does not match candidates {candidates.shape}")
    return ad.matmul(query_map, ad.matmul(candidates, params.phi_e))


def mine_augment(factual_i: Tensor, video: Tensor, dictionary: Tensor,
                 params: EmotionParams) -> Tensor:
    """Full per-group pass: candidates -> visual query -> augmented emotions."""
    candidates = mine_candidates(factual_i, dictionary)
    q_v = visual_query(factual_i, video, params)
    return augment_emotion(q_v, candidates, params)


def emotion_distribution(emotions_i: np.ndarray, dictionary: np.ndarray) -> np.ndarray:
    """Diagnostic softmax over dictionary similarities of the pooled emotions.

    Plain numpy; reported by the CLI, never part of the training graph.
    """
    pooled = np.asarray(emotions_i, dtype=np.float64).mean(axis=0)
    logits = np.asarray(dictionary, dtype=np.float64) @ pooled
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()
