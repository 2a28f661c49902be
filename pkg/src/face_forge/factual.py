"""Factual calibration: entropy-based self-refinement of triplet
components, similarity-mass cross-refinement across triplets, and
attention fusion of calibrated triplets with video content.

Refinement weights are computed, not learned; gradients flow through
them to the triplet features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, UsageError

SIMILARITY_FLOOR = 1e-6


@dataclass
class SelfRefinement:
    alpha: Tensor       # K x 3, rows sum to 1
    refined: Tensor     # K x 3 x d


@dataclass
class CrossRefinement:
    mass: Tensor        # K, similarity shares, sums to 1
    theta: Tensor       # K, entropy-contribution weights, sums to 1
    calibrated: Tensor  # K x 3 x d


def self_refine(components: Tensor) -> SelfRefinement:
    """Reweight each triplet's S/P/O rows by normalized softmax entropy.

    For triplet i and component c: p = softmax over the d feature
    entries, H = Shannon entropy of p in nats, alpha_i_c = H divided by
    the triplet's entropy total, refined = alpha * components.
    """
    if components.data.ndim != 3 or components.data.shape[1] != 3:
        raise UsageError(f"expected a K x 3 x d tensor, got shape {components.shape}")
    if components.data.shape[2] < 2:
        raise UsageError("component feature width must be at least 2")
    p = ad.softmax(components, axis=2)
    entropy = ad.neg(ad.tsum(ad.mul(p, ad.log(p)), axis=2))          # K x 3
    alpha = ad.div(entropy, ad.tsum(entropy, axis=1, keepdims=True))  # K x 3
    k, _, d = components.data.shape
    refined = ad.mul(ad.reshape(alpha, (k, 3, 1)), components)
    return SelfRefinement(alpha=alpha, refined=refined)


def cross_refine(refined: Tensor, similarities: Tensor) -> CrossRefinement:
    """Reweight whole triplets by their share of the total similarity mass.

    Scores are floored at 1e-6, normalized into shares p, and each
    triplet's weight is its entropy contribution -p log p normalized
    over the group. The single-triplet case degenerates to weight 1.
    """
    if refined.data.ndim != 3:
        raise UsageError(f"expected a K x 3 x d tensor, got shape {refined.shape}")
    k = refined.data.shape[0]
    if similarities.data.shape != (k,):
        raise UsageError(
            f"similarity vector shape {similarities.shape} does not match K={k}")
    if not np.all(np.isfinite(similarities.data)):
        raise UsageError("similarities must be finite")
    floored = ad.clamp_min(similarities, SIMILARITY_FLOOR)
    mass = ad.div(floored, ad.tsum(floored))
    if k == 1:
        theta = Tensor(np.ones(1))
    else:
        contrib = ad.neg(ad.mul(mass, ad.log(mass)))
        theta = ad.div(contrib, ad.tsum(contrib))
    calibrated = ad.mul(ad.reshape(theta, (k, 1, 1)), refined)
    return CrossRefinement(mass=mass, theta=theta, calibrated=calibrated)


@dataclass
class FactualParams:
    """Fusion parameters shared across retrieval groups."""

    w_t: Tensor       # d x d triplet projection
    ffn_w1: Tensor    # 2d x 2d
    ffn_b1: Tensor    # 2d
    ffn_w2: Tensor    # 2d x d
    ffn_b2: Tensor    # d
    ln_gain: Tensor   # d
    ln_bias: Tensor   # d

    def named(self) -> dict[str, Tensor]:
        return {
            "fcue.w_t": self.w_t,
            "fcue.ffn.w1": self.ffn_w1,
            "fcue.ffn.b1": self.ffn_b1,
            "fcue.ffn.w2": self.ffn_w2,
            "fcue.ffn.b2": self.ffn_b2,
            "fcue.ln.gain": self.ln_gain,
            "fcue.ln.bias": self.ln_bias,
        }


def fuse_factual(video: Tensor, calibrated_i: Tensor,
                 params: FactualParams) -> tuple[Tensor, Tensor]:
    """Fuse one calibrated triplet with the video frames.

    Returns (hidden, factual): hidden rows attend the frames over the
    projected triplet rows; factual adds a feature-axis concat + FFN +
    residual + layer norm on top.
    """
    if video.data.ndim != 2:
        raise UsageError(f"video features must be N x d, got shape {video.shape}")
    if calibrated_i.data.ndim != 2 or calibrated_i.data.shape[0] != 3:
        raise UsageError(f"calibrated triplet must be 3 x d, got shape {calibrated_i.shape}")
    kv = ad.matmul(calibrated_i, params.w_t)
    hidden = ad.cross_attention(video, kv, kv)
    fused = ad.concat([video, hidden], axis=1)
    mapped = ad.ffn(fused, params.ffn_w1, params.ffn_b1, params.ffn_w2, params.ffn_b2)
    factual = ad.layer_norm(ad.add(mapped, video), axis=1,
                            gain=params.ln_gain, bias=params.ln_bias)
    return hidden, factual
