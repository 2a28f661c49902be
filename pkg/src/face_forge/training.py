"""Optimization stack: emotion-weighted cross-entropy, emotion
classification loss, Adam, and the deterministic training loop.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, UsageError, backward
from .generation import decoder_logits
from .model import AblationToggles, CaptionModel, PreparedSample
from .routing import route_weighted_sum

log = logging.getLogger(__name__)

# per-dataset-profile (delta, lambda_e, lambda_cls)
PROFILES = {
    "msvd": (0.1, 1.0, 0.1),
    "ve": (0.2, 1.0, 0.5),
    "combine": (0.1, 1.0, 0.2),
}


class TrainingError(RuntimeError):
    """Raised when the loop hits a non-finite loss or unusable inputs."""


@dataclass
class TrainConfig:
    profile: str = "msvd"
    delta: float = 0.1
    lambda_e: float = 1.0
    lambda_cls: float = 0.1
    lr: float = 7e-4
    batch_size: int = 32
    max_steps: int = 2000
    seed: int = 0
    k: int = 4
    order: str = "fact-first"
    toggles: AblationToggles = field(default_factory=AblationToggles)
    checkpoint_every: int = 0      # 0: checkpoint only at the end
    stop_loss: float | None = None

    def __post_init__(self):
        if self.delta < 0 or self.lambda_e < 0 or self.lambda_cls < 0:
            raise UsageError("delta, lambda_e, and lambda_cls must be nonnegative")
        if self.k < 1:
            raise UsageError(f"k must be >= 1, got {self.k}")

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "TrainConfig":
        if profile not in PROFILES:
            raise UsageError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        delta, lambda_e, lambda_cls = PROFILES[profile]
        base = cls(profile=profile, delta=delta, lambda_e=lambda_e, lambda_cls=lambda_cls)
        return replace(base, **overrides) if overrides else base


# ---------------------------------------------------------------------------
# losses


def emotion_focused_ce(logits: Tensor, targets, emotion_flags: np.ndarray,
                       delta: float, pad_id: int | None = None) -> Tensor:
    """Token cross-entropy summed over steps, with emotion-word targets
    weighted by (1 + delta). Pad steps are excluded."""
    idx = np.asarray(targets, dtype=np.int64)
    vocab_size = logits.data.shape[1]
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= vocab_size:
        raise UsageError(f"target ids out of vocabulary range [0, {vocab_size})")
    if idx.shape[0] != logits.data.shape[0]:
        raise UsageError(
            f"target length {idx.shape[0]} does not match {logits.data.shape[0]} logit rows")
    weights = np.where(emotion_flags[idx], 1.0 + delta, 1.0)
    if pad_id is not None:
        weights = np.where(idx == pad_id, 0.0, weights)
    picked = ad.pick(ad.log_softmax(logits, axis=1), idx)
    return ad.neg(ad.tsum(ad.mul(picked, Tensor(weights))))


def emotion_cls_loss(emotion_groups: list[Tensor], routes: Tensor,
                     head_w: Tensor, head_b: Tensor, target_indices) -> Tensor:
    """Negative log-likelihood of the caption's emotion words under the
    classification head applied to the route-weighted, frame-pooled
    emotion features. An empty target set contributes exactly 0."""
    n_words = head_w.data.shape[1]
    targets = list(target_indices)
    if any(t < 0 or t >= n_words for t in targets):
        raise UsageError(f"emotion targets out of dictionary range [0, {n_words})")
    if not targets:
        return Tensor(0.0)
    weighted = route_weighted_sum(emotion_groups, routes)
    pooled = ad.reshape(ad.tmean(weighted, axis=0), (1, weighted.data.shape[1]))
    logp = ad.log_softmax(ad.add(ad.matmul(pooled, head_w), head_b), axis=1)
    mask = np.zeros((1, n_words))
    mask[0, targets] = 1.0
    return ad.neg(ad.tsum(ad.mul(logp, Tensor(mask))))


def total_loss(loss_e: Tensor, loss_cls: Tensor,
               lambda_e: float, lambda_cls: float) -> Tensor:
    return ad.add(ad.mul(loss_e, Tensor(lambda_e)), ad.mul(loss_cls, Tensor(lambda_cls)))


def sample_losses(model: CaptionModel, sample: PreparedSample,
                  config: TrainConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Forward one sample under teacher forcing; returns (L, L_e, L_cls)."""
    state = model.forward(sample)
    inputs = [model.vocab.bos_id] + sample.target_ids[:-1]
    logits = decoder_logits(inputs, state.memory, model.decoder)
    loss_e = emotion_focused_ce(logits, sample.target_ids, model.vocab.emotion_flags,
                                config.delta, pad_id=model.vocab.pad_id)
    loss_cls = emotion_cls_loss(state.emotion_groups, state.routes,
                                model.emo_head_w, model.emo_head_b,
                                sample.emotion_targets)
    return total_loss(loss_e, loss_cls, config.lambda_e, config.lambda_cls), loss_e, loss_cls


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float = 7e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update applied elementwise, in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter "
                             f"{name} with shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class LossRecord:
    step: int
    loss_e: float
    loss_cls: float
    loss: float


def train_loop(model: CaptionModel, samples: list[PreparedSample],
               config: TrainConfig, checkpoint_path: str | None = None
               ) -> list[LossRecord]:
    """Deterministic minibatch loop: forward, backward, Adam, repeat.

    Samples are shuffled each epoch with the config seed; gradient
    accumulation order inside a batch is fixed by sample id, so equal
    seeds give bit-identical trajectories.
    """
    if not samples:
        raise TrainingError("training dataset is empty")
    ordered = sorted(samples, key=lambda s: s.sample_id)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    adam = AdamState()
    history: list[LossRecord] = []

    batch_size = min(config.batch_size, len(ordered))
    epoch_order: list[int] = []
    for step in range(1, config.max_steps + 1):
        batch: list[PreparedSample] = []
        while len(batch) < batch_size:
            if not epoch_order:
                epoch_order = list(rng.permutation(len(ordered)))
            batch.append(ordered[epoch_order.pop(0)])
        batch.sort(key=lambda s: s.sample_id)

        with Tape() as tape:
            total = None
            sum_e = 0.0
            sum_cls = 0.0
            for sample in batch:
                loss, loss_e, loss_cls = sample_losses(model, sample, config)
                sum_e += loss_e.item()
                sum_cls += loss_cls.item()
                total = loss if total is None else ad.add(total, loss)
            total = ad.mul(total, Tensor(1.0 / len(batch)))
            value = total.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at step {step} "
                    f"(L_e sum {sum_e}, L_cls sum {sum_cls}); aborting")
            backward(total, tape)
        adam_step(params, adam, lr=config.lr)
        model.zero_grad()

        history.append(LossRecord(step=step, loss_e=sum_e / len(batch),
                                  loss_cls=sum_cls / len(batch), loss=value))
        if checkpoint_path and config.checkpoint_every and step % config.checkpoint_every == 0:
            model.save(checkpoint_path)
        if config.stop_loss is not None and value < config.stop_loss:
            log.info("stop-loss %.4g reached at step %d", config.stop_loss, step)
            break
    if checkpoint_path:
        model.save(checkpoint_path)
    return history


def write_loss_csv(history: list[LossRecord], path: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss_e", "loss_cls", "loss"])
        for rec in history:
            writer.writerow([rec.step, repr(rec.loss_e), repr(rec.loss_cls), repr(rec.loss)])
