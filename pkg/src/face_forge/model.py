"""End-to-end captioning model: ties retrieval groups, factual
calibration, emotion augmentation, routing, aggregation, and the
decoder together behind one parameter registry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, UsageError
from .checkpoint import load_checkpoint, save_checkpoint
from .embeddings import EmotionDictionary, ingest_video, tokenize
from .emotion import EmotionParams, mine_augment
from .factual import FactualParams, cross_refine, fuse_factual, self_refine
from .generation import DecoderParams, QFormerParams, Vocabulary, qformer_aggregate
from .retrieval import RetrievalGroup, Retriever
from .routing import RoutingParams, aggregate, compute_gates, compute_routes, uniform_routes

FACT_FIRST = "fact-first"
EMOTION_FIRST = "emotion-first"


@dataclass
class AblationToggles:
    """Component switches matching the pipeline's four stages."""

    retrieval: bool = True
    factual_calibration: bool = True
    emotion_augmentation: bool = True
    bias_adjustment: bool = True

    @classmethod
    def disable(cls, names: list[str]) -> "AblationToggles":
        toggles = cls()
        mapping = {"re": "retrieval", "fc": "factual_calibration",
                   "ea": "emotion_augmentation", "ba": "bias_adjustment"}
        for name in names:
            key = mapping.get(name.lower())
            if key is None:
                raise UsageError(f"unknown ablation {name!r}; expected one of re, fc, ea, ba")
            setattr(toggles, key, False)
        return toggles


@dataclass
class ModelConfig:
    d: int = 300
    n_queries: int = 32
    k: int = 4
    max_len: int = 15
    order: str = FACT_FIRST
    toggles: AblationToggles = field(default_factory=AblationToggles)

    def __post_init__(self):
        if self.order not in (FACT_FIRST, EMOTION_FIRST):
            raise UsageError(f"order must be {FACT_FIRST} or {EMOTION_FIRST}, got {self.order!r}")


@dataclass
class PreparedSample:
    """Everything one forward pass needs, with frozen retrieval features."""

    sample_id: str
    video: Tensor                     # N x d, constant
    components: Tensor                # K x 3 x d, constant
    similarities: Tensor              # K, constant
    target_ids: list[int]             # caption ids, <eos> terminated
    emotion_targets: list[int]        # dictionary indices present in the caption
    groups: list[RetrievalGroup]


@dataclass
class ForwardState:
    memory: Tensor                    # N_q x d decoder memory
    factual_groups: list[Tensor]
    emotion_groups: list[Tensor]
    hidden_groups: list[Tensor]
    routes: Tensor
    gate_f: Tensor
    gate_e: Tensor
    alpha: Tensor | None
    theta: Tensor | None


class CaptionModel:
    """Parameter container plus the differentiable forward pipeline."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 emotions: EmotionDictionary, seed: int = 0):
        self.config = config
        self.vocab = vocab
        self.emotions = emotions
        self.dictionary = Tensor(emotions.matrix)
        self._build_params(seed)

    def _build_params(self, seed: int):
        d = self.config.d
        rng = np.random.default_rng(seed)

        def xavier(fan_in, fan_out):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            return Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True)

        def small_normal(*shape):
            return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        self.fcue = FactualParams(
            w_t=xavier(d, d),
            ffn_w1=xavier(2 * d, 2 * d), ffn_b1=zeros(2 * d),
            ffn_w2=xavier(2 * d, d), ffn_b2=zeros(d),
            ln_gain=Tensor(np.ones(d), requires_grad=True), ln_bias=zeros(d),
        )
        self.pvea = EmotionParams(phi_f=xavier(d, d), phi_v=xavier(d, d), phi_e=xavier(d, d))
        self.dbar = RoutingParams(
            u_f=xavier(d, d), r_f=xavier(d, d), u_e=xavier(d, d), r_e=xavier(d, d),
            b_f=zeros(d), b_e=zeros(d), w_g=xavier(d, 1),
        )
        self.qformer = QFormerParams(
            queries=small_normal(self.config.n_queries, d),
            self_wq=xavier(d, d), self_wk=xavier(d, d),
            cross_wq=xavier(d, d), cross_wk=xavier(d, d),
            phi_m=xavier(d, d),
        )
        vocab_size = len(self.vocab)
        self.decoder = DecoderParams(
            tok_emb=small_normal(vocab_size, d),
            pos_emb=small_normal(self.config.max_len + 1, d),
            self_wq=xavier(d, d), self_wk=xavier(d, d), self_wv=xavier(d, d),
            cross_wq=xavier(d, d), cross_wk=xavier(d, d), cross_wv=xavier(d, d),
            out_w=xavier(d, vocab_size), out_b=zeros(vocab_size),
        )
        self.emo_head_w = xavier(d, self.emotions.size)
        self.emo_head_b = zeros(self.emotions.size)

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.fcue.named())
        params.update(self.pvea.named())
        params.update(self.dbar.named())
        params.update(self.qformer.named())
        params.update(self.decoder.named())
        params["emo_head.w"] = self.emo_head_w
        params["emo_head.b"] = self.emo_head_b
        return params

    def parameter_groups(self) -> dict[str, dict[str, Tensor]]:
        groups: dict[str, dict[str, Tensor]] = {}
        for name, tensor in self.parameters().items():
            groups.setdefault(name.split(".")[0], {})[name] = tensor
        return groups

    def zero_grad(self):
        for tensor in self.parameters().values():
            tensor.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise UsageError(f"checkpoint is missing parameters: {missing}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.data.shape:
                raise UsageError(
                    f"checkpoint parameter {name} has shape {value.shape}, "
                    f"model expects {tensor.data.shape}")
            tensor.data = value.copy()
            tensor.zero_grad()

    def save(self, path: str):
        save_checkpoint(self.state(), path)

    def load(self, path: str):
        self.load_state(load_checkpoint(path))

    # ------------------------------------------------------------------
    # forward pipeline

    def forward(self, sample: PreparedSample) -> ForwardState:
        cfg = self.config
        toggles = cfg.toggles
        video = sample.video
        n, d = video.data.shape
        k = sample.components.data.shape[0]

        if not toggles.retrieval:
            # retrieval-free baseline: the whole retrieved branch is nulled
            zero = Tensor(np.zeros((n, d)))
            factual_groups = [zero] * k
            emotion_groups = [zero] * k
            hidden_groups = [zero] * k
            alpha = theta = None
        else:
            alpha = theta = None
            calibrated = sample.components
            if toggles.factual_calibration:
                refined = self_refine(sample.components)
                crossed = cross_refine(refined.refined, sample.similarities)
                alpha, theta = refined.alpha, crossed.theta
                calibrated = crossed.calibrated
            factual_groups, hidden_groups, emotion_groups = [], [], []
            for i in range(k):
                t_bar = ad.reshape(
                    ad.take_rows(ad.reshape(calibrated, (k, 3 * d)), [i]), (3, d))
                hidden, factual = fuse_factual(video, t_bar, self.fcue)
                hidden_groups.append(hidden)
                factual_groups.append(factual)
                if not toggles.emotion_augmentation:
                    emotion_groups.append(Tensor(np.zeros((n, d))))
                elif cfg.order == EMOTION_FIRST:
                    t_raw = ad.reshape(
                        ad.take_rows(ad.reshape(sample.components, (k, 3 * d)), [i]), (3, d))
                    _, factual_raw = fuse_factual(video, t_raw, self.fcue)
                    emotion_groups.append(
                        mine_augment(factual_raw, video, self.dictionary, self.pvea))
                else:
                    emotion_groups.append(
                        mine_augment(factual, video, self.dictionary, self.pvea))

        if toggles.bias_adjustment:
            gate_f, gate_e = compute_gates(factual_groups, emotion_groups, self.dbar)
            routes = compute_routes(hidden_groups, self.dbar.w_g)
        else:
            gate_f = Tensor(1.0)
            gate_e = Tensor(1.0)
            routes = uniform_routes(k)

        multimodal = aggregate(factual_groups, emotion_groups, routes, gate_f, gate_e)
        memory = qformer_aggregate(multimodal, video, self.qformer)
        return ForwardState(
            memory=memory,
            factual_groups=factual_groups,
            emotion_groups=emotion_groups,
            hidden_groups=hidden_groups,
            routes=routes,
            gate_f=gate_f,
            gate_e=gate_e,
            alpha=alpha,
            theta=theta,
        )


def prepare_sample(record, retriever: Retriever, model: CaptionModel) -> PreparedSample:
    """Freeze a dataset record into pipeline inputs.

    Retrieval runs once with leave-one-out exclusion of the record's own
    video; features are constants, so prepared samples can be cached.
    """
    cfg = model.config
    video = ingest_video(record.frames, record.video_id)
    groups = retriever.retrieve(video.pooled, cfg.k, exclude_video=record.video_id)
    components = np.stack([g.components for g in groups])
    sims = np.array([g.score for g in groups])

    tokens = tokenize(record.caption)[:cfg.max_len]
    target_ids = model.vocab.encode(tokens) + [model.vocab.eos_id]

    if record.emotion_words is not None:
        words = record.emotion_words
        unknown = [w for w in words if w not in model.emotions]
        if unknown:
            raise UsageError(
                f"sample {record.sample_id}: emotion words not in the dictionary: {unknown}")
    else:
        words = [t for t in tokens if t in model.emotions]
    emotion_targets = sorted({model.emotions.index_of(w) for w in words})

    return PreparedSample(
        sample_id=record.sample_id,
        video=Tensor(video.frames),
        components=Tensor(components),
        similarities=Tensor(sims),
        target_ids=target_ids,
        emotion_targets=emotion_targets,
        groups=groups,
    )
