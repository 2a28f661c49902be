"""face_forge: retrieval-enhanced emotional captioning with a
self-contained float64 autodiff core, exact retrieval, calibration and
augmentation stages, routing, a tiny decoder, and caption metrics.
"""

from .autodiff import (Tape, Tensor, UsageError, backward, cross_attention,
                       finite_difference_grad, layer_norm, softmax)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, resolve_config
from .data import SampleRecord, SynthSpec, load_dataset, synth_dataset
from .embeddings import (EmbeddingTable, EmotionDictionary, VideoFeatures,
                         build_emotion_dictionary, default_emotion_words,
                         deterministic_embedding, encode_text, ingest_video,
                         load_word_vectors, tokenize)
from .emotion import EmotionParams, augment_emotion, mine_candidates, visual_query
from .evaluation import (BiasReport, MetricReport, bias_report, bleu_n, cider,
                         classify_bias, emotion_accuracy, evaluate_captions,
                         hybrid_scores, rouge_l)
from .factual import (CrossRefinement, FactualParams, SelfRefinement,
                      cross_refine, fuse_factual, self_refine)
from .generation import (DecoderParams, QFormerParams, Vocabulary, decode_beam,
                         decode_greedy, decoder_logits, qformer_aggregate)
from .model import (AblationToggles, CaptionModel, ModelConfig, PreparedSample,
                    prepare_sample)
from .retrieval import (CorpusEntry, CorpusIndex, RetrievalGroup, Retriever,
                        Triplet, cosine_similarity, encode_triplet,
                        extract_triplet, load_corpus)
from .routing import (RoutingParams, aggregate, compute_gates, compute_routes,
                      route_weighted_sum)
from .training import (AdamState, TrainConfig, adam_step, emotion_cls_loss,
                       emotion_focused_ce, total_loss, train_loop)

__version__ = "0.1.0"
