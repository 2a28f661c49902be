import numpy as np
import pytest

from face_forge.autodiff import Tensor, UsageError
from face_forge.data import SynthSpec, synth_dataset
from face_forge.embeddings import (EmbeddingTable, build_emotion_dictionary,
                                   default_emotion_words, default_verb_lexicon,
                                   tokenize)
from face_forge.generation import Vocabulary
from face_forge.model import (AblationToggles, CaptionModel, ModelConfig,
                              PreparedSample, prepare_sample)
from face_forge.retrieval import CorpusIndex, Retriever


def small_stack(seed=0, toggles=None, order="fact-first", model_seed=None):
    spec = SynthSpec(samples=6, vocab_size=12, emotion_words=4,
                     proportions=(0.5, 0.5, 0.0), seed=seed, d=10, n_frames=3)
    records, corpus, emo_words = synth_dataset(spec, default_emotion_words())
    table = EmbeddingTable(d=10, seed=seed)
    emotions = build_emotion_dictionary(emo_words, table)
    words = sorted({t for r in records for t in tokenize(r.caption)}
                   | {t for e in corpus for t in tokenize(e.sentence)})
    vocab = Vocabulary(words, emotions)
    retriever = Retriever(CorpusIndex(corpus), table, default_verb_lexicon())
    config = ModelConfig(d=10, n_queries=4, k=3, max_len=15, order=order,
                         toggles=toggles or AblationToggles())
    model = CaptionModel(config, vocab, emotions,
                         seed=seed if model_seed is None else model_seed)
    return records, retriever, model


class TestToggles:
    def test_disable_parses_names(self):
        toggles = AblationToggles.disable(["re", "ba"])
        assert not toggles.retrieval and not toggles.bias_adjustment
        assert toggles.factual_calibration and toggles.emotion_augmentation

    def test_unknown_name_rejected(self):
        with pytest.raises(UsageError):
            AblationToggles.disable(["xx"])

    def test_ea_off_zeroes_emotion_groups(self):
        records, retriever, model = small_stack(toggles=AblationToggles.disable(["ea"]))
        sample = prepare_sample(records[0], retriever, model)
        state = model.forward(sample)
        assert all(np.all(e.data == 0.0) for e in state.emotion_groups)
        assert state.memory.data.shape == (4, 10)

    def test_ba_off_fixes_gates_and_routes(self):
        records, retriever, model = small_stack(toggles=AblationToggles.disable(["ba"]))
        sample = prepare_sample(records[0], retriever, model)
        state = model.forward(sample)
        assert state.gate_f.item() == 1.0
        assert state.gate_e.item() == 1.0
        assert np.allclose(state.routes.data, 1.0 / 3.0, atol=1e-15)

    def test_re_off_memory_ignores_retrieved_features(self):
        toggles = AblationToggles.disable(["re"])
        records, retriever, model = small_stack(toggles=toggles)
        sample = prepare_sample(records[0], retriever, model)
        base = model.forward(sample).memory.data
        tweaked = PreparedSample(
            sample_id=sample.sample_id, video=sample.video,
            components=Tensor(sample.components.data + 3.0),
            similarities=sample.similarities, target_ids=sample.target_ids,
            emotion_targets=sample.emotion_targets, groups=sample.groups)
        assert np.array_equal(base, model.forward(tweaked).memory.data)

    def test_fc_off_uses_raw_components(self):
        records, retriever, model = small_stack()
        sample = prepare_sample(records[0], retriever, model)
        with_fc = model.forward(sample)
        assert with_fc.alpha is not None and with_fc.theta is not None
        model.config.toggles = AblationToggles.disable(["fc"])
        without_fc = model.forward(sample)
        assert without_fc.alpha is None
        assert not np.allclose(with_fc.memory.data, without_fc.memory.data)


class TestPrepareSample:
    def test_groups_exclude_own_video(self):
        records, retriever, model = small_stack()
        sample = prepare_sample(records[2], retriever, model)
        assert len(sample.groups) == 3
        assert all(g.entry.video_id != records[2].video_id for g in sample.groups)
        assert sample.components.data.shape == (3, 3, 10)

    def test_caption_targets_end_with_eos(self):
        records, retriever, model = small_stack()
        sample = prepare_sample(records[0], retriever, model)
        assert sample.target_ids[-1] == model.vocab.eos_id
        assert len(sample.target_ids) <= model.config.max_len + 1

    def test_emotion_targets_from_record_field(self):
        records, retriever, model = small_stack()
        record = records[0]
        assert record.emotion_words  # synth plants one emotion word
        sample = prepare_sample(record, retriever, model)
        expected = sorted(model.emotions.index_of(w) for w in record.emotion_words)
        assert sample.emotion_targets == expected

    def test_unknown_emotion_word_rejected(self):
        records, retriever, model = small_stack()
        record = records[0]
        record.emotion_words = ["notaword"]
        with pytest.raises(UsageError):
            prepare_sample(record, retriever, model)


class TestParameters:
    def test_registry_covers_all_groups(self):
        _, _, model = small_stack()
        groups = model.parameter_groups()
        assert set(groups) == {"fcue", "pvea", "dbar", "qformer", "decoder", "emo_head"}
        assert "dbar.w_g" in groups["dbar"]

    def test_checkpoint_roundtrip_restores_forward(self, tmp_path):
        records, retriever, model = small_stack()
        sample = prepare_sample(records[0], retriever, model)
        base = model.forward(sample).memory.data.copy()
        path = str(tmp_path / "model.ckpt")
        model.save(path)

        _, _, fresh = small_stack(model_seed=1)
        assert not np.allclose(fresh.forward(sample).memory.data, base)
        fresh.load(path)
        assert np.array_equal(fresh.forward(sample).memory.data, base)

    def test_same_seed_same_init(self):
        _, _, a = small_stack(seed=4)
        _, _, b = small_stack(seed=4)
        sa, sb = a.state(), b.state()
        assert all(np.array_equal(sa[k], sb[k]) for k in sa)

    def test_bad_order_rejected(self):
        with pytest.raises(UsageError):
            ModelConfig(d=4, order="sideways")
