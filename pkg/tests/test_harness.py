import json
import os

import numpy as np
import pytest

from face_forge.autodiff import UsageError
from face_forge.cli import main
from face_forge.config import resolve_config
from face_forge.data import (_FILLERS, _OBJECTS, _SUBJECTS, _VERBS, SynthSpec,
                             load_dataset, synth_dataset, write_synth)
from face_forge.embeddings import default_emotion_words
from face_forge.retrieval import DataError


class TestSynth:
    def test_roundtrip_exact(self, tmp_path):
        spec = SynthSpec(samples=10, vocab_size=12, emotion_words=4,
                         proportions=(0.3, 0.5, 0.2), seed=5, d=6, n_frames=3)
        dataset_path, _, _ = write_synth(spec, default_emotion_words(), str(tmp_path))
        records, _, _ = synth_dataset(spec, default_emotion_words())
        loaded = load_dataset(dataset_path, d=6)
        assert len(loaded) == 10
        for orig, back in zip(records, loaded):
            assert orig.sample_id == back.sample_id
            assert orig.caption == back.caption
            assert orig.emotion_words == back.emotion_words
            assert orig.triplet.as_tuple() == back.triplet.as_tuple()
            assert np.array_equal(orig.frames, back.frames)

    def test_same_spec_is_byte_identical(self, tmp_path):
        spec = SynthSpec(samples=6, vocab_size=10, emotion_words=3,
                         proportions=(0.5, 0.5, 0.0), seed=9, d=4, n_frames=2)
        a = tmp_path / "a"
        b = tmp_path / "b"
        write_synth(spec, default_emotion_words(), str(a))
        write_synth(spec, default_emotion_words(), str(b))
        for name in ("dataset.jsonl", "corpus.jsonl", "emotions.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_bad_proportions_rejected(self):
        with pytest.raises(UsageError, match="sum"):
            SynthSpec(proportions=(0.5, 0.2, 0.2))

    def test_zero_emotion_words_all_factual(self):
        from face_forge.embeddings import EmbeddingTable, build_emotion_dictionary
        from face_forge.evaluation import FACTUAL, bias_report
        spec = SynthSpec(samples=12, vocab_size=12, emotion_words=0,
                         proportions=(0.4, 0.4, 0.2), seed=1, d=4, n_frames=2)
        records, _, emotions = synth_dataset(spec, default_emotion_words())
        assert emotions == []
        table = EmbeddingTable(d=4, seed=1)
        dictionary = build_emotion_dictionary(default_emotion_words(), table)
        report = bias_report(records, dictionary)
        assert report.proportions[FACTUAL] == 1.0

    def test_template_pools_disjoint_from_lexicon(self):
        lexicon = set(default_emotion_words())
        for pool in (_SUBJECTS, _VERBS, _OBJECTS, _FILLERS):
            assert not lexicon & set(pool)

    def test_requested_proportions_realized_exactly(self):
        from face_forge.embeddings import EmbeddingTable, build_emotion_dictionary
        from face_forge.evaluation import bias_report
        spec = SynthSpec(samples=100, vocab_size=20, emotion_words=5,
                         proportions=(0.3, 0.5, 0.2), seed=2, d=4, n_frames=2)
        records, _, _ = synth_dataset(spec, default_emotion_words())
        table = EmbeddingTable(d=4, seed=2)
        dictionary = build_emotion_dictionary(default_emotion_words(), table)
        report = bias_report(records, dictionary)
        assert report.proportions == {"emotional-bias": 0.30, "neutral": 0.50,
                                      "factual-bias": 0.20}


class TestLoadDataset:
    def test_missing_caption_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "s1", "video_id": "v1", "frames": [[1.0]]}\n')
        with pytest.raises(DataError, match="line 1"):
            load_dataset(str(path))

    def test_width_mismatch_names_both(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "s1", "video_id": "v1", '
                        '"frames": [[1.0, 2.0]], "caption": "a b"}\n')
        with pytest.raises(DataError, match="width 2.*dimension is 3"):
            load_dataset(str(path), d=3)

    def test_frames_path_resolved_relative(self, tmp_path):
        (tmp_path / "frames.txt").write_text("1.0 2.0\n3.0 4.0\n")
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "s1", "video_id": "v1", '
                        '"frames": "frames.txt", "caption": "a b"}\n')
        records = load_dataset(str(path), d=2)
        assert np.array_equal(records[0].frames, [[1.0, 2.0], [3.0, 4.0]])

    def test_ragged_frames_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "s1", "video_id": "v1", '
                        '"frames": [[1.0], [1.0, 2.0]], "caption": "a b"}\n')
        with pytest.raises(DataError):
            load_dataset(str(path))

    def test_empty_dataset_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("\n")
        with pytest.raises(DataError):
            load_dataset(str(path))


class TestRunConfig:
    def test_profile_fills_loss_weights(self):
        cfg = resolve_config(profile="ve")
        assert (cfg.delta, cfg.lambda_e, cfg.lambda_cls) == (0.2, 1.0, 0.5)

    def test_flag_overrides_profile(self):
        cfg = resolve_config(profile="ve", delta=0.7)
        assert cfg.delta == 0.7
        assert cfg.lambda_cls == 0.5

    def test_file_then_flag_precedence(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"k": 3, "d": 12}))
        cfg = resolve_config(str(path), k=5)
        assert cfg.k == 5
        assert cfg.d == 12

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"mystery": 1}))
        with pytest.raises(UsageError, match="mystery"):
            resolve_config(str(path))

    def test_seed_env_fallback(self, monkeypatch):
        monkeypatch.setenv("FACE_FORGE_SEED", "77")
        assert resolve_config().seed == 77
        monkeypatch.delenv("FACE_FORGE_SEED")
        assert resolve_config().seed == 0


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(["synth", "--samples", "8", "--vocab-size", "18",
                 "--emotion-words", "5", "--proportions", "0.5,0.5,0",
                 "--seed", "3", "--dim", "16", "--frames", "3",
                 "--out", str(out)])
    assert code == 0
    return out


class TestCli:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_no_subcommand_prints_help(self, capsys):
        assert main([]) == 1

    def test_missing_file_is_data_error(self, capsys, tmp_path):
        code = main(["analyze-bias", "--dataset", str(tmp_path / "nope.jsonl")])
        assert code == 2
        assert "data error" in capsys.readouterr().err

    def test_analyze_bias_stdout_json(self, synth_dir, capsys):
        code = main(["analyze-bias", "--dataset", str(synth_dir / "dataset.jsonl"),
                     "--emotions", str(synth_dir / "emotions.txt")])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["proportions"]["emotional-bias"] == 0.5
        assert report["proportions"]["neutral"] == 0.5

    def test_build_index_writes_corpus_with_embeddings(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "index.jsonl"
        code = main(["build-index", "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--dim", "16", "--seed", "3", "--out", str(out)])
        assert code == 0
        capsys.readouterr()
        first = json.loads(out.read_text().splitlines()[0])
        assert len(first["embedding"]) == 16

    def test_retrieve_emits_k_groups(self, synth_dir, capsys):
        code = main(["retrieve", "--dataset", str(synth_dir / "dataset.jsonl"),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--video-id", "v0001", "--k", "3",
                     "--dim", "16", "--seed", "3"])
        assert code == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        assert len(lines) == 3
        assert [l["rank"] for l in lines] == [1, 2, 3]
        assert all(l["video_id"] != "v0001" for l in lines)
        assert all(len(l["triplet"]) == 3 for l in lines)

    def test_retrieve_unknown_video_is_data_error(self, synth_dir, capsys):
        code = main(["retrieve", "--dataset", str(synth_dir / "dataset.jsonl"),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--video-id", "missing", "--dim", "16", "--seed", "3"])
        assert code == 2

    def test_train_generate_evaluate_chain(self, synth_dir, tmp_path, capsys):
        run = tmp_path / "run"
        code = main(["train", "--dataset", str(synth_dir / "dataset.jsonl"),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--emotions", str(synth_dir / "emotions.txt"),
                     "--dim", "16", "--seed", "3", "--k", "3", "--queries", "4",
                     "--steps", "8", "--out", str(run)])
        assert code == 0
        capsys.readouterr()
        for name in ("checkpoint.ckpt", "loss_history.csv", "loss_curve.png",
                     "vocab.txt", "train_config.json"):
            assert (run / name).exists(), name
        header = (run / "loss_history.csv").read_text().splitlines()[0]
        assert header == "step,loss_e,loss_cls,loss"

        captions = tmp_path / "captions.jsonl"
        code = main(["generate", "--dataset", str(synth_dir / "dataset.jsonl"),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--emotions", str(synth_dir / "emotions.txt"),
                     "--dim", "16", "--seed", "3", "--k", "3", "--queries", "4",
                     "--checkpoint", str(run / "checkpoint.ckpt"),
                     "--beam", "2", "--diagnostics", "--out", str(captions)])
        assert code == 0
        capsys.readouterr()
        rows = [json.loads(l) for l in captions.read_text().splitlines()]
        assert len(rows) == 8
        assert all("caption" in r and "tokens" in r for r in rows)
        assert all(len(r["beam_scores"]) >= 1 for r in rows)
        assert all("routes" in r["diagnostics"] for r in rows)

        report_path = tmp_path / "report.json"
        code = main(["evaluate", "--dataset", str(synth_dir / "dataset.jsonl"),
                     "--emotions", str(synth_dir / "emotions.txt"),
                     "--dim", "16", "--seed", "3",
                     "--candidates", str(captions), "--out", str(report_path)])
        assert code == 0
        capsys.readouterr()
        report = json.loads(report_path.read_text())
        assert set(report) >= {"bleu_1", "bleu_4", "rouge_l", "cider",
                               "acc_sw", "acc_c", "bfs", "cfs", "combiner"}
        assert (tmp_path / "report.png").exists()

    def test_gradcheck_small_passes(self, capsys):
        code = main(["gradcheck", "--small"])
        out = capsys.readouterr().out
        assert code == 0
        assert "PASS" in out
