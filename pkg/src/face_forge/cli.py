"""Command-line interface.

Subcommands: analyze-bias, build-index, retrieve, train, generate,
evaluate, gradcheck, synth. All accept --config pointing at a JSON file
whose keys mirror RunConfig; flags override config fields. Exit codes:
0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .autodiff import UsageError
from .checkpoint import CheckpointError
from .config import RunConfig, resolve_config
from .data import SynthSpec, load_dataset, write_synth
from .embeddings import (EmbeddingTable, EmotionDictionary, ParseError,
                         build_emotion_dictionary, default_emotion_words,
                         default_verb_lexicon, ingest_video, load_emotion_words,
                         load_word_vectors, tokenize)
from .emotion import emotion_distribution
from .evaluation import bias_report, evaluate_captions
from .generation import Vocabulary, decode_beam, decode_greedy
from .model import (AblationToggles, CaptionModel, ModelConfig, prepare_sample)
from .retrieval import (CorpusIndex, DataError, Retriever, load_corpus,
                        save_corpus)
from .training import TrainConfig, TrainingError, train_loop, write_loss_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--dim", type=int, dest="d")
    parser.add_argument("--out")


def build_parser() -> _Parser:
    parser = _Parser(prog="face-forge",
                     description="Retrieval-enhanced emotional captioning pipeline")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("analyze-bias", help="label captions by emotion-word ratio")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--emotions")
    p.add_argument("--t1", type=float)
    p.add_argument("--t2", type=float)

    p = sub.add_parser("build-index", help="embed a corpus file for retrieval")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--word-vectors", dest="word_vectors")

    p = sub.add_parser("retrieve", help="top-K corpus captions for one video")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--corpus")
    p.add_argument("--word-vectors", dest="word_vectors")
    p.add_argument("--video-id", dest="video_id", required=True)
    p.add_argument("--k", type=int)

    p = sub.add_parser("train", help="train the captioning model")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--corpus")
    p.add_argument("--emotions")
    p.add_argument("--word-vectors", dest="word_vectors")
    p.add_argument("--vocab")
    p.add_argument("--k", type=int)
    p.add_argument("--profile", choices=["msvd", "ve", "combine"])
    p.add_argument("--steps", type=int, dest="max_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--lambda-e", type=float, dest="lambda_e")
    p.add_argument("--lambda-cls", type=float, dest="lambda_cls")
    p.add_argument("--stop-loss", type=float, dest="stop_loss")
    p.add_argument("--queries", type=int, dest="n_queries")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--ablate", action="append", choices=["re", "fc", "ea", "ba"])
    p.add_argument("--order", choices=["fact-first", "emotion-first"])

    p = sub.add_parser("generate", help="decode captions from a checkpoint")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--corpus")
    p.add_argument("--emotions")
    p.add_argument("--word-vectors", dest="word_vectors")
    p.add_argument("--vocab")
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int)
    p.add_argument("--queries", type=int, dest="n_queries")
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--ablate", action="append", choices=["re", "fc", "ea", "ba"])
    p.add_argument("--order", choices=["fact-first", "emotion-first"])
    p.add_argument("--diagnostics", action="store_true")

    p = sub.add_parser("evaluate", help="score generated captions")
    _add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--corpus")
    p.add_argument("--emotions")
    p.add_argument("--word-vectors", dest="word_vectors")
    p.add_argument("--vocab")
    p.add_argument("--checkpoint")
    p.add_argument("--candidates", help="pre-generated captions JSONL")
    p.add_argument("--k", type=int)
    p.add_argument("--queries", type=int, dest="n_queries")
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--ablate", action="append", choices=["re", "fc", "ea", "ba"])
    p.add_argument("--order", choices=["fact-first", "emotion-first"])

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    _add_common(p)
    p.add_argument("--small", action="store_true",
                   help="run the small-configuration suite")

    p = sub.add_parser("synth", help="generate a synthetic dataset and corpus")
    _add_common(p)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--vocab-size", type=int, default=40)
    p.add_argument("--emotion-words", type=int, default=8)
    p.add_argument("--proportions", default="0.25,0.5,0.25",
                   help="emotional,neutral,factual fractions")
    p.add_argument("--frames", type=int, dest="n_frames")
    p.add_argument("--corpus-extra", type=int, default=2)
    return parser


# ---------------------------------------------------------------------------
# shared assembly helpers


def _config_from_args(args) -> RunConfig:
    keys = ("dataset", "corpus", "emotions", "word_vectors", "checkpoint", "out",
            "vocab", "d", "n_frames", "n_queries", "k", "max_len", "beam",
            "order", "ablate", "profile", "delta", "lambda_e", "lambda_cls",
            "lr", "batch_size", "max_steps", "stop_loss", "seed")
    overrides = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    return resolve_config(getattr(args, "config", None), **overrides)


def _embedding_table(cfg: RunConfig) -> EmbeddingTable:
    if cfg.word_vectors:
        return load_word_vectors(cfg.word_vectors, cfg.d, seed=cfg.seed)
    return EmbeddingTable(d=cfg.d, seed=cfg.seed)


def _emotion_dictionary(cfg: RunConfig, table: EmbeddingTable) -> EmotionDictionary:
    words = load_emotion_words(cfg.emotions) if cfg.emotions else default_emotion_words()
    return build_emotion_dictionary(words, table)


def _require(cfg: RunConfig, *names: str):
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + n for n in missing)}")


def _build_stack(cfg: RunConfig):
    """Load dataset, corpus, embeddings, vocabulary, and a fresh model."""
    _require(cfg, "dataset", "corpus")
    records = load_dataset(cfg.dataset, d=cfg.d)
    table = _embedding_table(cfg)
    entries = load_corpus(cfg.corpus, table)
    retriever = Retriever(CorpusIndex(entries), table, default_verb_lexicon(), cfg.prefix)
    emotions = _emotion_dictionary(cfg, table)
    if cfg.vocab:
        with open(cfg.vocab, "r", encoding="utf-8") as fh:
            words = [line.strip() for line in fh if line.strip()]
        vocab = Vocabulary(words, emotions)
    else:
        sentences = [tokenize(r.caption) for r in records]
        sentences += [tokenize(e.sentence) for e in entries]
        words = sorted({tok for sent in sentences for tok in sent})
        vocab = Vocabulary(words, emotions)
    model_cfg = ModelConfig(d=cfg.d, n_queries=cfg.n_queries, k=cfg.k,
                            max_len=cfg.max_len, order=cfg.order,
                            toggles=AblationToggles.disable(cfg.ablate))
    model = CaptionModel(model_cfg, vocab, emotions, seed=cfg.seed)
    return records, retriever, model


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_analyze_bias(args) -> int:
    cfg = _config_from_args(args)
    _require(cfg, "dataset")
    table = _embedding_table(cfg)
    emotions = _emotion_dictionary(cfg, table)
    records = load_dataset(cfg.dataset)
    kwargs = {}
    if args.t1 is not None:
        kwargs["t1"] = args.t1
    if args.t2 is not None:
        kwargs["t2"] = args.t2
    report = bias_report(records, emotions, **kwargs).to_dict()
    text = _dumps(report)
    sys.stdout.write(text)
    if cfg.out:
        _emit(text, cfg.out)
        from .figures import bias_bars
        bias_bars(report, os.path.splitext(cfg.out)[0] + ".png")
    return 0


def cmd_build_index(args) -> int:
    cfg = _config_from_args(args)
    _require(cfg, "corpus", "out")
    table = _embedding_table(cfg)
    entries = load_corpus(cfg.corpus, table)
    save_corpus(entries, cfg.out)
    sys.stdout.write(_dumps({"entries": len(entries), "out": cfg.out}))
    return 0


def cmd_retrieve(args) -> int:
    cfg = _config_from_args(args)
    _require(cfg, "dataset", "corpus")
    records = load_dataset(cfg.dataset, d=cfg.d)
    matching = sorted((r for r in records if r.video_id == args.video_id),
                      key=lambda r: r.sample_id)
    if not matching:
        raise DataError(f"video id {args.video_id!r} not present in {cfg.dataset}")
    table = _embedding_table(cfg)
    entries = load_corpus(cfg.corpus, table)
    retriever = Retriever(CorpusIndex(entries), table, default_verb_lexicon(), cfg.prefix)
    video = ingest_video(matching[0].frames, args.video_id)
    groups = retriever.retrieve(video.pooled, cfg.k, exclude_video=args.video_id)
    lines = []
    for g in groups:
        lines.append(json.dumps({
            "rank": g.rank, "id": g.entry.entry_id, "video_id": g.entry.video_id,
            "sentence": g.entry.sentence, "score": g.score,
            "triplet": list(g.triplet.as_tuple()),
        }))
    _emit("\n".join(lines) + "\n", cfg.out)
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    _require(cfg, "dataset", "corpus", "out")
    os.makedirs(cfg.out, exist_ok=True)
    records, retriever, model = _build_stack(cfg)
    samples = [prepare_sample(r, retriever, model) for r in records]
    train_cfg = TrainConfig(
        profile=cfg.profile, delta=cfg.delta, lambda_e=cfg.lambda_e,
        lambda_cls=cfg.lambda_cls, lr=cfg.lr, batch_size=cfg.batch_size,
        max_steps=cfg.max_steps, seed=cfg.seed, k=cfg.k, order=cfg.order,
        toggles=model.config.toggles, checkpoint_every=cfg.checkpoint_every,
        stop_loss=cfg.stop_loss,
    )
    checkpoint_path = os.path.join(cfg.out, "checkpoint.ckpt")
    history = train_loop(model, samples, train_cfg, checkpoint_path=checkpoint_path)
    csv_path = os.path.join(cfg.out, "loss_history.csv")
    write_loss_csv(history, csv_path)
    with open(os.path.join(cfg.out, "vocab.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(model.vocab.tokens[4:]) + "\n")
    with open(os.path.join(cfg.out, "train_config.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(_dumps(cfg.to_dict()))
    from .figures import loss_curve
    loss_curve(history, os.path.join(cfg.out, "loss_curve.png"))
    final = history[-1]
    sys.stdout.write(_dumps({
        "steps": final.step, "final_loss": final.loss,
        "checkpoint": checkpoint_path, "loss_history": csv_path,
    }))
    return 0


def _decode_records(cfg: RunConfig, args):
    _require(cfg, "checkpoint")
    records, retriever, model = _build_stack(cfg)
    model.load(cfg.checkpoint)
    outputs = []
    for record in sorted(records, key=lambda r: r.sample_id):
        sample = prepare_sample(record, retriever, model)
        state = model.forward(sample)
        obj = {"id": record.sample_id}
        if cfg.beam > 1:
            ids, beams = decode_beam(state.memory, model.decoder, model.vocab,
                                     beam=cfg.beam, max_len=cfg.max_len)
            obj["beam_scores"] = [b.score for b in beams]
        else:
            ids = decode_greedy(state.memory, model.decoder, model.vocab,
                                max_len=cfg.max_len)
        obj["caption"] = model.vocab.caption(ids)
        obj["tokens"] = model.vocab.decode(ids)
        if getattr(args, "diagnostics", False):
            obj["diagnostics"] = {
                "routes": [float(v) for v in state.routes.data],
                "gate_f": state.gate_f.item(),
                "gate_e": state.gate_e.item(),
                "emotion_distributions": [
                    [float(v) for v in emotion_distribution(e.data, model.emotions.matrix)]
                    for e in state.emotion_groups
                ],
            }
        outputs.append(obj)
    return records, outputs


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    _, outputs = _decode_records(cfg, args)
    _emit("\n".join(json.dumps(o) for o in outputs) + "\n", cfg.out)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    _require(cfg, "dataset")
    table = _embedding_table(cfg)
    emotions = _emotion_dictionary(cfg, table)
    if args.candidates:
        records = load_dataset(cfg.dataset, d=None)
        with open(args.candidates, "r", encoding="utf-8") as fh:
            produced = [json.loads(line) for line in fh if line.strip()]
        captions = {str(o["id"]): str(o["caption"]) for o in produced}
    else:
        records, outputs = _decode_records(cfg, args)
        captions = {o["id"]: o["caption"] for o in outputs}
    by_video: dict[str, list[list[str]]] = {}
    for r in records:
        by_video.setdefault(r.video_id, []).append(tokenize(r.caption))
    candidates, references = [], []
    for r in sorted(records, key=lambda x: x.sample_id):
        if r.sample_id not in captions:
            raise DataError(f"no generated caption for sample {r.sample_id}")
        candidates.append(tokenize(captions[r.sample_id]) or ["<empty>"])
        references.append(by_video[r.video_id])
    report = evaluate_captions(candidates, references, emotions).to_dict()
    text = _dumps(report)
    sys.stdout.write(text)
    if cfg.out:
        _emit(text, cfg.out)
        from .figures import metric_bars
        metric_bars(report, os.path.splitext(cfg.out)[0] + ".png")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck
    cfg = _config_from_args(args)
    result = run_gradcheck(seed=cfg.seed if cfg.seed else 7)
    for group in sorted(result.group_errors):
        err = result.group_errors[group]
        status = "ok" if err < result.tolerance else "FAIL"
        sys.stdout.write(f"{group:12s} max relative error {err:.3e}  {status}\n")
    sys.stdout.write("PASS\n" if result.passed else "FAIL\n")
    return 0 if result.passed else 1


def cmd_synth(args) -> int:
    cfg = _config_from_args(args)
    _require(cfg, "out")
    try:
        proportions = tuple(float(x) for x in args.proportions.split(","))
    except ValueError as exc:
        raise UsageError(f"bad --proportions value {args.proportions!r}: {exc}") from exc
    if len(proportions) != 3:
        raise UsageError("--proportions needs exactly three comma-separated fractions")
    spec = SynthSpec(
        samples=args.samples, vocab_size=args.vocab_size,
        emotion_words=args.emotion_words, proportions=proportions,
        seed=cfg.seed, d=cfg.d, n_frames=cfg.n_frames,
        corpus_extra=args.corpus_extra,
    )
    dataset_path, corpus_path, emotions_path = write_synth(
        spec, default_emotion_words(), cfg.out)
    config_path = os.path.join(cfg.out, "config.json")
    with open(config_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"d": spec.d, "n_frames": spec.n_frames, "seed": spec.seed}))
    sys.stdout.write(_dumps({
        "dataset": dataset_path, "corpus": corpus_path,
        "emotions": emotions_path, "config": config_path,
    }))
    return 0


HANDLERS = {
    "analyze-bias": cmd_analyze_bias,
    "build-index": cmd_build_index,
    "retrieve": cmd_retrieve,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return 1
        return HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ParseError, CheckpointError, TrainingError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
