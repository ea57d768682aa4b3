"""Command-line surface: train, predict, eval, gen-synth, bench.

Exit codes: 0 on success, 1 on usage errors, 2 on data or model errors.
"""

from __future__ import annotations

import argparse
import sys

from . import bench as bench_mod
from . import corpus as corpus_mod
from . import encoder as encoder_mod
from . import evaluation as eval_mod
from . import training as training_mod
from .decode import decode_corpus
from .mfvi import MfviConfig

USAGE_EXIT = 1
DATA_EXIT = 2

DATA_ERRORS = (
    corpus_mod.ConllFormatError,
    encoder_mod.ModelFormatError,
    encoder_mod.ModelVersionError,
    encoder_mod.ModelIntegrityError,
    encoder_mod.EmbeddingFormatError,
    training_mod.TrainingError,
    FileNotFoundError,
    KeyError,
    ValueError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser():
    parser = _Parser(prog="parachain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--dev", required=True, dest="dev_path")
    p.add_argument("--encoder", choices=("linear", "cnn"), default="linear")
    p.add_argument("--decoder", choices=encoder_mod.DECODER_KINDS, default="crf")
    p.add_argument("--iters", type=int, default=3, help="mean-field iterations")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--emb-dim", type=int, default=64)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--bioes", action="store_true", help="convert BIO labels to BIOES")
    p.add_argument("--metric", choices=("auto", "span_f1", "accuracy"), default="auto",
                   help="dev-selection metric (auto follows the label scheme)")
    p.add_argument("--embeddings", default=None, help="plain-text pretrained vectors")
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--label-column", type=int, default=-1)

    p = sub.add_parser("predict", help="append a predicted-label column")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--label-column", type=int, default=-1)

    p = sub.add_parser("eval", help="score predictions")
    p.add_argument("--gold", default=None, help="file with gold labels in last column")
    p.add_argument("--pred", default=None, help="file with predictions in last column")
    p.add_argument("--model", default=None)
    p.add_argument("--input", default=None)
    p.add_argument("--kv", action="store_true", help="machine-readable key-value lines")

    p = sub.add_parser("gen-synth", help="write a synthetic HMM corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--labels", type=int, default=9)
    p.add_argument("--vocab", type=int, default=2000)
    p.add_argument("--min-len", type=int, default=8)
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--diag", type=float, default=0.5, help="diagonal transition concentration")
    p.add_argument("--offdiag", type=float, default=0.5)
    p.add_argument("--emission", type=float, default=0.5)

    p = sub.add_parser("bench", help="decoding speed benchmark")
    p.add_argument("--lengths", default="32,128,512")
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--decoders", default="crf,ain1")
    p.add_argument("--workers", default="1")
    p.add_argument("--mode", choices=bench_mod.TIMING_MODES, default="decoder_only")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--labels", type=int, default=17)
    p.add_argument("--vocab", type=int, default=5000)
    p.add_argument("--encoder", choices=("linear", "cnn"), default="linear")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kv", action="store_true")

    return parser


def _encoder_kind(flag):
    return "word_only_linear" if flag == "linear" else "word_cnn"


def _cmd_train(args):
    train_data = corpus_mod.read_conll(args.train_path, args.token_column, args.label_column)
    dev_data = corpus_mod.read_conll(args.dev_path, args.token_column, args.label_column)
    if not train_data or not dev_data:
        raise ValueError("training and dev corpora must be non-empty")
    if args.bioes:
        for sent in train_data + dev_data:
            sent.raw_label_strings = corpus_mod.bio_to_bioes(sent.raw_label_strings)
    vocab, label_vocab = corpus_mod.build_vocab(train_data, min_count=args.min_count)
    corpus_mod.assign_ids(train_data, vocab, label_vocab)
    corpus_mod.assign_ids(dev_data, vocab, label_vocab)
    config = encoder_mod.EncoderConfig(
        kind=_encoder_kind(args.encoder),
        embedding_dim=args.emb_dim,
        hidden_dim=args.hidden_dim,
        label_count=len(label_vocab),
        vocab_size=len(vocab),
        kernel_width=args.kernel,
    )
    bundle = encoder_mod.init_model(
        config, vocab, label_vocab, decoder=args.decoder, iterations=args.iters, seed=args.seed
    )
    if args.embeddings:
        tokens, matrix = encoder_mod.load_text_embeddings(args.embeddings, args.emb_dim)
        hits = encoder_mod.apply_pretrained_embeddings(bundle, tokens, matrix)
        print(f"loaded pretrained vectors for {hits} vocabulary words")
    order = "second_factorized" if args.decoder == "ain2" else "first"
    cfg = training_mod.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
        decoder=args.decoder,
        mfvi=MfviConfig(iterations=args.iters, order=order),
        seed=args.seed,
        workers=args.workers,
        dev_metric=args.metric,
    )
    best, log = training_mod.train(bundle, train_data, dev_data, cfg)
    print(log.to_kv_lines())
    encoder_mod.save_model(best, args.out)
    print(f"saved model to {args.out}")
    return 0


def _cmd_predict(args):
    bundle = encoder_mod.load_model(args.model)
    sentences = corpus_mod.read_conll(args.input, args.token_column, args.label_column)
    for sent in sentences:
        sent.token_ids = [bundle.word_vocab.encode(t) for t in sent.tokens]
    preds = decode_corpus(bundle, sentences)
    corpus_mod.write_conll(sentences, args.output, predictions=preds)
    print(f"wrote predictions for {len(sentences)} sentences to {args.output}")
    return 0


def _cmd_eval(args):
    if args.gold and args.pred:
        gold = corpus_mod.read_conll(args.gold)
        pred = corpus_mod.read_conll(args.pred)
        if len(gold) != len(pred):
            raise ValueError("gold and prediction files have different sentence counts")
        pred_labels = [s.raw_label_strings for s in pred]
    elif args.model and args.input:
        bundle = encoder_mod.load_model(args.model)
        gold = corpus_mod.read_conll(args.input)
        for sent in gold:
            sent.token_ids = [bundle.word_vocab.encode(t) for t in sent.tokens]
        pred_labels = decode_corpus(bundle, gold)
    else:
        raise _UsageError("eval needs either --gold and --pred, or --model and --input")
    scheme = corpus_mod.LabelScheme.detect(
        {lab for s in gold for lab in s.raw_label_strings}
    )
    if scheme.kind == "bioes":
        report = eval_mod.span_f1(gold, pred_labels)
    else:
        report = eval_mod.token_accuracy(gold, pred_labels)
    print(report.format_kv() if args.kv else report.format_table())
    return 0


def _cmd_gen_synth(args):
    spec = corpus_mod.default_synth_spec(
        seed=args.seed,
        label_count=args.labels,
        vocab_size=args.vocab,
        min_len=args.min_len,
        max_len=args.max_len,
        diag_concentration=args.diag,
        offdiag_concentration=args.offdiag,
        emission_concentration=args.emission,
    )
    sentences = corpus_mod.generate_synthetic(spec, args.count)
    corpus_mod.write_conll(sentences, args.out)
    print(f"wrote {len(sentences)} sentences to {args.out}")
    return 0


def _csv_ints(text):
    return tuple(int(x) for x in text.split(",") if x)


def _cmd_bench(args):
    decoders = tuple(d for d in args.decoders.split(",") if d)
    for d in decoders:
        if d not in encoder_mod.DECODER_KINDS:
            raise _UsageError(f"unknown decoder {d!r}")
    spec = bench_mod.BenchSpec(
        sentence_lengths=_csv_ints(args.lengths),
        sentence_count=args.count,
        decoders=decoders,
        worker_counts=_csv_ints(args.workers),
        timing_mode=args.mode,
        repetitions=args.reps,
        iterations=args.iters,
    )
    bundle = bench_mod.make_bench_bundle(
        label_count=args.labels,
        vocab_size=args.vocab,
        encoder_kind=_encoder_kind(args.encoder),
        seed=args.seed,
    )
    report = bench_mod.bench_run(spec, bundle, seed=args.seed)
    print(report.format_kv() if args.kv else report.format_table())
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "gen-synth": _cmd_gen_synth,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE_EXIT
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


cli_main = main

if __name__ == "__main__":
    sys.exit(main())
