"""Command-line surface: extract, build-vocab, train, evaluate, predict.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/numeric
error. Diagnostics go to stderr; machine-readable output goes to files
or stdout. The optional ``LEXSEQ_THREADS`` environment variable bounds
per-document fan-out during evaluate/predict; it never changes output
bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus, extraction, tokenizer, trainer
from .errors import DataError, NumericError, OcrError
from .nn import ACTIVATIONS, ModelDims, init_parameters
from .tokenizer import TokenizerConfig


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage errors to 1
        raise _UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    try:
        r = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric ratio in {text!r}") from None
    return r  # validated against sum=1 by stratified_split


def _build_parser() -> _Parser:
    parser = _Parser(prog="lexseq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[], help="extract one document's text")
    p.add_argument("manifest", help="page manifest (JSON Lines: page, text, image)")
    p.add_argument("--ocr-cmd", required=True,
                   help="OCR command template with an {input} placeholder")
    p.add_argument("-o", "--output", required=True, help="output dataset JSONL")
    p.add_argument("--id", dest="doc_id", default=None,
                   help="document id (default: manifest file stem)")
    p.add_argument("--token-target", type=int, default=1000)
    p.add_argument("--min-wordlike-ratio", type=float, default=0.70)
    p.add_argument("--min-chars", type=int, default=50)
    p.add_argument("--no-lowercase", action="store_true")

    p = sub.add_parser("build-vocab", help="build a capped vocabulary")
    p.add_argument("data", help="training dataset JSONL")
    p.add_argument("--cap", type=int, default=100_000)
    p.add_argument("-o", "--output", required=True, help="vocabulary file")
    p.add_argument("--labels", default=None,
                   help="labels file; with --seed, restricts counting to the "
                        "deterministic train partition of DATA")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ratios", type=_ratios, default=corpus.DEFAULT_RATIOS)
    p.add_argument("--no-lowercase", action="store_true")

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("data", help="full labeled dataset JSONL (split internally)")
    p.add_argument("--labels", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    p.add_argument("--ratios", type=_ratios, default=corpus.DEFAULT_RATIOS)
    p.add_argument("--embed", type=int, default=100)
    p.add_argument("--hidden", type=int, default=200)
    p.add_argument("--max-len", type=int, default=1000)
    p.add_argument("--activation", choices=ACTIVATIONS, default="relu")
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--history", default=None, help="write per-epoch JSON records")
    p.add_argument("--no-lowercase", action="store_true")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on labeled data")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--vocab", required=True)
    p.add_argument("-o", "--output", required=True, help="report JSON path")
    p.add_argument("--matrix-csv", default=None, help="also export the confusion matrix")
    p.add_argument("--no-lowercase", action="store_true")

    p = sub.add_parser("predict", help="emit per-document predictions to stdout")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--vocab", required=True)
    p.add_argument("--no-lowercase", action="store_true")
    return parser


def _require_files(*paths: str) -> None:
    for path in paths:
        if path is not None and not Path(path).exists():
            raise DataError(f"input path does not exist: {path}")


def _workers() -> int:
    raw = os.environ.get("LEXSEQ_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise _UsageError(f"LEXSEQ_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def _tok_config(args, max_len: int | None = None) -> TokenizerConfig:
    return TokenizerConfig(
        max_sequence_length=max_len if max_len is not None else 1000,
        lowercase=not args.no_lowercase,
    )


def _cmd_extract(args) -> int:
    _require_files(args.manifest)
    pages = extraction.load_page_manifest(args.manifest)
    try:
        backend = extraction.ocr_command_backend(args.ocr_cmd)
        gate = extraction.QualityGateConfig(
            min_wordlike_ratio=args.min_wordlike_ratio, min_chars=args.min_chars
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    result = extraction.extract_text(
        pages, backend, gate,
        token_target=args.token_target,
        tok_config=_tok_config(args),
    )
    doc_id = args.doc_id or Path(args.manifest).stem
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"id": doc_id, "text": result.text},
                            ensure_ascii=False) + "\n")
    used = ", ".join(f"{n}:{src}" for n, src in result.pages_used)
    print(
        f"{doc_id}: {result.token_count} tokens from pages [{used}] "
        f"complete={str(result.complete).lower()}",
        file=sys.stderr,
    )
    return 0


def _cmd_build_vocab(args) -> int:
    _require_files(args.data, args.labels)
    tok_config = _tok_config(args)
    if args.labels is not None and args.seed is not None:
        labels = corpus.LabelSet.from_file(args.labels)
        docs = corpus.load_dataset(args.data, labels)
        split = corpus.stratified_split(docs, args.ratios, args.seed)
        texts = (doc.text for doc in split.train)
        scope = f"train partition ({len(split.train)} of {len(docs)} docs)"
    else:
        docs = corpus.load_dataset(args.data, None)
        texts = (doc.text for doc in docs)
        scope = f"all {len(docs)} docs"
    try:
        vocab = tokenizer.build_vocabulary(
            tokenizer.iter_tokens(texts, tok_config), cap=args.cap
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    tokenizer.save_vocabulary(vocab, args.output)
    print(f"vocabulary: {len(vocab)} entries (cap {args.cap}) from {scope}",
          file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    _require_files(args.data, args.labels, args.vocab)
    labels = corpus.LabelSet.from_file(args.labels)
    docs = corpus.load_dataset(args.data, labels)
    split = corpus.stratified_split(docs, args.ratios, args.seed)
    vocab = tokenizer.load_vocabulary(args.vocab)
    try:
        tok_config = TokenizerConfig(
            max_sequence_length=args.max_len, lowercase=not args.no_lowercase
        )
        dims = ModelDims(
            vocab_rows=vocab.id_count,
            embed_dim=args.embed,
            hidden=args.hidden,
            classes=labels.size,
            max_len=args.max_len,
        )
        config = trainer.TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch,
            learning_rate=args.lr,
            seed=args.seed,
            checkpoint_path=args.output,
            clip_norm=args.clip_norm,
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    model = init_parameters(
        dims, args.seed,
        labels=labels.labels,
        vocab_digest=vocab.digest(),
        activation=args.activation,
    )
    print(
        f"training on {len(split.train)} docs "
        f"(val {len(split.validation)}, test {len(split.test)}), "
        f"{dims.vocab_rows} vocab rows",
        file=sys.stderr,
    )

    def log_epoch(record: trainer.EpochRecord) -> None:
        val = (f" val_loss={record.val_loss:.4f} val_acc={record.val_accuracy:.4f}"
               if record.val_loss is not None else "")
        print(
            f"epoch {record.epoch}: loss={record.train_loss:.4f} "
            f"acc={record.train_accuracy:.4f}{val} ({record.seconds:.1f}s)",
            file=sys.stderr,
        )

    _, history = trainer.train(model, split, vocab, config,
                               tok_config=tok_config, on_epoch=log_epoch)
    if args.history:
        history.save_json(args.history)
    return 0


def _load_model_and_vocab(args):
    _require_files(args.checkpoint, args.data, args.vocab)
    vocab = tokenizer.load_vocabulary(args.vocab)
    model, _ = trainer.load_checkpoint(args.checkpoint, vocab=vocab)
    return model, vocab


def _cmd_evaluate(args) -> int:
    model, vocab = _load_model_and_vocab(args)
    labels = corpus.LabelSet(model.labels)
    docs = corpus.load_dataset(args.data, labels)
    tok_config = TokenizerConfig(
        max_sequence_length=model.dims.max_len, lowercase=not args.no_lowercase
    )
    report = trainer.evaluate(model, docs, vocab, tok_config=tok_config,
                              workers=_workers())
    report.save_json(args.output)
    if args.matrix_csv:
        report.save_matrix_csv(args.matrix_csv)
    print(
        f"{len(docs)} docs: accuracy={report.accuracy:.4f} "
        f"weighted_f1={report.weighted[2]:.4f}",
        file=sys.stderr,
    )
    return 0


def _cmd_predict(args) -> int:
    model, vocab = _load_model_and_vocab(args)
    docs = corpus.load_dataset(args.data, None)
    tok_config = TokenizerConfig(
        max_sequence_length=model.dims.max_len, lowercase=not args.no_lowercase
    )
    sequences = [
        tokenizer.encode_text(doc.text, vocab, tok_config) for doc in docs
    ]
    probs_list = trainer.map_forward(model, sequences, _workers())
    for doc, probs in zip(docs, probs_list):
        record = {
            "id": doc.id,
            "label": model.labels[int(np.argmax(probs))],
            "probabilities": [float(p) for p in probs],
        }
        sys.stdout.write(json.dumps(record, ensure_ascii=False) + "\n")
    return 0


_COMMANDS = {
    "extract": _cmd_extract,
    "build-vocab": _cmd_build_vocab,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
}


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # -h/--help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"lexseq: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"lexseq: data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, OcrError) as exc:
        print(f"lexseq: runtime error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    try:
        code = run(sys.argv[1:])
        sys.stdout.flush()
    except BrokenPipeError:
        # downstream pipe closed early (e.g. | head); suppress the
        # shutdown-time flush error as well
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        sys.exit(141)
    sys.exit(code)


if __name__ == "__main__":
    main()
