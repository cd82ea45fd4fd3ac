"""Mini-batch training with Adam, deterministic shuffling, epoch-level
validation, and bit-exact checkpointing.

Checkpoint layout: magic ``BLSTM1\\0``, one UTF-8 JSON header line
(dims, label order, vocabulary digest, activation, optimizer, format
version), then raw little-endian float32 tensors, row-major, in
canonical parameter order, followed by the optional Adam first- and
second-moment accumulators in that same order.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Document, SplitDataset
from .errors import DataError, NumericError
from .metrics import EvaluationReport, evaluation_report
from .nn import (
    BiLstmClassifier,
    DenseParams,
    Gradients,
    LstmDirectionParams,
    ModelDims,
    backward,
    forward,
    iter_parameters,
    loss,
)
from .rng import SplitMix64
from .tokenizer import EncodedSequence, TokenizerConfig, Vocabulary, encode_text

CHECKPOINT_MAGIC = b"BLSTM1\x00"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0
    checkpoint_path: str | None = None
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when set")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, model: BiLstmClassifier) -> "AdamState":
        return cls(
            m=[np.zeros_like(arr) for _, arr in iter_parameters(model)],
            v=[np.zeros_like(arr) for _, arr in iter_parameters(model)],
        )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float | None
    val_accuracy: float | None
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_list(self) -> list[dict]:
        return [vars(e).copy() for e in self.epochs]

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_list(), indent=2) + "\n", encoding="utf-8"
        )


def adam_update(
    params: BiLstmClassifier,
    grads: Gradients,
    state: AdamState,
    config: TrainConfig,
) -> tuple[BiLstmClassifier, AdamState]:
    """One bias-corrected Adam step, applied in place to every tensor."""
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for (name, param), grad, m, v in zip(
        iter_parameters(params), grads.arrays(), state.m, state.v
    ):
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for tensor {name}")
        m *= config.beta1
        m += (1.0 - config.beta1) * grad
        v *= config.beta2
        v += (1.0 - config.beta2) * (grad * grad)
        m_hat = m / bc1
        v_hat = v / bc2
        param -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return params, state


def _encode_labeled(
    docs: Sequence[Document],
    vocab: Vocabulary,
    tok_config: TokenizerConfig,
) -> tuple[list[EncodedSequence], list[int]]:
    sequences, targets = [], []
    for doc in docs:
        if doc.label is None:
            raise DataError(f"document {doc.id!r} is unlabeled")
        sequences.append(encode_text(doc.text, vocab, tok_config))
        targets.append(doc.label)
    return sequences, targets


def _mean_loss_accuracy(
    model: BiLstmClassifier,
    sequences: list[EncodedSequence],
    targets: list[int],
    workers: int = 1,
) -> tuple[float, float]:
    probs_list = map_forward(model, sequences, workers)
    total_loss = 0.0
    correct = 0
    for probs, target in zip(probs_list, targets):
        total_loss += loss(probs, target)
        if int(np.argmax(probs)) == target:
            correct += 1
    n = len(sequences)
    return total_loss / n, correct / n


def map_forward(
    model: BiLstmClassifier,
    sequences: list[EncodedSequence],
    workers: int = 1,
) -> list[np.ndarray]:
    """Forward pass per sequence; results in input order regardless of
    worker count (each document's arithmetic is independent)."""

    def run(seq: EncodedSequence) -> np.ndarray:
        return forward(seq, model)[0]

    if workers <= 1 or len(sequences) < 2:
        return [run(seq) for seq in sequences]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, sequences))


def train(
    model: BiLstmClassifier,
    split: SplitDataset,
    vocab: Vocabulary,
    config: TrainConfig,
    tok_config: TokenizerConfig | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[BiLstmClassifier, TrainHistory]:
    """Run the full training loop.

    Per epoch: one seeded shuffle of the train indices, gradients
    averaged over each mini-batch (the final short batch is kept), one
    Adam step per batch, then validation metrics. When a checkpoint
    path is configured the best-validation-accuracy model is written at
    the end (ties keep the earlier epoch).
    """
    if not split.train:
        raise DataError("train partition is empty")
    if tok_config is None:
        tok_config = TokenizerConfig(max_sequence_length=model.dims.max_len)
    train_seqs, train_targets = _encode_labeled(split.train, vocab, tok_config)
    val_seqs, val_targets = _encode_labeled(split.validation, vocab, tok_config)

    rng = SplitMix64(config.seed)
    state = AdamState.zeros_like(model)
    grads = Gradients.zeros_like(model)
    history = TrainHistory()
    best_val_acc = -1.0
    best_model: BiLstmClassifier | None = None
    n = len(train_seqs)

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = list(range(n))
        rng.shuffle(order)
        epoch_loss = 0.0
        correct = 0
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            batch = order[start:start + config.batch_size]
            grads.zero_()
            batch_loss = 0.0
            for k in batch:
                probs, trace = forward(train_seqs[k], model)
                batch_loss += loss(probs, train_targets[k])
                if int(np.argmax(probs)) == train_targets[k]:
                    correct += 1
                backward(trace, train_targets[k], model, out=grads)
            if not math.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            grads.scale_(1.0 / len(batch))
            if config.clip_norm is not None:
                norm = grads.global_norm()
                if norm > config.clip_norm:
                    grads.scale_(config.clip_norm / norm)
            adam_update(model, grads, state, config)
            epoch_loss += batch_loss
        val_loss = val_acc = None
        if val_seqs:
            val_loss, val_acc = _mean_loss_accuracy(model, val_seqs, val_targets)
        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / n,
            train_accuracy=correct / n,
            val_loss=val_loss,
            val_accuracy=val_acc,
            seconds=time.perf_counter() - started,
        )
        history.epochs.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if config.checkpoint_path is not None and val_acc is not None:
            if val_acc > best_val_acc:
                best_val_acc = val_acc
                best_model = model.clone()

    if config.checkpoint_path is not None:
        save_checkpoint(best_model if best_model is not None else model,
                        config.checkpoint_path)
    return model, history


def evaluate(
    model: BiLstmClassifier,
    docs: Sequence[Document],
    vocab: Vocabulary,
    tok_config: TokenizerConfig | None = None,
    workers: int = 1,
) -> EvaluationReport:
    """tokenize -> encode -> forward -> argmax per document, then the
    full metrics report. Argmax ties resolve to the lowest class index."""
    if not docs:
        raise DataError("cannot evaluate an empty document list")
    if tok_config is None:
        tok_config = TokenizerConfig(max_sequence_length=model.dims.max_len)
    sequences, targets = _encode_labeled(docs, vocab, tok_config)
    probs_list = map_forward(model, sequences, workers)
    pairs = [
        (target, int(np.argmax(probs)))
        for target, probs in zip(targets, probs_list)
    ]
    return evaluation_report(pairs, model.dims.classes, labels=model.labels)


def _header_dict(model: BiLstmClassifier, state: AdamState | None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "dims": {
            "vocab_rows": model.dims.vocab_rows,
            "embed_dim": model.dims.embed_dim,
            "hidden": model.dims.hidden,
            "classes": model.dims.classes,
            "max_len": model.dims.max_len,
        },
        "labels": list(model.labels),
        "vocab_digest": model.vocab_digest,
        "activation": model.activation,
        "optimizer": "adam",
        "adam_t": None if state is None else state.t,
    }


def save_checkpoint(
    model: BiLstmClassifier,
    path: str | Path,
    state: AdamState | None = None,
) -> None:
    header = json.dumps(_header_dict(model, state), sort_keys=True,
                        separators=(",", ":"), ensure_ascii=False)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for _, arr in iter_parameters(model):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        if state is not None:
            for group in (state.m, state.v):
                for arr in group:
                    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(
    path: str | Path,
    vocab: Vocabulary | None = None,
) -> tuple[BiLstmClassifier, AdamState | None]:
    """Read a checkpoint; round-trips are bit-identical per tensor.

    When a vocabulary is supplied its digest must match the one stored
    in the header.
    """
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: bad magic; not a checkpoint file")
    newline = blob.find(b"\n", len(CHECKPOINT_MAGIC))
    if newline < 0:
        raise DataError(f"{path}: truncated payload (no header terminator)")
    try:
        header = json.loads(blob[len(CHECKPOINT_MAGIC):newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path}: malformed checkpoint header") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataError(
            f"{path}: unsupported checkpoint format {header.get('format')!r}"
        )
    try:
        dims = ModelDims(**header["dims"])
        labels = tuple(header["labels"])
        digest = header["vocab_digest"]
        activation = header["activation"]
        adam_t = header["adam_t"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: incomplete checkpoint header: {exc}") from None
    if vocab is not None and vocab.digest() != digest:
        raise DataError(f"{path}: vocabulary digest mismatch")

    payload = blob[newline + 1:]
    offset = 0

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        nbytes = int(np.prod(shape)) * 4
        chunk = payload[offset:offset + nbytes]
        if len(chunk) < nbytes:
            raise DataError(f"{path}: truncated payload")
        offset += nbytes
        return np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32)

    h4 = 4 * dims.hidden
    shapes = [
        (dims.vocab_rows, dims.embed_dim),
        (h4, dims.embed_dim), (h4, dims.hidden), (h4,),
        (h4, dims.embed_dim), (h4, dims.hidden), (h4,),
        (dims.classes, dims.hidden), (dims.classes,),
    ]
    tensors = [take(shape) for shape in shapes]
    model = BiLstmClassifier(
        dims=dims,
        embedding=tensors[0],
        forward_dir=LstmDirectionParams(*tensors[1:4]),
        backward_dir=LstmDirectionParams(*tensors[4:7]),
        head=DenseParams(*tensors[7:9]),
        labels=labels,
        vocab_digest=digest,
        activation=activation,
    )
    state = None
    if adam_t is not None:
        m = [take(shape) for shape in shapes]
        v = [take(shape) for shape in shapes]
        state = AdamState(m=m, v=v, t=int(adam_t))
    if offset != len(payload):
        raise DataError(f"{path}: unexpected trailing bytes")
    return model, state
