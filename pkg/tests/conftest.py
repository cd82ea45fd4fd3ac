"""Shared fixtures and oracles for the test suite."""

from __future__ import annotations

import random

import numpy as np
import pytest

from lexseq import corpus, nn
from lexseq.tokenizer import EncodedSequence

SYNTH_CLASSES = 6
SYNTH_LABELS = tuple(f"class{i}" for i in range(SYNTH_CLASSES))


def make_synthetic_corpus(
    n_docs: int = 600,
    seed: int = 99,
    classes: int = SYNTH_CLASSES,
    markers: tuple[int, int] = (2, 2),
) -> list[corpus.Document]:
    """Keyword corpus: class k's documents contain the marker token
    ``classk`` (1-2 occurrences) among random filler words."""
    rng = random.Random(seed)
    noise = [f"palavra{i}" for i in range(150)]
    docs = []
    per_class = n_docs // classes
    for cls in range(classes):
        for j in range(per_class):
            words = [rng.choice(noise) for _ in range(rng.randint(8, 14))]
            for _ in range(rng.randint(*markers)):
                words.insert(rng.randrange(len(words) + 1), f"class{cls}")
            docs.append(
                corpus.Document(
                    id=f"doc-{cls}-{j:03d}", text=" ".join(words), label=cls
                )
            )
    return docs


@pytest.fixture(scope="session")
def synthetic_corpus() -> list[corpus.Document]:
    return make_synthetic_corpus()


@pytest.fixture(scope="session")
def synthetic_labels() -> corpus.LabelSet:
    return corpus.LabelSet(SYNTH_LABELS)


def random_tiny_model(seed: int, dtype=np.float64) -> tuple[nn.BiLstmClassifier, EncodedSequence, int]:
    """Tiny random model + input for gradient checking: vocab rows 12,
    embed 4, hidden 3, sequence length 6, 3 classes."""
    from lexseq.rng import SplitMix64

    dims = nn.ModelDims(vocab_rows=12, embed_dim=4, hidden=3, classes=3, max_len=6)
    model = nn.init_parameters(dims, seed=seed, dtype=dtype)
    rng = SplitMix64(seed + 777)
    ids = np.array([1 + rng.next_below(11) for _ in range(6)])
    seq = EncodedSequence(ids=ids, length=6)
    target = rng.next_below(3)
    return model, seq, target


def finite_difference_gradients(
    model: nn.BiLstmClassifier,
    seq: EncodedSequence,
    target: int,
    eps: float = 1e-5,
) -> list[np.ndarray]:
    """Independent gradient oracle: central differences through
    forward + loss only, one scalar parameter at a time."""
    grads = []
    for _, param in nn.iter_parameters(model):
        fd = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + eps
            loss_plus = nn.loss(nn.forward(seq, model)[0], target)
            param[idx] = orig - eps
            loss_minus = nn.loss(nn.forward(seq, model)[0], target)
            param[idx] = orig
            fd[idx] = (loss_plus - loss_minus) / (2 * eps)
        grads.append(fd)
    return grads


def gradient_check_error(model, seq, target, eps: float = 1e-5) -> float:
    """Max absolute BPTT-vs-FD deviation over the whole gradient
    vector, relative to the gradient's own max magnitude. (Central
    differences at step eps cannot resolve elements much smaller than
    the roundoff floor, so the scale is the full gradient's.)"""
    _, trace = nn.forward(seq, model)
    analytic = nn.backward(trace, target, model)
    fd = finite_difference_gradients(model, seq, target, eps)
    diff = max(np.abs(a - f).max() for a, f in zip(analytic.arrays(), fd))
    scale = max(
        max(np.abs(a).max() for a in analytic.arrays()),
        max(np.abs(f).max() for f in fd),
    )
    return float(diff / scale)
