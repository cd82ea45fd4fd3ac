"""Dataset ingestion, label management and deterministic splitting.

Datasets are UTF-8 JSON Lines files, one object per line with fields
``id`` (string), ``text`` (string) and optionally ``label`` (string).
Labels files are plain UTF-8, one label per line, order significant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .rng import SplitMix64

# Default 6-class label order used by the reference configuration.
DEFAULT_LABELS = ("ARE", "Acórdão", "Despacho", "Outro", "RE", "Sentença")

DEFAULT_RATIOS = (0.7, 0.2, 0.1)


@dataclass(frozen=True)
class LabelSet:
    """Ordered set of distinct class labels; position defines the class index."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValueError("a label set needs at least 2 labels")
        if any(not lab for lab in self.labels):
            raise ValueError("labels must be non-empty strings")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in label set")

    @property
    def size(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"unknown label {label!r}") from None

    @classmethod
    def default(cls) -> "LabelSet":
        return cls(DEFAULT_LABELS)

    @classmethod
    def from_file(cls, path: str | Path) -> "LabelSet":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        labels = tuple(line.strip() for line in lines if line.strip())
        if not labels:
            raise DataError(f"labels file {path} is empty")
        return cls(labels)


@dataclass(frozen=True)
class Document:
    """One brief: raw text plus optional gold class index."""

    id: str
    text: str
    label: int | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be non-empty")


@dataclass(frozen=True)
class SplitDataset:
    train: tuple[Document, ...]
    validation: tuple[Document, ...]
    test: tuple[Document, ...]
    seed: int
    ratios: tuple[float, float, float]


def load_dataset(path: str | Path, labels: LabelSet | None) -> list[Document]:
    """Read a JSON Lines dataset, resolving label strings to class indices.

    With ``labels=None`` any label strings in the file are ignored and
    documents come back unlabeled (useful for vocabulary building and
    prediction inputs).
    """
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                raise DataError(f"{path}:{lineno}: blank line in dataset")
            try:
                raw = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
            if not isinstance(raw, dict):
                raise DataError(f"{path}:{lineno}: line is not a JSON object")
            doc_id = raw.get("id")
            text = raw.get("text")
            if not isinstance(doc_id, str) or not doc_id:
                raise DataError(f"{path}:{lineno}: missing or empty 'id'")
            if not isinstance(text, str):
                raise DataError(f"{path}:{lineno}: missing 'text'")
            if doc_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {doc_id!r}")
            seen.add(doc_id)
            label: int | None = None
            if labels is not None and raw.get("label") is not None:
                raw_label = raw["label"]
                if not isinstance(raw_label, str):
                    raise DataError(f"{path}:{lineno}: 'label' must be a string")
                label = labels.index_of(raw_label)
            docs.append(Document(id=doc_id, text=text, label=label))
    return docs


def stratified_split(
    docs: list[Document],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitDataset:
    """Per-class seeded shuffle, then floor/floor/remainder assignment.

    Within each class the documents are ordered by id, permuted by a
    Fisher-Yates shuffle on a splitmix64 stream seeded with ``seed``,
    and assigned floor(n*r_train) to train, floor(n*r_val) to
    validation, remainder to test. Classes are processed in ascending
    index order on a single generator stream, so membership is a pure
    function of (ids, labels, ratios, seed).
    """
    if not docs:
        raise DataError("cannot split an empty dataset")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    for doc in docs:
        if doc.label is None:
            raise DataError(f"document {doc.id!r} is unlabeled; cannot stratify")

    by_class: dict[int, list[Document]] = {}
    for doc in docs:
        by_class.setdefault(doc.label, []).append(doc)

    rng = SplitMix64(seed)
    train: list[Document] = []
    validation: list[Document] = []
    test: list[Document] = []
    for cls in sorted(by_class):
        members = sorted(by_class[cls], key=lambda d: d.id)
        rng.shuffle(members)
        n = len(members)
        n_train = math.floor(n * ratios[0])
        n_val = math.floor(n * ratios[1])
        train.extend(members[:n_train])
        validation.extend(members[n_train:n_train + n_val])
        test.extend(members[n_train + n_val:])

    return SplitDataset(
        train=tuple(train),
        validation=tuple(validation),
        test=tuple(test),
        seed=seed,
        ratios=tuple(ratios),
    )


def label_distribution(docs: list[Document], labels: LabelSet) -> list[int]:
    """Count documents per class, in label-set order."""
    counts = [0] * labels.size
    for doc in docs:
        if doc.label is None:
            raise DataError(f"document {doc.id!r} is unlabeled")
        if not 0 <= doc.label < labels.size:
            raise DataError(
                f"document {doc.id!r} has class index {doc.label} "
                f"outside the {labels.size}-class label set"
            )
        counts[doc.label] += 1
    return counts


def save_dataset(docs: list[Document], labels: LabelSet | None, path: str | Path) -> None:
    """Write documents back out in the dataset JSONL format."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            record: dict = {"id": doc.id, "text": doc.text}
            if doc.label is not None and labels is not None:
                record["label"] = labels.labels[doc.label]
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
