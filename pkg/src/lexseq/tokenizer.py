"""Text -> token -> id pipeline with a frequency-capped vocabulary.

Token ids 0 and 1 are reserved (PAD and OOV); real tokens get
contiguous ids starting at 2, ordered by descending training-stream
frequency with ties broken by first occurrence.
"""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError

PAD_ID = 0
OOV_ID = 1

# Punctuation kept inside a token when flanked by digits on both sides,
# so citation numbers like 8.112/90 survive as single tokens.
_DIGIT_BRIDGE = {".", "/", "-"}

_VOCAB_MAGIC = "#vocab v1"


@dataclass(frozen=True)
class TokenizerConfig:
    max_sequence_length: int = 1000
    vocabulary_cap: int = 100_000
    lowercase: bool = True

    def __post_init__(self):
        if self.max_sequence_length < 1:
            raise ValueError("max_sequence_length must be >= 1")
        if self.vocabulary_cap < 1:
            raise ValueError("vocabulary_cap must be >= 1")


def tokenize(text: str, config: TokenizerConfig = TokenizerConfig()) -> list[str]:
    """Split text into tokens: maximal runs of letters and digits.

    The text is NFC-normalized first and lowercased when configured.
    ``.``, ``/`` and ``-`` stay inside a token only when the adjacent
    characters are both digits; every other character separates tokens.
    """
    text = unicodedata.normalize("NFC", text)
    if config.lowercase:
        text = text.lower()
    tokens: list[str] = []
    current: list[str] = []
    n = len(text)
    for i, ch in enumerate(text):
        if ch.isalpha() or ch.isdigit():
            current.append(ch)
        elif (
            ch in _DIGIT_BRIDGE
            and i > 0
            and i + 1 < n
            and text[i - 1].isdigit()
            and text[i + 1].isdigit()
        ):
            current.append(ch)
        else:
            if current:
                tokens.append("".join(current))
                current = []
    if current:
        tokens.append("".join(current))
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Frequency-ranked token table. Entry k has id k + 2."""

    entries: tuple[tuple[str, int], ...]
    cap: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.entries) > self.cap:
            raise ValueError("vocabulary exceeds its cap")
        index = {}
        prev_freq = None
        for pos, (token, freq) in enumerate(self.entries):
            if not token:
                raise ValueError("empty token in vocabulary")
            if any(ch.isspace() for ch in token):
                raise ValueError(f"token {token!r} contains whitespace")
            if token in index:
                raise ValueError(f"duplicate token {token!r} in vocabulary")
            if prev_freq is not None and freq > prev_freq:
                raise ValueError("vocabulary frequencies must be non-increasing")
            prev_freq = freq
            index[token] = pos + 2
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.entries)

    def id_of(self, token: str) -> int:
        """Token id, or OOV_ID for tokens outside the vocabulary."""
        return self._index.get(token, OOV_ID)

    def token_for_id(self, token_id: int) -> str:
        if not 2 <= token_id < 2 + len(self.entries):
            raise ValueError(f"id {token_id} is reserved or out of range")
        return self.entries[token_id - 2][0]

    @property
    def id_count(self) -> int:
        """Total id space including PAD and OOV."""
        return len(self.entries) + 2

    def digest(self) -> str:
        """SHA-256 over the canonical file rendering; checkpoints pin this."""
        return hashlib.sha256(_render(self).encode("utf-8")).hexdigest()


def build_vocabulary(token_stream: Iterable[str], cap: int = 100_000) -> Vocabulary:
    """Count the stream and keep the ``cap`` most frequent tokens.

    Ties are broken by first occurrence in the stream; kept order
    defines the id assignment. The stream is consumed once.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for pos, token in enumerate(token_stream):
        if token in counts:
            counts[token] += 1
        else:
            counts[token] = 1
            first_seen[token] = pos
    if not counts:
        raise DataError("cannot build a vocabulary from an empty token stream")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))[:cap]
    return Vocabulary(entries=tuple((t, counts[t]) for t in ranked), cap=cap)


@dataclass(frozen=True)
class EncodedSequence:
    """Fixed-capacity id vector; positions beyond ``length`` are PAD."""

    ids: np.ndarray
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= self.ids.shape[0]:
            raise ValueError("length out of range for the id buffer")
        if not np.all(self.ids[:self.length] >= 1):
            raise ValueError("PAD id inside the non-PAD prefix")
        if not np.all(self.ids[self.length:] == PAD_ID):
            raise ValueError("non-PAD id in the padded tail")


def encode(
    tokens: list[str],
    vocab: Vocabulary,
    config: TokenizerConfig = TokenizerConfig(),
) -> EncodedSequence:
    """Map tokens to ids, truncate to the configured window, post-pad."""
    max_len = config.max_sequence_length
    ids = np.zeros(max_len, dtype=np.int64)
    length = min(len(tokens), max_len)
    for i in range(length):
        ids[i] = vocab.id_of(tokens[i])
    return EncodedSequence(ids=ids, length=length)


def encode_text(
    text: str,
    vocab: Vocabulary,
    config: TokenizerConfig = TokenizerConfig(),
) -> EncodedSequence:
    return encode(tokenize(text, config), vocab, config)


def _render(vocab: Vocabulary) -> str:
    lines = [f"{_VOCAB_MAGIC} size={len(vocab.entries)} cap={vocab.cap}"]
    for pos, (token, freq) in enumerate(vocab.entries):
        lines.append(f"{token}\t{pos + 2}\t{freq}")
    return "\n".join(lines) + "\n"


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(_render(vocab), encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    """Parse a vocabulary file; load(save(v)) == v including ids."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#vocab "):
        raise DataError(f"{path}: not a vocabulary file")
    header = lines[0]
    if not header.startswith(_VOCAB_MAGIC + " "):
        raise DataError(f"{path}: unsupported vocabulary version: {header!r}")
    fields = dict(
        part.split("=", 1) for part in header[len(_VOCAB_MAGIC):].split() if "=" in part
    )
    try:
        size = int(fields["size"])
        cap = int(fields["cap"])
    except (KeyError, ValueError):
        raise DataError(f"{path}: malformed vocabulary header: {header!r}") from None

    entries: list[tuple[str, int]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected token<TAB>id<TAB>frequency")
        token, id_str, freq_str = parts
        try:
            token_id = int(id_str)
            freq = int(freq_str)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer id or frequency") from None
        if token in seen:
            raise DataError(f"{path}:{lineno}: duplicate token {token!r}")
        seen.add(token)
        expected = len(entries) + 2
        if token_id != expected:
            raise DataError(
                f"{path}:{lineno}: non-contiguous id {token_id} (expected {expected})"
            )
        entries.append((token, freq))
    if len(entries) != size:
        raise DataError(
            f"{path}: header declares size={size} but file has {len(entries)} rows"
        )
    try:
        return Vocabulary(entries=tuple(entries), cap=cap)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def iter_tokens(
    texts: Iterable[str], config: TokenizerConfig = TokenizerConfig()
) -> Iterator[str]:
    """Flat token stream over many texts, for vocabulary building."""
    for text in texts:
        yield from tokenize(text, config)
