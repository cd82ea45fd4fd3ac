"""Exception types shared across the toolkit.

The split matters for the CLI exit-code mapping: bad input data (files,
records, checkpoints) is distinct from numeric/runtime failures.
"""


class LexseqError(Exception):
    """Base class for all toolkit errors."""


class DataError(LexseqError):
    """Malformed or inconsistent input data: dataset lines, vocabulary
    files, checkpoints, page manifests."""


class NumericError(LexseqError):
    """Non-finite values or numeric contract violations during
    training or inference."""


class OcrError(LexseqError):
    """External OCR command failed; carries the child process diagnostic."""
