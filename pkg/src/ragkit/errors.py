"""Exception types shared across the package.

Every error raised by ragkit derives from RagkitError so callers can catch
the whole family with one clause. Frame-shape problems derive from
ValidationError.
"""

from __future__ import annotations


class RagkitError(Exception):
    """Base class for all ragkit errors."""


class ValidationError(RagkitError):
    """A frame violates its schema or key invariants."""


class MissingColumn(ValidationError):
    def __init__(self, column: str, context: str = ""):
        self.column = column
        msg = f"missing required column {column!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class DuplicateKey(ValidationError):
    def __init__(self, key, context: str = ""):
        self.key = key
        msg = f"duplicate primary key {key!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class RankViolation(ValidationError):
    def __init__(self, qid: str, detail: str):
        self.qid = qid
        super().__init__(f"rank invariant violated for qid {qid!r}: {detail}")


class KindMismatch(ValidationError):
    def __init__(self, detail: str):
        super().__init__(detail)


class TypeMismatch(RagkitError):
    """Pipeline composition error: a transformer's output type does not
    match the next transformer's input type."""

    def __init__(self, expected, actual, path: str = ""):
        self.expected = expected
        self.actual = actual
        self.path = path
        loc = f" at {path}" if path else ""
        super().__init__(f"type mismatch{loc}: expected {expected}, got {actual}")


class InvalidK(RagkitError):
    def __init__(self, k):
        self.k = k
        super().__init__(f"rank cutoff requires k > 0, got {k!r}")


class PipelineError(RagkitError):
    """A transformer failed during pipeline execution; carries the subtree path."""

    def __init__(self, path: str, cause: Exception):
        self.path = path
        self.cause = cause
        super().__init__(f"error at {path or '<root>'}: {cause}")


class DuplicateDocno(RagkitError):
    def __init__(self, docno: str):
        self.docno = docno
        super().__init__(f"duplicate docno {docno!r} in corpus")


class UnknownDocno(RagkitError):
    def __init__(self, docno: str):
        self.docno = docno
        super().__init__(f"docno {docno!r} not present in index")


class MissingField(RagkitError):
    def __init__(self, field: str, context: str = ""):
        self.field = field
        msg = f"missing field {field!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class TemplateError(RagkitError):
    pass


class BackendError(RagkitError):
    def __init__(self, message: str, qid: str | None = None, status: int | None = None):
        self.qid = qid
        self.status = status
        if qid is not None:
            message = f"{message} (qid={qid})"
        super().__init__(message)


class ParseError(RagkitError):
    """Malformed data file (JSONL corpus/topics/answers, run file, registry)."""

    def __init__(self, message: str, source: str = "", line: int | None = None):
        self.source = source
        self.line = line
        loc = source
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)


class ExprError(RagkitError):
    """Pipeline expression syntax or stage error; carries a byte offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"at offset {offset}: {message}")


class EmptyGold(ValidationError):
    def __init__(self, qid: str = ""):
        self.qid = qid
        super().__init__(f"empty gold answer list{f' for qid {qid!r}' if qid else ''}")


class MissingGold(RagkitError):
    def __init__(self, qid: str):
        self.qid = qid
        super().__init__(f"no gold answers for topic qid {qid!r}")


class LengthMismatch(RagkitError):
    def __init__(self, na: int, nb: int):
        super().__init__(f"paired samples differ in length: {na} vs {nb}")


class TooFewSamples(RagkitError):
    def __init__(self, n: int):
        super().__init__(f"need at least 2 paired samples, got {n}")


class MissingSplit(RagkitError):
    def __init__(self, dataset: str, kind: str, split: str, available):
        self.dataset = dataset
        self.split = split
        super().__init__(
            f"dataset {dataset!r} has no {kind} split {split!r} "
            f"(available: {sorted(available) or 'none'})"
        )


class UnknownDataset(RagkitError):
    def __init__(self, name: str, available):
        self.name = name
        super().__init__(
            f"unknown dataset {name!r} (registered: {sorted(available) or 'none'})"
        )
