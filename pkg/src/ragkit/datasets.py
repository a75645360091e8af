"""File ingestion and interop: JSONL corpora, topics and gold answers, TREC
run files, and a small dataset registry.

Corpora stream one JSON object per line (docno and text required, extras
preserved), so indexing a large file never holds it in memory. Topics carry
qid and query; answer files carry qid and a non-empty answers list. Run
files use the classic six-column format "qid Q0 docno rank score tag" with
scores at six decimal places.
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path
from typing import Iterator, Sequence

from .errors import (
    EmptyGold,
    MissingField,
    MissingSplit,
    ParseError,
    UnknownDataset,
)
from .frame import Frame, SemType, validate


def _jsonl_records(path: str | Path) -> Iterator[tuple[int, dict]]:
    p = Path(path)
    if not p.exists():
        raise ParseError("file not found", source=str(p))
    with p.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), source=str(p), line=lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("line is not a JSON object", source=str(p), line=lineno)
            yield lineno, obj


def load_corpus(paths: str | Path | Sequence[str | Path]) -> Iterator[dict]:
    """Stream document rows from one or more JSONL files, in file order.

    Yields plain dicts with docno and text as strings plus any extra fields
    verbatim. Duplicate docnos are caught downstream at indexing time; this
    stays a constant-memory pass.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    for path in paths:
        for lineno, obj in _jsonl_records(path):
            where = f"{path}:{lineno}"
            if "docno" not in obj:
                raise MissingField("docno", where)
            if "text" not in obj:
                raise MissingField("text", where)
            row = dict(obj)
            row["docno"] = str(row["docno"])
            row["text"] = str(row["text"])
            yield row


def load_topics(path: str | Path, split: str = "") -> Frame:
    """Read a qid/query JSONL file into a Q frame."""
    rows = []
    label = f" ({split})" if split else ""
    for lineno, obj in _jsonl_records(path):
        where = f"{path}:{lineno}{label}"
        if "qid" not in obj:
            raise MissingField("qid", where)
        if "query" not in obj:
            raise MissingField("query", where)
        rows.append({"qid": str(obj["qid"]), "query": str(obj["query"])})
    frame = Frame(SemType.Q, rows)
    validate(frame, SemType.Q)
    return frame


def load_answers(path: str | Path) -> Frame:
    """Read a qid/answers JSONL file into a GA frame (one row per qid, the
    answers list kept verbatim)."""
    rows = []
    for lineno, obj in _jsonl_records(path):
        where = f"{path}:{lineno}"
        if "qid" not in obj:
            raise MissingField("qid", where)
        if "answers" not in obj:
            raise MissingField("answers", where)
        answers = obj["answers"]
        if not isinstance(answers, list) or not answers:
            raise EmptyGold(str(obj["qid"]))
        rows.append({"qid": str(obj["qid"]), "ganswer": [str(a) for a in answers]})
    frame = Frame(SemType.GA, rows)
    validate(frame, SemType.GA)
    return frame


# -- run files ----------------------------------------------------------------


def write_run(frame: Frame, path: str | Path, tag: str = "run") -> None:
    """Write an R frame as six-column run lines, rows ordered by (qid, rank),
    scores fixed at six decimal places."""
    validate(frame, SemType.R)
    rows = sorted(frame.rows, key=lambda r: (r["qid"], r["rank"]))
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(
                f"{r['qid']} Q0 {r['docno']} {r['rank']} {r['score']:.6f} {tag}\n"
            )


def run_lines(frame: Frame, tag: str = "run") -> list[str]:
    """The write_run lines without touching the filesystem (CLI output)."""
    validate(frame, SemType.R)
    rows = sorted(frame.rows, key=lambda r: (r["qid"], r["rank"]))
    return [
        f"{r['qid']} Q0 {r['docno']} {r['rank']} {r['score']:.6f} {tag}"
        for r in rows
    ]


def read_run(path: str | Path) -> Frame:
    """Parse a six-column run file back into an R frame."""
    rows = []
    p = Path(path)
    if not p.exists():
        raise ParseError("file not found", source=str(p))
    with p.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(
                    f"expected 6 columns, got {len(parts)}",
                    source=str(p), line=lineno,
                )
            qid, _q0, docno, rank, score, _tag = parts
            try:
                rows.append({
                    "qid": qid,
                    "docno": docno,
                    "rank": int(rank),
                    "score": float(score),
                })
            except ValueError as exc:
                raise ParseError(str(exc), source=str(p), line=lineno) from None
    frame = Frame(SemType.R, rows)
    validate(frame, SemType.R)
    return frame


# -- dataset registry ----------------------------------------------------------


class DatasetRegistry:
    """Named datasets resolved from a small INI manifest.

    One section per dataset; keys are `corpus` (whitespace-separated JSONL
    paths), `topics.<split>` and `answers.<split>`. Paths are relative to
    the manifest file. A split that is not listed is a lookup error, never
    silently empty, mirroring collections that ship dev but no test split.

        [nq_mini]
        corpus = corpus.jsonl
        topics.dev = topics_dev.jsonl
        answers.dev = answers_dev.jsonl
    """

    def __init__(self, entries: dict[str, dict[str, Path]]) -> None:
        self._entries = entries

    @classmethod
    def load(cls, manifest_path: str | Path) -> "DatasetRegistry":
        p = Path(manifest_path)
        if not p.exists():
            raise ParseError("file not found", source=str(p))
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
        except configparser.Error as exc:
            raise ParseError(str(exc), source=str(p)) from None
        base = p.parent
        entries: dict[str, dict] = {}
        for section in parser.sections():
            spec: dict = {"corpus": [], "topics": {}, "answers": {}}
            for key, value in parser.items(section):
                if key == "corpus":
                    spec["corpus"] = [base / v for v in value.split()]
                elif key.startswith("topics."):
                    spec["topics"][key.split(".", 1)[1]] = base / value.strip()
                elif key.startswith("answers."):
                    spec["answers"][key.split(".", 1)[1]] = base / value.strip()
                else:
                    raise ParseError(
                        f"unknown registry key {key!r} in [{section}]",
                        source=str(p),
                    )
            entries[section] = spec
        return cls(entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def _entry(self, name: str) -> dict:
        try:
            return self._entries[name]
        except KeyError:
            raise UnknownDataset(name, self._entries) from None

    def splits(self, name: str) -> list[str]:
        return sorted(self._entry(name)["topics"])

    def corpus_paths(self, name: str) -> list[Path]:
        return list(self._entry(name)["corpus"])

    def get_corpus(self, name: str) -> Iterator[dict]:
        return load_corpus(self.corpus_paths(name))

    def topics_path(self, name: str, split: str) -> Path:
        entry = self._entry(name)
        if split not in entry["topics"]:
            raise MissingSplit(name, "topics", split, entry["topics"])
        return entry["topics"][split]

    def answers_path(self, name: str, split: str) -> Path:
        entry = self._entry(name)
        if split not in entry["answers"]:
            raise MissingSplit(name, "answers", split, entry["answers"])
        return entry["answers"][split]

    def get_topics(self, name: str, split: str) -> Frame:
        return load_topics(self.topics_path(name, split), split)

    def get_answers(self, name: str, split: str) -> Frame:
        return load_answers(self.answers_path(name, split))


# -- converters -----------------------------------------------------------------
#
# One-shot converters for corpora and QA files in the widely used
# id/contents and id/question/golden_answers JSONL layout.


def convert_qa_corpus(src: str | Path, dst: str | Path) -> int:
    """Convert an id/contents corpus file to docno/text JSONL; returns the
    number of documents written. Extra fields are preserved."""
    count = 0
    with Path(dst).open("w", encoding="utf-8") as out:
        for lineno, obj in _jsonl_records(src):
            where = f"{src}:{lineno}"
            if "id" not in obj:
                raise MissingField("id", where)
            if "contents" not in obj:
                raise MissingField("contents", where)
            row = {k: v for k, v in obj.items() if k not in ("id", "contents")}
            row["docno"] = str(obj["id"])
            row["text"] = str(obj["contents"])
            out.write(json.dumps(row, ensure_ascii=False) + "\n")
            count += 1
    return count


def convert_qa_topics(
    src: str | Path, topics_dst: str | Path, answers_dst: str | Path
) -> int:
    """Split an id/question/golden_answers QA file into a topics file and an
    answers file; returns the number of topics written."""
    count = 0
    with Path(topics_dst).open("w", encoding="utf-8") as topics_out, \
            Path(answers_dst).open("w", encoding="utf-8") as answers_out:
        for lineno, obj in _jsonl_records(src):
            where = f"{src}:{lineno}"
            for field in ("id", "question", "golden_answers"):
                if field not in obj:
                    raise MissingField(field, where)
            answers = obj["golden_answers"]
            if not isinstance(answers, list) or not answers:
                raise EmptyGold(str(obj["id"]))
            topics_out.write(json.dumps(
                {"qid": str(obj["id"]), "query": str(obj["question"])},
                ensure_ascii=False) + "\n")
            answers_out.write(json.dumps(
                {"qid": str(obj["id"]), "answers": [str(a) for a in answers]},
                ensure_ascii=False) + "\n")
            count += 1
    return count
