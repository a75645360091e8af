"""Inverted index with BM25 scoring.

The index is built once from a document stream and is read-only afterwards;
concurrent retrieval is safe. Tokenization is the same at index and query
time: lowercase, split on any non-alphanumeric character, no stemming,
optional stopword removal (off by default).

BM25 uses the shifted idf ln((N - df + 0.5)/(df + 0.5) + 1), which is
strictly positive even for terms in more than half the collection, so scores
are always non-negative.

An index persists to a directory of JSON files plus a manifest carrying the
statistics and tokenizer configuration (manifest.json, format_version 1).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import DuplicateDocno, MissingField, ParseError, UnknownDocno
from .frame import Frame, SemType, assign_ranks
from .transformer import Signature, TERMINAL, Transformer

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

FORMAT_VERSION = 1


class Tokenizer:
    __slots__ = ("stopwords",)

    def __init__(self, stopwords: Iterable[str] = ()) -> None:
        self.stopwords = frozenset(w.lower() for w in stopwords)

    def tokenize(self, text: str) -> list[str]:
        tokens = _TOKEN_RE.findall(text.lower())
        if self.stopwords:
            tokens = [t for t in tokens if t not in self.stopwords]
        return tokens

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tokenizer):
            return NotImplemented
        return self.stopwords == other.stopwords

    def __hash__(self) -> int:
        return hash(self.stopwords)


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


class InvertedIndex:
    """Term postings over the `text` field plus verbatim stored fields.

    Postings are parallel (doc_ids, tfs) lists with doc_ids ascending, so
    per-document tf lookup is a binary search. Doc ids are dense 0..N-1 in
    ingestion order.
    """

    def __init__(self, tokenizer: Tokenizer | None = None,
                 stored_fields: Sequence[str] = ("text",)) -> None:
        self.tokenizer = tokenizer or Tokenizer()
        self.stored_fields = tuple(stored_fields)
        self._postings: dict[str, tuple[list[int], list[int]]] = {}
        self._doclens: list[int] = []
        self._docnos: list[str] = []
        self._ids: dict[str, int] = {}
        self._stored: list[dict[str, str]] = []
        self._fingerprint: str | None = None

    # -- statistics -------------------------------------------------------

    @property
    def n_docs(self) -> int:
        return len(self._docnos)

    @property
    def avgdl(self) -> float:
        if not self._doclens:
            return 0.0
        return sum(self._doclens) / len(self._doclens)

    @property
    def n_terms(self) -> int:
        return len(self._postings)

    def df(self, term: str) -> int:
        entry = self._postings.get(term)
        return len(entry[0]) if entry else 0

    def doclen(self, doc_id: int) -> int:
        return self._doclens[doc_id]

    def postings(self, term: str) -> tuple[list[int], list[int]]:
        """(doc_ids, tfs) for a term; empty lists when unseen."""
        return self._postings.get(term, ([], []))

    # -- document identity --------------------------------------------------

    def docno(self, doc_id: int) -> str:
        return self._docnos[doc_id]

    def doc_id(self, docno: str) -> int:
        try:
            return self._ids[docno]
        except KeyError:
            raise UnknownDocno(docno) from None

    def has_docno(self, docno: str) -> bool:
        return docno in self._ids

    def stored(self, doc_id: int) -> dict[str, str]:
        return self._stored[doc_id]

    # -- construction (single writer, used by index_corpus only) ------------

    def _add(self, docno: str, text: str, row: dict) -> None:
        if docno in self._ids:
            raise DuplicateDocno(docno)
        doc_id = len(self._docnos)
        self._ids[docno] = doc_id
        self._docnos.append(docno)
        tokens = self.tokenizer.tokenize(text)
        self._doclens.append(len(tokens))
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        for term, tf in counts.items():
            entry = self._postings.get(term)
            if entry is None:
                entry = ([], [])
                self._postings[term] = entry
            entry[0].append(doc_id)
            entry[1].append(tf)
        self._stored.append(
            {f: str(row.get(f, "")) for f in self.stored_fields}
        )
        self._fingerprint = None

    # -- identity for structural pipeline equality --------------------------

    def fingerprint(self) -> str:
        """Content hash; two indexes over identical corpora and configs get
        the same fingerprint, so retrievers built on them compare equal."""
        if self._fingerprint is None:
            h = hashlib.sha256()
            h.update(json.dumps({
                "stopwords": sorted(self.tokenizer.stopwords),
                "stored_fields": list(self.stored_fields),
                "docnos": self._docnos,
                "doclens": self._doclens,
                "postings": {t: [p[0], p[1]] for t, p in sorted(self._postings.items())},
                "stored": self._stored,
            }, sort_keys=True, ensure_ascii=True).encode())
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    # -- persistence --------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": FORMAT_VERSION,
            "n_docs": self.n_docs,
            "n_terms": self.n_terms,
            "avgdl": self.avgdl,
            "stored_fields": list(self.stored_fields),
            "stopwords": sorted(self.tokenizer.stopwords),
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
        (d / "docnos.json").write_text(json.dumps(self._docnos))
        (d / "doclens.json").write_text(json.dumps(self._doclens))
        (d / "stored.json").write_text(json.dumps(self._stored))
        postings = {t: [p[0], p[1]] for t, p in self._postings.items()}
        (d / "postings.json").write_text(json.dumps(postings))

    @classmethod
    def load(cls, directory: str | Path) -> "InvertedIndex":
        d = Path(directory)
        manifest_path = d / "manifest.json"
        if not manifest_path.exists():
            raise ParseError(f"not an index directory (no manifest.json): {d}")
        manifest = json.loads(manifest_path.read_text())
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise ParseError(
                f"unsupported index format_version {version!r} in {manifest_path}"
            )
        idx = cls(
            tokenizer=Tokenizer(manifest.get("stopwords", ())),
            stored_fields=manifest.get("stored_fields", ["text"]),
        )
        idx._docnos = json.loads((d / "docnos.json").read_text())
        idx._doclens = json.loads((d / "doclens.json").read_text())
        idx._stored = json.loads((d / "stored.json").read_text())
        idx._ids = {docno: i for i, docno in enumerate(idx._docnos)}
        raw = json.loads((d / "postings.json").read_text())
        idx._postings = {t: (pair[0], pair[1]) for t, pair in raw.items()}
        return idx


def index_corpus(
    docs: Iterable[dict],
    fields_to_store: Sequence[str] = ("text",),
    tokenizer: Tokenizer | None = None,
) -> InvertedIndex:
    """Build an index from a document row stream in one pass.

    Each row needs docno and text; requested fields are stored verbatim for
    later re-attachment (absent optional fields store as empty strings).
    An empty stream yields an empty, still-valid index.
    """
    idx = InvertedIndex(tokenizer=tokenizer, stored_fields=fields_to_store)
    for row in docs:
        if "docno" not in row:
            raise MissingField("docno", "corpus document")
        if "text" not in row:
            raise MissingField("text", f"corpus document {row['docno']!r}")
        idx._add(str(row["docno"]), str(row["text"]), row)
    return idx


def bm25_score(
    index: InvertedIndex,
    query_terms: Sequence[str],
    doc_id: int,
    params: BM25Params = BM25Params(),
) -> float:
    """Sum of per-term BM25 contributions for one document.

    Repeated query terms contribute once per occurrence. Terms absent from
    the lexicon or from the document contribute nothing. The summation order
    is the query term order, which the retriever reproduces exactly, so both
    paths produce bit-identical scores.
    """
    n = index.n_docs
    avgdl = index.avgdl
    dl = index.doclen(doc_id)
    k1, b = params.k1, params.b
    score = 0.0
    for term in query_terms:
        doc_ids, tfs = index.postings(term)
        if not doc_ids:
            continue
        pos = bisect_left(doc_ids, doc_id)
        if pos == len(doc_ids) or doc_ids[pos] != doc_id:
            continue
        tf = tfs[pos]
        df = len(doc_ids)
        idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
        score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * (dl / avgdl)))
    return score


class BM25Retriever(Transformer):
    """Q -> R transformer scoring every document that contains at least one
    query term, keeping the top num_results by (score desc, docno asc)."""

    def __init__(
        self,
        index: InvertedIndex,
        params: BM25Params | None = None,
        num_results: int = 1000,
        include_fields: Sequence[str] = (),
    ) -> None:
        params = params or BM25Params()
        super().__init__(
            Signature(SemType.Q, SemType.R),
            "bm25",
            params=(
                ("k1", params.k1),
                ("b", params.b),
                ("num_results", num_results),
                ("include_fields", tuple(include_fields)),
                ("index", index.fingerprint()),
            ),
        )
        self.index = index
        self.bm25 = params
        self.num_results = num_results
        self.include_fields = tuple(include_fields)

    def apply(self, frame: Frame) -> Frame:
        idx = self.index
        n = idx.n_docs
        avgdl = idx.avgdl
        k1, b = self.bm25.k1, self.bm25.b
        out_rows: list[dict] = []
        for row in frame.rows:
            terms = idx.tokenizer.tokenize(row["query"])
            acc: dict[int, float] = {}
            # term-at-a-time accumulation; per document the additions happen
            # in query term order, matching bm25_score's summation exactly
            for term in terms:
                doc_ids, tfs = idx.postings(term)
                if not doc_ids:
                    continue
                df = len(doc_ids)
                idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
                for doc_id, tf in zip(doc_ids, tfs):
                    dl = idx.doclen(doc_id)
                    contrib = idf * (tf * (k1 + 1.0)) / (
                        tf + k1 * (1.0 - b + b * (dl / avgdl))
                    )
                    acc[doc_id] = acc.get(doc_id, 0.0) + contrib
            ranked = sorted(
                acc.items(), key=lambda item: (-item[1], idx.docno(item[0]))
            )[: self.num_results]
            for rank, (doc_id, score) in enumerate(ranked):
                out = {
                    "qid": row["qid"],
                    "docno": idx.docno(doc_id),
                    "score": score,
                    "rank": rank,
                    "query": row["query"],
                }
                if self.include_fields:
                    stored = idx.stored(doc_id)
                    for f in self.include_fields:
                        out[f] = stored.get(f, "")
                out_rows.append(out)
        return Frame(SemType.R, out_rows)


def bm25_retriever(
    index: InvertedIndex,
    params: BM25Params | None = None,
    num_results: int = 1000,
    include_fields: Sequence[str] = (),
) -> BM25Retriever:
    return BM25Retriever(index, params, num_results, include_fields)


class TextAttacher(Transformer):
    """R -> R transformer adding stored fields to result rows by docno."""

    def __init__(self, index: InvertedIndex, fields: Sequence[str]) -> None:
        super().__init__(
            Signature(SemType.R, SemType.R),
            "attach_text",
            params=(
                ("fields", tuple(fields)),
                ("index", index.fingerprint()),
            ),
        )
        self.index = index
        self.fields = tuple(fields)

    def apply(self, frame: Frame) -> Frame:
        rows = []
        for row in frame.rows:
            stored = self.index.stored(self.index.doc_id(row["docno"]))
            merged = dict(row)
            for f in self.fields:
                merged[f] = stored.get(f, "")
            rows.append(merged)
        return Frame(SemType.R, rows)


def attach_text(index: InvertedIndex, fields: Sequence[str]) -> TextAttacher:
    return TextAttacher(index, fields)


class Indexer(Transformer):
    """D -> Terminal transformer; consumes a document frame and leaves the
    built index on `self.index`. The one transformer with write-on-apply
    state, so build each instance in a single task."""

    def __init__(self, fields_to_store: Sequence[str] = ("text",),
                 tokenizer: Tokenizer | None = None) -> None:
        super().__init__(
            Signature(SemType.D, TERMINAL),
            "indexer",
            params=(("fields_to_store", tuple(fields_to_store)),),
        )
        self.fields_to_store = tuple(fields_to_store)
        self.tokenizer = tokenizer
        self.index: InvertedIndex | None = None

    def apply(self, frame: Frame) -> Frame:
        self.index = index_corpus(
            frame.rows, self.fields_to_store, self.tokenizer
        )
        return Frame(None, ())


def indexer(fields_to_store: Sequence[str] = ("text",),
            tokenizer: Tokenizer | None = None) -> Indexer:
    return Indexer(fields_to_store, tokenizer)
