import math

import pytest

from ragkit.errors import DuplicateDocno, MissingField, ParseError, UnknownDocno
from ragkit.frame import Frame, SemType
from ragkit.index import (
    BM25Params,
    BM25Retriever,
    InvertedIndex,
    Tokenizer,
    attach_text,
    bm25_retriever,
    bm25_score,
    index_corpus,
    indexer,
)
from ragkit.transformer import run


class TestTokenizer:
    def test_lowercase_and_split_on_non_alphanumeric(self):
        t = Tokenizer()
        assert t.tokenize("The Quick-Brown FOX!") == ["the", "quick", "brown", "fox"]
        assert t.tokenize("a_b c2d") == ["a", "b", "c2d"]
        assert t.tokenize("") == []
        assert t.tokenize("...") == []

    def test_stopword_removal(self):
        t = Tokenizer(stopwords=["THE", "of"])
        assert t.tokenize("The capital of France") == ["capital", "france"]

    def test_equality(self):
        assert Tokenizer(["a"]) == Tokenizer(["A"])
        assert Tokenizer(["a"]) != Tokenizer()


class TestBM25Params:
    def test_defaults(self):
        p = BM25Params()
        assert (p.k1, p.b) == (1.2, 0.75)

    def test_validation(self):
        with pytest.raises(ValueError):
            BM25Params(k1=-0.1)
        with pytest.raises(ValueError):
            BM25Params(b=1.5)
        BM25Params(k1=0.0, b=0.0)
        BM25Params(b=1.0)


class TestIndexConstruction:
    def test_statistics(self, small_index):
        idx = small_index
        assert idx.n_docs == 4
        assert idx.avgdl == sum(idx.doclen(i) for i in range(4)) / 4
        assert idx.df("the") == 4
        assert idx.df("paris") == 2
        assert idx.df("unseen") == 0
        assert idx.postings("unseen") == ([], [])
        doc_ids, tfs = idx.postings("paris")
        assert doc_ids == sorted(doc_ids)
        assert len(doc_ids) == len(tfs) == 2

    def test_docno_mapping(self, small_index):
        idx = small_index
        assert idx.doc_id("d3") == 2
        assert idx.docno(2) == "d3"
        assert idx.has_docno("d1") and not idx.has_docno("zz")
        with pytest.raises(UnknownDocno):
            idx.doc_id("zz")

    def test_stored_fields(self, small_index):
        stored = small_index.stored(0)
        assert stored["title"] == "Eiffel"
        assert stored["text"].startswith("the eiffel")

    def test_missing_optional_stored_field_becomes_empty(self):
        idx = index_corpus([{"docno": "d", "text": "x"}],
                           fields_to_store=("text", "title"))
        assert idx.stored(0) == {"text": "x", "title": ""}

    def test_duplicate_docno_rejected(self):
        with pytest.raises(DuplicateDocno):
            index_corpus([{"docno": "d", "text": "a"}, {"docno": "d", "text": "b"}])

    def test_required_fields(self):
        with pytest.raises(MissingField):
            index_corpus([{"text": "no docno"}])
        with pytest.raises(MissingField):
            index_corpus([{"docno": "d"}])

    def test_empty_corpus_is_valid(self):
        idx = index_corpus([])
        assert idx.n_docs == 0 and idx.avgdl == 0.0 and idx.n_terms == 0


class TestScoring:
    def test_single_document_constant(self):
        # one doc, dl == avgdl, tf = 1, df = 1:
        # idf = ln((1 - 1 + 0.5)/(1 + 0.5) + 1) = ln(4/3)
        # contrib = idf * (1 * 2.2) / (1 + 1.2 * 1.0) = idf
        idx = index_corpus([{"docno": "d1", "text": "hello world"}])
        got = bm25_score(idx, ["hello"], 0)
        assert got == 0.28768207245178085
        assert got == math.log(4.0 / 3.0)

    def test_two_document_length_normalization(self):
        idx = index_corpus([
            {"docno": "d1", "text": "apple pie"},
            {"docno": "d2", "text": "apple tart with extra flaky crust"},
        ])
        # N=2, df=2, tf=1, avgdl=4; shorter doc scores higher
        assert bm25_score(idx, ["apple"], 0) == 0.2292042428266858
        assert bm25_score(idx, ["apple"], 1) == 0.15136129243271704

    def test_absent_terms_contribute_nothing(self, small_index):
        assert bm25_score(small_index, ["zebra"], 0) == 0.0
        base = bm25_score(small_index, ["paris"], 0)
        assert bm25_score(small_index, ["paris", "zebra"], 0) == base

    def test_repeated_query_terms_add_once_per_occurrence(self, small_index):
        once = bm25_score(small_index, ["paris"], 0)
        twice = bm25_score(small_index, ["paris", "paris"], 0)
        assert twice == once + once

    def test_custom_params_change_scores(self, small_index):
        flat = bm25_score(small_index, ["paris"], 0, BM25Params(k1=0.0, b=0.0))
        # k1 = 0 reduces the contribution to the bare idf
        assert flat == math.log((4 - 2 + 0.5) / (2 + 0.5) + 1.0)


class TestRetriever:
    def test_ranking_and_schema(self, small_index):
        r = bm25_retriever(small_index)
        out = run(r, Frame(SemType.Q, [{"qid": "q1", "query": "capital of france"}]))
        assert out.semtype is SemType.R
        assert out.rows[0]["docno"] == "d3"
        assert [x["rank"] for x in out.rows] == list(range(len(out)))
        assert all(x["query"] == "capital of france" for x in out.rows)
        scores = [x["score"] for x in out.rows]
        assert scores == sorted(scores, reverse=True)

    def test_matches_bm25_score_bit_for_bit(self, small_index):
        r = bm25_retriever(small_index)
        query = "the capital of paris"
        out = run(r, Frame(SemType.Q, [{"qid": "q1", "query": query}]))
        terms = small_index.tokenizer.tokenize(query)
        for row in out.rows:
            doc_id = small_index.doc_id(row["docno"])
            assert row["score"] == bm25_score(small_index, terms, doc_id)

    def test_tie_broken_by_docno(self):
        idx = index_corpus([
            {"docno": "db", "text": "same words here"},
            {"docno": "da", "text": "same words here"},
        ])
        out = run(bm25_retriever(idx),
                  Frame(SemType.Q, [{"qid": "q", "query": "same"}]))
        assert [x["docno"] for x in out.rows] == ["da", "db"]

    def test_num_results_truncates(self, small_index):
        r = bm25_retriever(small_index, num_results=1)
        out = run(r, Frame(SemType.Q, [{"qid": "q", "query": "the"}]))
        assert len(out) == 1

    def test_include_fields(self, small_index):
        r = bm25_retriever(small_index, include_fields=("text", "title"))
        out = run(r, Frame(SemType.Q, [{"qid": "q", "query": "rome"}]))
        assert out.rows[0]["title"] == "Rome"
        assert "colosseum" in out.rows[0]["text"]

    def test_no_match_yields_empty_result(self, small_index):
        out = run(bm25_retriever(small_index),
                  Frame(SemType.Q, [{"qid": "q", "query": "zzz qqq"}]))
        assert len(out) == 0

    def test_query_with_no_tokens(self, small_index):
        out = run(bm25_retriever(small_index),
                  Frame(SemType.Q, [{"qid": "q", "query": "!!!"}]))
        assert len(out) == 0


class TestPersistence:
    def test_save_load_round_trip(self, small_index, tmp_path):
        small_index.save(tmp_path / "idx")
        loaded = InvertedIndex.load(tmp_path / "idx")
        assert loaded.n_docs == small_index.n_docs
        assert loaded.avgdl == small_index.avgdl
        assert loaded.n_terms == small_index.n_terms
        assert loaded.fingerprint() == small_index.fingerprint()
        q = Frame(SemType.Q, [{"qid": "q", "query": "capital of france"}])
        assert run(bm25_retriever(loaded), q) == run(bm25_retriever(small_index), q)

    def test_retrievers_over_equal_indexes_compare_equal(self, small_index, tmp_path):
        small_index.save(tmp_path / "idx")
        loaded = InvertedIndex.load(tmp_path / "idx")
        assert bm25_retriever(loaded) == bm25_retriever(small_index)
        assert bm25_retriever(loaded, num_results=5) != bm25_retriever(small_index)

    def test_fingerprint_depends_on_content_and_config(self):
        a = index_corpus([{"docno": "d", "text": "x y"}])
        b = index_corpus([{"docno": "d", "text": "x y"}])
        c = index_corpus([{"docno": "d", "text": "x z"}])
        d = index_corpus([{"docno": "d", "text": "x y"}], tokenizer=Tokenizer(["y"]))
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()
        assert a.fingerprint() != d.fingerprint()

    def test_load_rejects_non_index_dirs(self, tmp_path):
        with pytest.raises(ParseError):
            InvertedIndex.load(tmp_path)

    def test_load_rejects_unknown_format_version(self, small_index, tmp_path):
        small_index.save(tmp_path / "idx")
        manifest = tmp_path / "idx" / "manifest.json"
        manifest.write_text(manifest.read_text().replace(
            '"format_version": 1', '"format_version": 99'))
        with pytest.raises(ParseError):
            InvertedIndex.load(tmp_path / "idx")


class TestAttachAndIndexer:
    def test_attach_text(self, small_index):
        att = attach_text(small_index, fields=("text", "title"))
        frame = Frame(SemType.R, [
            {"qid": "q", "docno": "d2", "score": 1.0, "rank": 0}])
        out = run(att, frame)
        assert out.rows[0]["title"] == "Berlin"
        assert out.rows[0]["score"] == 1.0

    def test_attach_unknown_docno(self, small_index):
        att = attach_text(small_index, fields=("text",))
        frame = Frame(SemType.R, [
            {"qid": "q", "docno": "nope", "score": 1.0, "rank": 0}])
        with pytest.raises(Exception) as err:
            run(att, frame)
        assert isinstance(err.value.cause, UnknownDocno)

    def test_indexer_is_terminal_and_builds_equal_index(self, small_index):
        docs = Frame(SemType.D, [
            {"docno": "d1", "text": "the eiffel tower is in paris", "title": "Eiffel"},
            {"docno": "d2", "text": "berlin is the capital of germany", "title": "Berlin"},
            {"docno": "d3", "text": "paris is the capital of france", "title": "Paris"},
            {"docno": "d4", "text": "the colosseum is in rome italy", "title": "Rome"},
        ])
        ix = indexer(fields_to_store=("text", "title"))
        out = run(ix, docs)
        assert len(out) == 0
        assert ix.index.fingerprint() == small_index.fingerprint()
