import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frag.corpus import Element
from frag.encoder import FormatError, init_model
from frag.features import FeaturizerConfig
from frag.retrieval import (
    Bm25Index,
    DenseIndex,
    DenseRetriever,
    EmptyIndexError,
    FingerprintError,
    UnknownDocError,
    dense_build,
    idf,
    rank,
    unit_norm_ok,
)

TWO = [Element("step", "a"), Element("step", "b")]
TWO_TEXTS = ["look up incident", "create incident task"]


def bm25_oracle(docs, query, k1=1.2, b=0.75):
    """Scores written out term by term from the textbook formula."""
    toks = [d.split() for d in docs]
    n = len(toks)
    avgdl = sum(len(t) for t in toks) / n
    out = []
    for t in toks:
        s = 0.0
        for term in query.split():
            df = sum(term in u for u in toks)
            if df == 0:
                continue
            f = t.count(term)
            s += math.log(1 + (n - df + 0.5) / (df + 0.5)) * f * (k1 + 1) / (f + k1 * (1 - b + b * len(t) / avgdl))
        out.append(s)
    return out


def test_document_frequencies_example():
    index = Bm25Index(TWO, texts=TWO_TEXTS)
    assert index.df[index.vocab["incident"]] == 2
    assert index.df[index.vocab["task"]] == 1
    assert index.avgdl == 3.0
    assert idf(2, 1) == pytest.approx(math.log(1 + 1.5 / 1.5))


def test_single_document_avgdl():
    index = Bm25Index(TWO[:1], texts=["one two three"])
    assert index.avgdl == 3.0


@pytest.mark.parametrize("query", ["incident task", "look up", "create create incident", "nothing here"])
def test_scores_match_hand_formula(query):
    index = Bm25Index(TWO, texts=TWO_TEXTS)
    for doc_id, expected in enumerate(bm25_oracle(TWO_TEXTS, query)):
        assert abs(index.score(query, doc_id) - expected) <= 1e-9


def test_query_header_is_stripped():
    index = Bm25Index(TWO, texts=["represent this searching", "incident"])
    q = "Represent this requirement for searching relevant steps:\nrequirement: incident"
    assert index.topk(q, 1)[0].element.name == "b"
    assert index.score(q, 0) == 0.0


def test_bm25_errors():
    with pytest.raises(EmptyIndexError):
        Bm25Index([])
    with pytest.raises(UnknownDocError):
        Bm25Index(TWO, texts=TWO_TEXTS).score("x", 5)


@given(st.lists(st.sampled_from([0.0, 0.5, 1.0, 2.0]), min_size=1, max_size=30), st.integers(1, 40))
def test_rank_equals_full_sort(scores, k):
    elements = [Element("step", f"s{i:02d}") for i in range(len(scores))]
    hits = rank(elements, np.asarray(scores), k)
    expected = sorted(range(len(scores)), key=lambda i: (-scores[i], elements[i].name))[:k]
    assert [h.element for h in hits] == [elements[i] for i in expected]


def test_rank_kind_filter():
    elements = [Element("step", "s"), Element("table", "t"), Element("step", "u")]
    hits = rank(elements, np.array([0.1, 0.9, 0.5]), 5, kind="step")
    assert [h.element.name for h in hits] == ["u", "s"]
    assert rank(elements, np.array([0.1, 0.9, 0.5]), 5, kind="field") == []
    with pytest.raises(ValueError):
        rank(elements, np.zeros(3), 0)


@pytest.fixture(scope="module")
def small_model():
    return init_model(FeaturizerConfig(hash_dim=256), embed_dim=8, seed=1)


ELEMENTS = [Element("step", n, scope="global") for n in ("look_up_records", "update_record", "send_email")] + [
    Element("table", "incident", scope="global"), Element("field", "state", parent="incident")]


def test_dense_index_round_trip(tmp_path, small_model):
    index = dense_build(small_model, ELEMENTS)
    assert unit_norm_ok(index.vectors)
    index.save(tmp_path / "dev.fragix")
    back = DenseIndex.load(tmp_path / "dev.fragix")
    assert back.elements == index.elements and np.array_equal(back.vectors, index.vectors)
    assert back.fingerprint == small_model.fingerprint()
    retriever = DenseRetriever(small_model, back)
    hits = retriever.topk("send an email", 2, kind="step")
    assert len(hits) == 2 and all(h.element.kind == "step" for h in hits)
    assert retriever.topk_many(["send an email"], 2, kind="step") == [hits]


def test_dense_index_rejects_other_encoder(small_model):
    index = dense_build(small_model, ELEMENTS)
    other = init_model(FeaturizerConfig(hash_dim=256), embed_dim=8, seed=2)
    with pytest.raises(FingerprintError):
        DenseRetriever(other, index)


def test_dense_index_corrupt_file(tmp_path, small_model):
    path = tmp_path / "x.fragix"
    dense_build(small_model, ELEMENTS).save(path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        DenseIndex.load(path)
    path.write_bytes(b"NOTIDX" + raw[6:])
    with pytest.raises(FormatError):
        DenseIndex.load(path)
